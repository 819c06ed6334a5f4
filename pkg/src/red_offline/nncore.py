"""Tiny float64 MLPs with manual backprop and a grouped Adam optimizer.

Networks carry an explicit backbone/head split (by default the final linear
layer is the head) so two-stage finetuning can freeze heads bitwise and scale
the backbone learning rate. Everything is float64 and purely numpy, which
keeps runs bitwise reproducible for a fixed seed and batch stream.
"""

from dataclasses import dataclass, field

import numpy as np

from .io_envelope import EnvelopeError, read_envelope, write_envelope

CKPT_MAGIC = b"ORCK"
CKPT_VERSION = 1

_ACTIVATIONS = ("relu", "tanh")


class Mlp:
    """Stack of linear layers with relu/tanh on hidden layers, identity output.

    ``split_point`` is the index of the first head layer; layers below it are
    the backbone. ``version`` increments on every parameter update and is used
    to detect stale forward caches.
    """

    def __init__(self, weights, biases, activation: str, split_point: int | None = None,
                 init_seed: int = 0):
        if activation not in _ACTIVATIONS:
            raise ValueError(f"activation must be one of {_ACTIVATIONS}")
        if len(weights) != len(biases) or not weights:
            raise ValueError("weights and biases must be non-empty and aligned")
        for i in range(len(weights) - 1):
            if weights[i].shape[1] != weights[i + 1].shape[0]:
                raise ValueError(
                    f"layer {i} output dim {weights[i].shape[1]} does not chain into "
                    f"layer {i + 1} input dim {weights[i + 1].shape[0]}")
        for w, b in zip(weights, biases):
            if b.shape != (w.shape[1],):
                raise ValueError("bias shape must match layer output dim")
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.activation = activation
        self.split_point = len(weights) - 1 if split_point is None else int(split_point)
        if not 0 < self.split_point <= len(weights) - 1 and len(weights) > 1:
            raise ValueError(f"split_point {split_point} out of range")
        self.init_seed = int(init_seed)
        self.version = 0

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def layer_sizes(self) -> list:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def head_params(self):
        """Flat copy of head parameters, for bitwise freeze checks."""
        parts = []
        for i in range(self.split_point, self.n_layers):
            parts.append(self.weights[i].ravel().copy())
            parts.append(self.biases[i].ravel().copy())
        return np.concatenate(parts)

    def copy(self) -> "Mlp":
        net = Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                  self.activation, self.split_point, self.init_seed)
        return net

    def copy_from(self, other: "Mlp") -> None:
        """In-place parameter copy (target-network sync)."""
        for w, ow in zip(self.weights, other.weights):
            w[...] = ow
        for b, ob in zip(self.biases, other.biases):
            b[...] = ob
        self.version += 1


def init_mlp(layer_sizes, activation: str = "relu", seed: int = 0,
             split_point: int | None = None) -> Mlp:
    """Uniform fan-in initialization: W, b ~ U(-1/sqrt(fan_in), +1/sqrt(fan_in))."""
    if len(layer_sizes) < 2:
        raise ValueError("need at least an input and an output size")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for d_in, d_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = 1.0 / np.sqrt(d_in)
        weights.append(rng.uniform(-bound, bound, size=(d_in, d_out)))
        biases.append(rng.uniform(-bound, bound, size=d_out))
    return Mlp(weights, biases, activation, split_point, init_seed=seed)


def forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    """Plain forward pass on a (batch, in_dim) array."""
    y, _ = forward_cache(net, x)
    return y


def forward_cache(net: Mlp, x: np.ndarray):
    """Forward pass that also returns the cache needed by :func:`backward`."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ValueError(f"input shape {x.shape} does not match (batch, {net.in_dim})")
    inputs = [x]  # activation entering each layer
    pre = []      # pre-activation leaving each layer
    h = x
    last = net.n_layers - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w + b
        pre.append(z)
        if i < last:
            h = np.tanh(z) if net.activation == "tanh" else np.maximum(z, 0.0)
            inputs.append(h)
        else:
            h = z
    cache = {"inputs": inputs, "pre": pre, "version": net.version}
    return h, cache


def backward(net: Mlp, cache: dict, grad_out: np.ndarray):
    """Exact reverse-mode gradients of the forward map.

    Returns (grads, grad_input) with grads a list of (dW, db) per layer.
    The cache must come from a forward pass at the current parameter version.
    """
    if cache["version"] != net.version:
        raise ValueError("stale forward cache: parameters changed since the forward pass")
    g = np.asarray(grad_out, dtype=np.float64)
    inputs, pre = cache["inputs"], cache["pre"]
    if g.shape != pre[-1].shape:
        raise ValueError(f"grad_out shape {g.shape} does not match output {pre[-1].shape}")
    grads = [None] * net.n_layers
    for i in range(net.n_layers - 1, -1, -1):
        if i < net.n_layers - 1:
            if net.activation == "tanh":
                g = g * (1.0 - np.tanh(pre[i]) ** 2)
            else:
                g = g * (pre[i] > 0.0)
        grads[i] = (inputs[i].T @ g, g.sum(axis=0))
        g = g @ net.weights[i].T
    return grads, g


@dataclass
class OptimState:
    """Adam accumulators with a per-group learning-rate multiplier.

    The backbone group (layers below the net's split point) steps with
    ``lr * backbone_mult``; head layers step with ``lr``.
    """

    lr: float
    backbone_mult: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if self.lr < 0 or self.backbone_mult < 0:
            raise ValueError("learning rate and multipliers must be >= 0")


def init_optim(net: Mlp, lr: float, backbone_mult: float = 1.0) -> OptimState:
    opt = OptimState(lr=lr, backbone_mult=backbone_mult)
    opt.m = [(np.zeros_like(w), np.zeros_like(b)) for w, b in zip(net.weights, net.biases)]
    opt.v = [(np.zeros_like(w), np.zeros_like(b)) for w, b in zip(net.weights, net.biases)]
    return opt


def apply_update(net: Mlp, grads, opt: OptimState, freeze_head: bool = False) -> None:
    """One Adam step per parameter group.

    With ``freeze_head`` the head layers are left bitwise untouched and their
    moments are not advanced. The step size scales linearly in the effective
    learning rate, so a backbone multiplier of 0.1 scales the first backbone
    step by exactly 0.1.
    """
    if len(grads) != net.n_layers:
        raise ValueError("gradient list does not match layer count")
    opt.step += 1
    t = opt.step
    bc1 = 1.0 - opt.beta1 ** t
    bc2 = 1.0 - opt.beta2 ** t
    for i in range(net.n_layers):
        is_head = i >= net.split_point
        if freeze_head and is_head:
            continue
        step_size = opt.lr * (1.0 if is_head else opt.backbone_mult)
        for p, g, m, v in ((net.weights[i], grads[i][0], opt.m[i][0], opt.v[i][0]),
                           (net.biases[i], grads[i][1], opt.m[i][1], opt.v[i][1])):
            m *= opt.beta1
            m += (1.0 - opt.beta1) * g
            v *= opt.beta2
            v += (1.0 - opt.beta2) * g * g
            p -= step_size * (m / bc1) / (np.sqrt(v / bc2) + opt.eps)
    net.version += 1


def numeric_gradients(net: Mlp, x: np.ndarray, grad_out: np.ndarray, eps: float = 1e-5):
    """Central-difference gradients of J = sum(forward(x) * grad_out).

    Independent of :func:`backward`; used to validate it.
    """
    def objective():
        y, _ = forward_cache(net, x)
        return float((y * grad_out).sum())

    grads = []
    for w, b in zip(net.weights, net.biases):
        pair = []
        for p in (w, b):
            g = np.zeros_like(p)
            flat = p.ravel()
            gflat = g.ravel()
            for k in range(flat.size):
                orig = flat[k]
                flat[k] = orig + eps
                up = objective()
                flat[k] = orig - eps
                down = objective()
                flat[k] = orig
                gflat[k] = (up - down) / (2.0 * eps)
            pair.append(g)
        grads.append(tuple(pair))
    return grads


def max_relative_gradient_error(analytic, numeric) -> float:
    """max |a - n| / max(1, |a|, |n|) over all parameters."""
    worst = 0.0
    for (aw, ab), (nw, nb) in zip(analytic, numeric):
        for a, n in ((aw, nw), (ab, nb)):
            denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
            worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst


def save_checkpoint(path, nets: dict, extra: dict | None = None) -> None:
    """Write named networks into one envelope file for stage handoffs."""
    order = sorted(nets)
    header_nets = {}
    payload = []
    for name in order:
        net = nets[name]
        header_nets[name] = {
            "layer_sizes": net.layer_sizes,
            "activation": net.activation,
            "split_point": net.split_point,
            "seed": net.init_seed,
        }
        for w, b in zip(net.weights, net.biases):
            payload.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
            payload.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    header = {"nets": header_nets, "order": order, "extra": extra or {}}
    write_envelope(path, CKPT_MAGIC, CKPT_VERSION, header, b"".join(payload))


def load_checkpoint(path):
    """Read back (nets, extra); raises EnvelopeError on malformed files."""
    _, header, payload = read_envelope(path, CKPT_MAGIC, CKPT_VERSION)
    try:
        order = list(header["order"])
        specs = header["nets"]
    except (KeyError, TypeError) as exc:
        raise EnvelopeError(f"{path}: checkpoint header malformed: {exc}") from exc
    nets = {}
    offset = 0
    for name in order:
        spec = specs[name]
        sizes = [int(s) for s in spec["layer_sizes"]]
        weights, biases = [], []
        for d_in, d_out in zip(sizes[:-1], sizes[1:]):
            wbytes = d_in * d_out * 8
            if offset + wbytes + d_out * 8 > len(payload):
                raise EnvelopeError(f"{path}: payload truncated inside net {name!r}")
            weights.append(np.frombuffer(payload, dtype="<f8", count=d_in * d_out,
                                         offset=offset).reshape(d_in, d_out).copy())
            offset += wbytes
            biases.append(np.frombuffer(payload, dtype="<f8", count=d_out,
                                        offset=offset).copy())
            offset += d_out * 8
        nets[name] = Mlp(weights, biases, spec["activation"],
                         int(spec["split_point"]), init_seed=int(spec.get("seed", 0)))
    if offset != len(payload):
        raise EnvelopeError(f"{path}: {len(payload) - offset} trailing payload bytes")
    return nets, dict(header.get("extra", {}))
