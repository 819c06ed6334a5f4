"""Discrete-action offline RL learners behind a common train-step interface.

Four families cover the usual constraint mechanisms: expectile value learning
with advantage-weighted extraction, conservative Q penalties, exponential
advantage-weighted regression, and Q-learning with a behavior-cloning term.
Each consumes batches produced by an injected sampler and never looks at the
sampler itself, so uniform and rebalanced training differ only in the stream
of batch indices.

TD targets use r + gamma * (1 - terminal) * bootstrap; horizon timeouts
bootstrap as non-terminal.
"""

from dataclasses import dataclass

import numpy as np

from .nncore import Mlp, apply_update, backward, forward, forward_cache, init_mlp, init_optim

FAMILIES = ("expectile_awr", "conservative_q", "exp_adv_regression", "q_plus_bc")


class NanLossError(RuntimeError):
    """Training produced a non-finite loss; carries a diagnostic payload."""

    def __init__(self, family: str, step: int, losses: dict):
        self.family = family
        self.step = step
        self.losses = losses
        super().__init__(f"non-finite loss in {family} at step {step}: {losses}")


@dataclass(frozen=True)
class AlgoConfig:
    """Hyperparameters shared across families; kept constant across sampler arms."""

    family: str = "expectile_awr"
    gamma: float = 0.99
    tau_expectile: float = 0.7
    beta_awr: float = 3.0
    w_max: float = 100.0
    cql_weight: float = 1.0
    bc_weight: float = 1.0
    bc_q_scale: float = 2.5      # TD3+BC style lambda numerator
    target_update_period: int = 100
    batch_size: int = 256
    total_steps: int = 20_000
    lr: float = 3e-4
    hidden_units: int = 64
    n_hidden_layers: int = 2     # three linear layers total
    activation: str = "relu"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}, expected one of {FAMILIES}")
        # gamma 0 is allowed: the TD target then degenerates to the reward
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")
        if not 0.0 < self.tau_expectile < 1.0:
            raise ValueError("tau_expectile must be in (0, 1)")
        if self.beta_awr <= 0 or self.w_max <= 0:
            raise ValueError("beta_awr and w_max must be > 0")
        if self.cql_weight < 0 or self.bc_weight < 0:
            raise ValueError("cql_weight and bc_weight must be >= 0")
        if min(self.target_update_period, self.batch_size, self.total_steps) < 1:
            raise ValueError("periods, batch size and step counts must be >= 1")


def expectile_loss(u, tau: float) -> float:
    """Mean asymmetric squared loss |tau - 1{u<0}| * u^2."""
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must be in (0, 1)")
    u = np.asarray(u, dtype=np.float64)
    w = np.where(u < 0, 1.0 - tau, tau)
    return float(np.mean(w * u * u))


def awr_weight(advantage, beta: float, w_max: float):
    """Clipped exponential advantage weight min(exp(adv / beta), w_max)."""
    if beta <= 0:
        raise ValueError("beta must be > 0")
    x = np.minimum(np.asarray(advantage, dtype=np.float64) / beta, 700.0)
    out = np.minimum(np.exp(x), w_max)
    return float(out) if out.ndim == 0 else out


def cql_penalty(q_row: np.ndarray, data_action: int) -> float:
    """logsumexp(q_row) - q_row[data_action], computed with a max shift."""
    q = np.asarray(q_row, dtype=np.float64)
    if not np.all(np.isfinite(q)):
        raise ValueError("q_row must be finite")
    m = q.max()
    return float(m + np.log(np.exp(q - m).sum()) - q[data_action])


@dataclass
class LearnerState:
    family: str
    nets: dict      # name -> Mlp       (always "q"; "v"/"policy" per family)
    targets: dict   # name -> Mlp       (hard copies)
    opts: dict      # name -> OptimState
    step: int = 0


def _net_seed(seed: int, idx: int) -> int:
    return (seed * 1_000_003 + idx) % (2 ** 63)


def init_learner(cfg: AlgoConfig, obs_dim: int, n_actions: int, seed: int,
                 backbone_mult: float = 1.0) -> LearnerState:
    """Fresh networks and optimizers for one run; fully determined by seed."""
    hidden = [cfg.hidden_units] * cfg.n_hidden_layers
    def make(out_dim, idx):
        return init_mlp([obs_dim] + hidden + [out_dim], cfg.activation,
                        seed=_net_seed(seed, idx))
    nets = {"q": make(n_actions, 0)}
    if cfg.family == "expectile_awr":
        nets["v"] = make(1, 1)
    if cfg.family in ("expectile_awr", "exp_adv_regression", "q_plus_bc"):
        nets["policy"] = make(n_actions, 2)
    targets = {"q": nets["q"].copy()}
    opts = {name: init_optim(net, cfg.lr, backbone_mult) for name, net in nets.items()}
    return LearnerState(family=cfg.family, nets=nets, targets=targets, opts=opts)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _logsumexp_rows(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=1)
    return m + np.log(np.exp(z - m[:, None]).sum(axis=1))


def train_step(state: LearnerState, cfg: AlgoConfig, batch: dict,
               freeze_head: bool = False) -> dict:
    """One gradient step on every net the family trains; returns the losses.

    Raises :class:`NanLossError` instead of silently continuing when any loss
    goes non-finite.
    """
    obs = batch["obs"]
    act = np.asarray(batch["action"], dtype=np.int64)
    rew = np.asarray(batch["reward"], dtype=np.float64)
    term = np.asarray(batch["terminal"], dtype=np.float64)
    nobs = batch["next_obs"]
    b = obs.shape[0]
    rows = np.arange(b)
    gamma = cfg.gamma
    boot = 1.0 - term
    q_net, q_target = state.nets["q"], state.targets["q"]
    losses: dict = {}
    pending = []  # (net name, net, forward cache, output gradient)

    q_all, q_cache = forward_cache(q_net, obs)
    q_sa = q_all[rows, act]

    if state.family == "expectile_awr":
        v_net, policy = state.nets["v"], state.nets["policy"]
        qt_sa = forward(q_target, obs)[rows, act]
        v_s, v_cache = forward_cache(v_net, obs)
        v_s = v_s[:, 0]
        u = qt_sa - v_s
        w_exp = np.where(u < 0, 1.0 - cfg.tau_expectile, cfg.tau_expectile)
        losses["v_loss"] = float(np.mean(w_exp * u * u))
        dv = (-2.0 * w_exp * u / b)[:, None]

        target = rew + gamma * boot * forward(v_net, nobs)[:, 0]
        td = q_sa - target
        losses["q_loss"] = float(np.mean(td * td))
        dq = np.zeros_like(q_all)
        dq[rows, act] = 2.0 * td / b

        w = awr_weight(u, cfg.beta_awr, cfg.w_max)
        logits, p_cache = forward_cache(policy, obs)
        probs = _softmax(logits)
        logp = logits - _logsumexp_rows(logits)[:, None]
        losses["policy_loss"] = float(-np.mean(w * logp[rows, act]))
        dlogits = w[:, None] * probs
        dlogits[rows, act] -= w
        dlogits /= b

        pending.append(("v", v_net, v_cache, dv))
        pending.append(("q", q_net, q_cache, dq))
        pending.append(("policy", policy, p_cache, dlogits))

    elif state.family == "conservative_q":
        target = rew + gamma * boot * forward(q_target, nobs).max(axis=1)
        td = q_sa - target
        losses["q_loss"] = float(np.mean(td * td))
        probs = _softmax(q_all)
        losses["cql_penalty"] = float(np.mean(_logsumexp_rows(q_all) - q_sa))
        dq = np.zeros_like(q_all)
        dq[rows, act] = 2.0 * td / b
        dq += cfg.cql_weight * probs / b
        dq[rows, act] -= cfg.cql_weight / b
        pending.append(("q", q_net, q_cache, dq))

    elif state.family == "exp_adv_regression":
        policy = state.nets["policy"]
        pi_next = _softmax(forward(policy, nobs))
        target = rew + gamma * boot * (pi_next * forward(q_target, nobs)).sum(axis=1)
        td = q_sa - target
        losses["q_loss"] = float(np.mean(td * td))
        dq = np.zeros_like(q_all)
        dq[rows, act] = 2.0 * td / b

        logits, p_cache = forward_cache(policy, obs)
        probs = _softmax(logits)
        adv = q_sa - (probs * q_all).sum(axis=1)
        w = awr_weight(adv, cfg.beta_awr, cfg.w_max)
        logp = logits - _logsumexp_rows(logits)[:, None]
        losses["policy_loss"] = float(-np.mean(w * logp[rows, act]))
        dlogits = w[:, None] * probs
        dlogits[rows, act] -= w
        dlogits /= b

        pending.append(("q", q_net, q_cache, dq))
        pending.append(("policy", policy, p_cache, dlogits))

    elif state.family == "q_plus_bc":
        policy = state.nets["policy"]
        target = rew + gamma * boot * forward(q_target, nobs).max(axis=1)
        td = q_sa - target
        losses["q_loss"] = float(np.mean(td * td))
        dq = np.zeros_like(q_all)
        dq[rows, act] = 2.0 * td / b

        logits, p_cache = forward_cache(policy, obs)
        probs = _softmax(logits)
        q_const = q_all  # critic treated as constant inside the policy loss
        q_pi = (probs * q_const).sum(axis=1)
        lam = cfg.bc_q_scale / (np.abs(q_pi).mean() + 1e-8)
        logp = logits - _logsumexp_rows(logits)[:, None]
        ce = float(-np.mean(logp[rows, act]))
        losses["policy_loss"] = float(-lam * q_pi.mean() + cfg.bc_weight * ce)
        dlogits = -lam * probs * (q_const - q_pi[:, None]) / b
        dlogits += cfg.bc_weight * probs / b
        dlogits[rows, act] -= cfg.bc_weight / b

        pending.append(("q", q_net, q_cache, dq))
        pending.append(("policy", policy, p_cache, dlogits))

    if not all(np.isfinite(v) for v in losses.values()):
        raise NanLossError(state.family, state.step, losses)

    for name, net, cache, grad_out in pending:
        grads, _ = backward(net, cache, grad_out)
        apply_update(state.nets[name], grads, state.opts[name], freeze_head=freeze_head)
    state.step += 1
    if state.step % cfg.target_update_period == 0:
        state.targets["q"].copy_from(q_net)
    return losses


def extract_policy(state: LearnerState):
    """Greedy evaluation policy: argmax logits (argmax Q for the pure Q family).

    Ties resolve to the lowest action index.
    """
    net = state.nets.get("policy", state.nets["q"])

    def policy_fn(obs_batch: np.ndarray) -> np.ndarray:
        return np.argmax(forward(net, obs_batch), axis=1)

    return policy_fn
