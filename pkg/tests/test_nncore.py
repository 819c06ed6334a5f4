import numpy as np
import pytest

from red_offline.io_envelope import EnvelopeError
from red_offline.nncore import (Mlp, apply_update, backward, forward, forward_cache,
                                init_mlp, init_optim, load_checkpoint,
                                max_relative_gradient_error, numeric_gradients,
                                save_checkpoint)


def reference_forward(net, x):
    # independent straightforward re-implementation
    h = np.array(x, dtype=float)
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = np.zeros((h.shape[0], w.shape[1]))
        for r in range(h.shape[0]):
            for c in range(w.shape[1]):
                z[r, c] = float(np.dot(h[r], w[:, c])) + b[c]
        if i < net.n_layers - 1:
            z = np.tanh(z) if net.activation == "tanh" else np.where(z > 0, z, 0.0)
        h = z
    return h


def test_zero_network_returns_zero():
    net = Mlp([np.zeros((3, 4)), np.zeros((4, 2))], [np.zeros(4), np.zeros(2)], "relu")
    out = forward(net, np.random.default_rng(0).random((5, 3)))
    assert np.array_equal(out, np.zeros((5, 2)))


def test_identity_single_layer():
    net = Mlp([np.eye(3)], [np.zeros(3)], "relu")
    x = np.random.default_rng(1).normal(size=(4, 3))
    assert np.array_equal(forward(net, x), x)


@pytest.mark.parametrize("activation", ["relu", "tanh"])
def test_forward_matches_reference(activation):
    net = init_mlp([3, 8, 8, 2], activation, seed=5)
    x = np.random.default_rng(6).normal(size=(7, 3))
    assert np.allclose(forward(net, x), reference_forward(net, x), atol=1e-12, rtol=0)


def test_dimension_mismatch_rejected():
    net = init_mlp([3, 4, 2], seed=0)
    with pytest.raises(ValueError, match="input shape"):
        forward(net, np.zeros((5, 4)))
    with pytest.raises(ValueError):
        Mlp([np.zeros((3, 4)), np.zeros((5, 2))], [np.zeros(4), np.zeros(2)], "relu")


def test_linear_net_analytic_gradient():
    net = Mlp([np.zeros((3, 1))], [np.zeros(1)], "relu")
    x = np.array([[0.5, -1.5, 2.0]])
    _, cache = forward_cache(net, x)
    grads, gin = backward(net, cache, np.ones((1, 1)))
    assert np.allclose(grads[0][0][:, 0], x[0], atol=0)
    assert np.allclose(grads[0][1], [1.0])
    assert np.allclose(gin, net.weights[0].T)


@pytest.mark.parametrize("activation", ["relu", "tanh"])
def test_gradients_match_finite_differences(activation):
    rng = np.random.default_rng(9)
    for trial in range(3):
        sizes = [int(rng.integers(2, 5)), int(rng.integers(3, 9)), int(rng.integers(2, 4))]
        net = init_mlp(sizes, activation, seed=int(rng.integers(1 << 30)))
        x = rng.normal(size=(4, sizes[0]))
        gout = rng.normal(size=(4, sizes[-1]))
        _, cache = forward_cache(net, x)
        analytic, _ = backward(net, cache, gout)
        numeric = numeric_gradients(net, x, gout, eps=1e-5)
        assert max_relative_gradient_error(analytic, numeric) <= 1e-4


def test_stale_cache_rejected():
    net = init_mlp([2, 4, 1], seed=3)
    x = np.random.default_rng(0).random((3, 2))
    _, cache = forward_cache(net, x)
    opt = init_optim(net, 1e-3)
    grads, _ = backward(net, cache, np.ones((3, 1)))
    apply_update(net, grads, opt)
    with pytest.raises(ValueError, match="stale"):
        backward(net, cache, np.ones((3, 1)))


def _one_step(net, opt, x, gout, freeze_head=False):
    _, cache = forward_cache(net, x)
    grads, _ = backward(net, cache, gout)
    apply_update(net, grads, opt, freeze_head=freeze_head)
    return grads


def test_freeze_head_is_bitwise():
    net = init_mlp([2, 8, 8, 3], seed=11)
    opt = init_optim(net, 1e-2)
    x = np.random.default_rng(1).random((6, 2))
    gout = np.random.default_rng(2).normal(size=(6, 3))
    before_head = net.head_params()
    before_backbone = net.weights[0].copy()
    for _ in range(25):
        _one_step(net, opt, x, gout, freeze_head=True)
    assert np.array_equal(net.head_params(), before_head)
    assert not np.array_equal(net.weights[0], before_backbone)
    # frozen head moments never advanced
    assert np.array_equal(opt.m[net.split_point][0], np.zeros_like(opt.m[net.split_point][0]))


def test_backbone_multiplier_scales_first_step():
    x = np.random.default_rng(4).random((5, 2))
    gout = np.random.default_rng(5).normal(size=(5, 2))
    deltas = {}
    for mult in (1.0, 0.1):
        net = init_mlp([2, 6, 2], seed=21)
        w0 = net.weights[0].copy()
        opt = init_optim(net, 1e-3, backbone_mult=mult)
        _one_step(net, opt, x, gout)
        deltas[mult] = net.weights[0] - w0
    base, scaled = deltas[1.0], deltas[0.1]
    zero = base == 0
    assert np.array_equal(scaled == 0, zero)
    assert np.allclose(scaled[~zero] / base[~zero], 0.1, rtol=1e-12, atol=0)


def test_zero_gradients_leave_parameters_unchanged():
    net = init_mlp([2, 4, 2], seed=7)
    opt = init_optim(net, 1e-2)
    snap = [w.copy() for w in net.weights]
    grads = [(np.zeros_like(w), np.zeros_like(b)) for w, b in zip(net.weights, net.biases)]
    apply_update(net, grads, opt)
    for w, s in zip(net.weights, snap):
        assert np.array_equal(w, s)


def test_training_is_bitwise_deterministic():
    def run():
        net = init_mlp([3, 8, 2], seed=13)
        opt = init_optim(net, 3e-3)
        rng = np.random.default_rng(99)
        for _ in range(40):
            x = rng.normal(size=(8, 3))
            gout = rng.normal(size=(8, 2))
            _one_step(net, opt, x, gout)
        return net
    a, b = run(), run()
    for wa, wb in zip(a.weights, b.weights):
        assert np.array_equal(wa, wb)


def test_checkpoint_round_trip(tmp_path):
    nets = {"q": init_mlp([3, 8, 4], seed=1), "policy": init_mlp([3, 8, 2], "tanh", seed=2)}
    path = tmp_path / "ck.orck"
    save_checkpoint(path, nets, extra={"step": 123})
    loaded, extra = load_checkpoint(path)
    assert extra == {"step": 123}
    assert set(loaded) == {"q", "policy"}
    for name in nets:
        assert loaded[name].activation == nets[name].activation
        assert loaded[name].split_point == nets[name].split_point
        for wa, wb in zip(loaded[name].weights, nets[name].weights):
            assert np.array_equal(wa, wb)
        for ba, bb in zip(loaded[name].biases, nets[name].biases):
            assert np.array_equal(ba, bb)


def test_truncated_checkpoint_rejected(tmp_path):
    path = tmp_path / "ck.orck"
    save_checkpoint(path, {"q": init_mlp([3, 8, 4], seed=1)})
    raw = path.read_bytes()
    path.write_bytes(raw[:-16])
    with pytest.raises(EnvelopeError):
        load_checkpoint(path)


def test_default_split_is_last_layer():
    net = init_mlp([3, 8, 8, 2], seed=0)
    assert net.split_point == 2
    assert net.head_params().size == 8 * 2 + 2
