import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bbo.mlp import MLP, Adam, AdamState, adam_step, glorot_init
from bbo.numerics import Rng
from oracles import central_diff, rel_err


def test_zero_network_outputs_zero():
    net = MLP((3, 5, 2))
    np.testing.assert_array_equal(net.forward(np.array([1.0, -2.0, 3.0])), [0.0, 0.0])


def test_single_affine_layer():
    net = MLP((1, 1), params=np.array([2.0, 1.0]))
    np.testing.assert_allclose(net.forward(np.array([3.0])), [7.0])


def test_relu_net_matches_scalar_evaluation():
    sizes = (2, 16, 1)
    p = glorot_init(sizes, Rng(0)) + 0.1 * Rng(1).normal(sum(i * o + o for i, o in zip(sizes[:-1], sizes[1:])))
    net = MLP(sizes, "relu", p)
    x = [0.3, -0.7]
    w1 = p[:32].reshape(2, 16)
    b1 = p[32:48]
    w2 = p[48:64]
    b2 = p[64]
    hidden = [max(0.0, sum(x[i] * w1[i, j] for i in range(2)) + b1[j]) for j in range(16)]
    expect = sum(h * w for h, w in zip(hidden, w2)) + b2
    assert net.forward(np.array(x))[0] == pytest.approx(expect, rel=1e-12)


def test_linear_net_gradient_is_input():
    net = MLP((3, 1), "identity", np.array([0.5, -1.0, 2.0, 0.0]))
    x = np.array([1.0, 2.0, 3.0])
    val, g = net.value_and_grad(x)
    assert val == pytest.approx(0.5 - 2.0 + 6.0)
    np.testing.assert_array_equal(g[:3], x)
    assert g[3] == 1.0


def test_zero_input_relu_first_layer_grad_zero():
    sizes = (3, 4, 1)
    net = MLP(sizes, "relu", glorot_init(sizes, Rng(2)))
    _, g = net.value_and_grad(np.zeros(3))
    np.testing.assert_array_equal(g[:12], 0.0)


def _fd_check(sizes, act, seed, h=1e-6, n_coords=None):
    """Max relative error of the analytic gradient on ``n_coords`` random coordinates (all if None)."""
    rng = Rng(seed)
    p = glorot_init(sizes, rng) + 0.1 * rng.normal(MLP(sizes).n_params)
    net = MLP(sizes, act, p)
    x = rng.normal(sizes[0])
    _, g = net.value_and_grad(x)
    idx = np.arange(p.size) if n_coords is None else rng.choice(p.size, n_coords, p=None)
    fd = np.empty(len(idx))
    for k, i in enumerate(idx):
        e = np.zeros_like(p)
        e[i] = h
        fd[k] = (net.forward(x, p + e)[0] - net.forward(x, p - e)[0]) / (2 * h)
    return rel_err(g[idx], fd, floor=1e-6)


def test_tanh_gradient_matches_fd():
    assert _fd_check((2, 8, 1), "tanh", 0) < 1e-4


@pytest.mark.parametrize("sizes,act", [((2, 256, 1), "relu"), ((2, 256, 1), "tanh"), ((3, 256, 256, 1), "relu"), ((3, 256, 256, 1), "tanh")])
def test_experiment_architectures_gradcheck(sizes, act):
    # relu kinks make FD unreliable only when a pre-activation sits within h of 0
    worst = [_fd_check(sizes, act, seed, n_coords=60) for seed in range(100)]
    assert max(worst) < 1e-4


def test_batch_jacobian_matches_per_sample():
    sizes = (2, 6, 1)
    net = MLP(sizes, "tanh", glorot_init(sizes, Rng(3)))
    x = Rng(4).normal((5, 2))
    vals, jac = net.batch_value_and_jacobian(x)
    for i in range(5):
        v, g = net.value_and_grad(x[i])
        assert vals[i] == pytest.approx(v)
        np.testing.assert_allclose(jac[i], g)


def test_hvp_matches_fd_of_gradient():
    sizes = (2, 5, 1)
    p = glorot_init(sizes, Rng(5))
    net = MLP(sizes, "tanh", p)
    x = Rng(6).normal((4, 2))
    vec = Rng(7).normal(net.n_params)

    def grad_sum(q):
        out, cache = net.forward_cache(x, q)
        return net.backward(cache, np.ones_like(out))

    h = central_diff(lambda q: grad_sum(q) @ vec, p, 1e-5)
    np.testing.assert_allclose(net.hessian_vector_product(x, vec), h, atol=1e-6)


def test_stacked_params_match_individual():
    sizes = (3, 4, 2)
    stack = np.stack([glorot_init(sizes, Rng(s)) for s in range(3)])
    net = MLP(sizes, "relu", stack)
    x = Rng(9).normal((3, 7, 3))
    out = net.forward(x)
    for l in range(3):
        np.testing.assert_allclose(out[l], MLP(sizes, "relu", stack[l]).forward(x[l]))


def test_dimension_mismatch_raises():
    with pytest.raises(ValueError):
        MLP((3, 1)).forward(np.ones(2))
    with pytest.raises(ValueError):
        MLP((3, 1), params=np.ones(3))


def test_forward_is_pure():
    sizes = (2, 4, 1)
    net = MLP(sizes, "relu", glorot_init(sizes, Rng(0)))
    x = np.array([0.1, 0.2])
    np.testing.assert_array_equal(net.forward(x), net.forward(x))


def test_adam_zero_grad_keeps_params():
    p = np.array([1.0, -2.0])
    st0 = AdamState(np.array([0.5, 0.5]), np.array([0.1, 0.1]), 3)
    new, st1 = adam_step(p, np.zeros(2), st0, 0.1)
    np.testing.assert_allclose(new, p - 0.1 * (st1.m / (1 - 0.9**4)) / (np.sqrt(st1.v / (1 - 0.999**4)) + 1e-8))
    np.testing.assert_allclose(st1.m, 0.9 * st0.m)
    assert st1.t == 4
    fresh, _ = adam_step(p, np.zeros(2), AdamState.zeros_like(p), 0.1)
    np.testing.assert_array_equal(fresh, p)


def test_adam_first_step_is_signed_lr():
    g = np.array([3.0, -1e-3, 50.0])
    new, st1 = adam_step(np.zeros(3), g, AdamState.zeros_like(g), 0.01)
    np.testing.assert_allclose(new, -0.01 * np.sign(g), rtol=1e-4)
    assert st1.t == 1


def test_adam_converges_on_quadratic():
    opt = Adam(0.1)
    w = np.array([1.0, 1.0])
    for _ in range(100):
        w = opt.step(w, 2 * w)
    assert np.linalg.norm(w) < 0.05


def test_adam_rejects_non_finite():
    with pytest.raises(FloatingPointError):
        adam_step(np.zeros(2), np.array([np.nan, 0.0]), AdamState.zeros_like(np.zeros(2)), 0.1)


@settings(max_examples=20, deadline=None)
@given(c=st.floats(-1e3, 1e3), seed=st.integers(0, 1000))
def test_adam_invariant_to_loss_constant(c, seed):
    # f and f + c share gradients, so trajectories coincide
    rng = np.random.default_rng(seed)
    target = rng.normal(size=3)

    def run(const):
        w, st0 = np.zeros(3), AdamState.zeros_like(np.zeros(3))
        for _ in range(10):
            grad = central_diff(lambda q: np.sum((q - target) ** 2) + const, w, 1e-4)
            w, st0 = adam_step(w, np.round(grad, 6), st0, 0.05)
        return w

    np.testing.assert_allclose(run(0.0), run(c), atol=1e-6)


def test_glorot_init_properties():
    sizes = (2, 256, 1)
    p = glorot_init(sizes, Rng(0))
    net = MLP(sizes, params=p)
    (w1, b1), (w2, b2) = net.unflatten(p)
    assert np.all(b1 == 0) and np.all(b2 == 0)
    assert np.max(np.abs(w1)) <= np.sqrt(6 / 258) and np.max(np.abs(w2)) <= np.sqrt(6 / 257)
    assert abs(np.concatenate([w1.ravel(), w2.ravel()]).mean()) < 0.01
    np.testing.assert_array_equal(p, glorot_init(sizes, Rng(0)))


def test_checkpoint_roundtrip(tmp_path):
    sizes = (3, 4, 1)
    stack = np.stack([glorot_init(sizes, Rng(s)) for s in range(2)])
    for net in (MLP(sizes, "tanh", stack[0]), MLP(sizes, "relu", stack)):
        net.save(tmp_path / "n.bin")
        back = MLP.load(tmp_path / "n.bin")
        assert back.sizes == net.sizes and back.activation == net.activation
        np.testing.assert_array_equal(back.params, net.params)
    raw = (tmp_path / "n.bin").read_bytes()
    assert raw[:8] == b"BBOMLP01"
    with pytest.raises(ValueError):
        MLP.from_bytes(b"garbage!" + raw[8:])
