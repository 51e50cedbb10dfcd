import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import central_diff, rel_err
from ttc.autodiff import Graph
from ttc.critic import (AdamConfig, AdamState, CriticNet, _param_bindings, _param_inputs, adam_step, critic_input_gradient,
                        critic_minibatch_loss, estimate_w1, init_critic, input_gradient,
                        penalty_param_gradient, train_critic)
from ttc.tasks import sampler


def linear_critic(w, b=0.0):
    w = np.asarray(w, dtype=np.float64)
    return CriticNet([len(w), 1], [w[:, None]], [np.array([b])])


# -- input gradients

def test_input_gradient_linear():
    x = np.random.default_rng(0).normal(size=(4, 2))
    np.testing.assert_array_equal(critic_input_gradient(linear_critic([3.0, 4.0]), x),
                                  np.tile([3.0, 4.0], (4, 1)))


def test_input_gradient_half_square_norm():
    g = Graph()
    x = g.input("x")
    (gx,) = g.grad(g.scale(g.sum(g.square(x)), 0.5), [x])
    np.testing.assert_array_equal(g.evaluate({"x": np.array([[1.0, -2.0]])}, [gx])[0], [[1.0, -2.0]])


@pytest.mark.parametrize("activation", ["leaky_relu", "tanh"])
def test_input_gradient_matches_finite_differences(activation):
    critic = init_critic([3, 8, 8, 1], 5, activation)
    x = np.random.default_rng(1).normal(size=(6, 3))
    f = lambda z: float(critic(z).sum())
    assert rel_err([critic_input_gradient(critic, x)], central_diff(f, [x])) < 1e-5


def test_graph_and_numpy_gradients_agree():
    critic = init_critic([2, 16, 16, 1], 3)
    x = np.random.default_rng(2).normal(size=(10, 2))
    np.testing.assert_allclose(critic_input_gradient(critic, x), critic.grad_x(x), rtol=1e-13, atol=1e-15)


def test_input_gradient_dimension_mismatch():
    with pytest.raises(ValueError):
        critic_input_gradient(init_critic([2, 4, 1], 0), np.ones((3, 3)))


# -- gradient penalty

def test_penalty_linear_closed_form():
    p, (dw, db) = penalty_param_gradient(linear_critic([3.0, 4.0]), np.zeros((1, 2)), 1.0)
    assert p == pytest.approx(16.0, rel=1e-15)
    np.testing.assert_allclose(dw[:, 0], [4.8, 6.4], rtol=1e-14)
    assert db[0] == 0.0


def test_penalty_linear_matches_finite_differences():
    x = np.zeros((1, 2))

    def f(w):
        return penalty_param_gradient(linear_critic(w[:, 0]), x, 1.0)[0]

    _, (dw, _) = penalty_param_gradient(linear_critic([3.0, 4.0]), x, 1.0)
    assert rel_err([dw], central_diff(f, [np.array([[3.0], [4.0]])])) < 1e-8


def test_penalty_inactive_inside_unit_ball():
    p, grads = penalty_param_gradient(linear_critic([0.6, 0.8]), np.ones((3, 2)), 1000.0)
    assert p == 0.0
    assert all(np.all(gr == 0) for gr in grads)


@pytest.mark.parametrize("activation", ["leaky_relu", "tanh"])
def test_penalty_param_gradient_finite_differences(activation):
    critic = init_critic([2, 6, 6, 1], 11, activation)
    # scale weights up so the hinge is active
    critic = critic.with_params([3.0 * p for p in critic.params()])
    x = np.random.default_rng(4).normal(size=(5, 2))
    p, grads = penalty_param_gradient(critic, x, 10.0)
    assert p > 0

    def f(*params):
        return penalty_param_gradient(critic.with_params(list(params)), x, 10.0)[0]

    assert rel_err(grads, central_diff(f, critic.params())) < 1e-4


# -- minibatch loss

def reference_loss(critic, xs, ys, ts, lam):
    """Straight-line sum of per-sample terms."""
    total = 0.0
    for x, y, t in zip(xs, ys, ts):
        xt = (1 - t) * x + t * y
        norm = np.linalg.norm(critic.grad_x(xt[None, :])[0])
        total += critic(y[None, :])[0] - critic(x[None, :])[0] + lam * max(norm - 1.0, 0.0) ** 2
    return total / len(xs)


def test_zero_critic_has_zero_loss():
    critic = init_critic([2, 8, 1], 0)
    critic = critic.with_params([np.zeros_like(p) for p in critic.params()])
    rng = np.random.default_rng(0)
    loss, _ = critic_minibatch_loss(critic, rng.normal(size=(7, 2)), rng.normal(size=(7, 2)),
                                    rng.uniform(size=7), 1000.0)
    assert loss == 0.0


def test_linear_critic_point_masses():
    w, v = np.array([0.6, -0.3]), np.array([2.0, 1.0])
    xs, ys = np.zeros((5, 2)), np.tile(v, (5, 1))
    loss, _ = critic_minibatch_loss(linear_critic(w), xs, ys, np.linspace(0, 1, 5), 1000.0)
    assert loss == pytest.approx(w @ v, rel=1e-14)


def test_loss_matches_reference():
    critic = init_critic([2, 8, 8, 1], 9)
    critic = critic.with_params([2.0 * p for p in critic.params()])
    rng = np.random.default_rng(5)
    xs, ys, ts = rng.normal(size=(9, 2)), rng.normal(size=(9, 2)) + 1, rng.uniform(size=9)
    loss, _ = critic_minibatch_loss(critic, xs, ys, ts, 1000.0)
    assert abs(loss - reference_loss(critic, xs, ys, ts, 1000.0)) < 1e-12 * max(1.0, abs(loss))


def test_loss_permutation_invariant():
    critic = init_critic([2, 8, 1], 1)
    rng = np.random.default_rng(6)
    xs, ys, ts = rng.normal(size=(8, 2)), rng.normal(size=(8, 2)), rng.uniform(size=8)
    perm = rng.permutation(8)
    a, _ = critic_minibatch_loss(critic, xs, ys, ts, 1000.0)
    b, _ = critic_minibatch_loss(critic, xs[perm], ys[perm], ts[perm], 1000.0)
    assert a == pytest.approx(b, rel=1e-13)


def test_loss_size_mismatch():
    critic = init_critic([2, 4, 1], 0)
    with pytest.raises(ValueError):
        critic_minibatch_loss(critic, np.ones((3, 2)), np.ones((4, 2)), np.ones(3), 1.0)


def test_loss_gradient_finite_differences():
    critic = init_critic([2, 6, 1], 2)
    critic = critic.with_params([2.5 * p for p in critic.params()])
    rng = np.random.default_rng(7)
    xs, ys, ts = rng.normal(size=(6, 2)), rng.normal(size=(6, 2)), rng.uniform(size=6)
    _, grads = critic_minibatch_loss(critic, xs, ys, ts, 50.0)
    f = lambda *p: critic_minibatch_loss(critic.with_params(list(p)), xs, ys, ts, 50.0)[0]
    assert rel_err(grads, central_diff(f, critic.params())) < 1e-4


# -- init

def test_init_deterministic_and_zero_bias():
    a, b = init_critic([2, 16, 16, 1], 7), init_critic([2, 16, 16, 1], 7)
    for p, q in zip(a.params(), b.params()):
        np.testing.assert_array_equal(p, q)
    assert all(np.all(bias == 0) for bias in a.biases)


def test_init_weight_moments():
    c = init_critic([100, 100, 1], 3)
    w = c.weights[0].ravel()
    bound = np.sqrt(6.0 / 200)
    assert np.all(np.abs(w) <= bound)
    assert abs(w.mean()) < 3 * (2 * bound) / np.sqrt(12 * w.size)


@pytest.mark.parametrize("dims", [[], [2], [2, 0, 1], [2, -1, 1]])
def test_init_rejects_bad_dims(dims):
    with pytest.raises(ValueError):
        init_critic(dims, 0)


def test_output_dim_must_be_one():
    with pytest.raises(ValueError):
        init_critic([2, 4, 2], 0)


# -- Adam

def scalar_adam(grads, lr, b1, b2, eps=1e-8):
    p, m, v = 0.0, 0.0, 0.0
    trace = []
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p -= lr * (m / (1 - b1 ** t)) / ((v / (1 - b2 ** t)) ** 0.5 + eps)
        trace.append(p)
    return trace


def test_adam_three_step_trace():
    cfg = AdamConfig(1e-4, 0.5, 0.999)
    params, state = [np.zeros(1)], AdamState.zeros([np.zeros(1)], cfg)
    got = []
    for _ in range(3):
        params, state = adam_step(params, [np.ones(1)], state)
        got.append(params[0][0])
    expected = scalar_adam([1.0, 1.0, 1.0], 1e-4, 0.5, 0.999)
    np.testing.assert_allclose(got, expected, rtol=0, atol=1e-12)
    # frozen values from the scalar oracle
    np.testing.assert_allclose(got, [-9.999999900000001e-05, -1.9999999800000002e-04,
                                     -2.9999999700000003e-04], rtol=0, atol=1e-12)
    assert state.t == 3


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(1e-2, 1e2))
def test_adam_first_step_magnitude_and_scale_invariance(g, c):
    cfg = AdamConfig()
    step = lambda grad: adam_step([np.zeros(1)], [np.array([grad])], AdamState.zeros([np.zeros(1)], cfg))[0][0][0]
    assert abs(step(g)) == pytest.approx(cfg.lr, rel=1e-5)
    assert step(g) < 0  # descends
    # |step| = lr |g| / (|g| + eps) exactly, so rescaling moves it by O(lr eps / |g|)
    assert abs(step(c * g) - step(g)) <= cfg.lr * cfg.eps * (1 / g + 1 / (c * g)) * 1.01


def test_adam_zero_gradient_keeps_params():
    p = [np.array([1.0, -2.0])]
    new, state = adam_step(p, [np.zeros(2)], AdamState.zeros(p))
    np.testing.assert_array_equal(new[0], p[0])
    assert state.t == 1


def test_adam_shape_mismatch():
    p = [np.zeros(2)]
    with pytest.raises(ValueError):
        adam_step(p, [np.zeros(3)], AdamState.zeros(p))


# -- W1 estimate

def test_estimate_constant():
    assert estimate_w1([-2.0] * 100) == 2.0


def test_estimate_uses_trailing_window():
    assert estimate_w1([-9.0] * 100 + [-1.0] * 100) == 1.0


def test_estimate_standard_error():
    h = np.random.default_rng(0).normal(-3.0, 0.1, size=500)
    assert abs(estimate_w1(h) - 3.0) < 3 * 0.1 / 10


def test_estimate_too_short():
    with pytest.raises(ValueError):
        estimate_w1([-1.0] * 99)


# -- training

@pytest.fixture(scope="module")
def interval_critic():
    critic = init_critic([1, 128, 128, 128, 1], 0)
    rng = np.random.default_rng(0)
    return train_critic(critic, sampler("interval"), sampler("shifted_interval"), 2000, 50, 1000.0,
                        AdamConfig(), rng)


def test_train_1d_translation_estimate(interval_critic):
    _, history = interval_critic
    assert len(history) == 2000
    assert 1.8 <= estimate_w1(history) <= 2.2


def test_soft_lipschitz_after_training(interval_critic):
    critic, _ = interval_critic
    rng = np.random.default_rng(1)
    xs, ys = sampler("interval")(rng, 512), sampler("shifted_interval")(rng, 512)
    xt = xs + rng.uniform(size=(512, 1)) * (ys - xs)
    norms = np.linalg.norm(critic.grad_x(xt), axis=1)
    assert np.mean(norms > 1.05) < 0.05


def test_train_identical_distributions():
    critic = init_critic([2, 128, 128, 128, 1], 1)
    _, history = train_critic(critic, sampler("square"), sampler("square"), 2000, 50, 1000.0,
                              AdamConfig(), np.random.default_rng(1))
    assert abs(estimate_w1(history)) < 0.05 * np.sqrt(2)


def test_train_deterministic():
    runs = []
    for _ in range(2):
        c, h = train_critic(init_critic([2, 16, 1], 4), sampler("square"), sampler("shifted_square"),
                            100, 20, 1000.0, AdamConfig(), np.random.default_rng(4))
        runs.append((h, [p.tobytes() for p in c.params()]))
    assert runs[0] == runs[1]


def test_train_dimension_mismatch():
    with pytest.raises(ValueError):
        train_critic(init_critic([2, 4, 1], 0), sampler("interval"), sampler("square"), 100, 10, 1.0,
                     AdamConfig(), np.random.default_rng(0))


def test_input_gradient_node_is_differentiable():
    # the input-gradient node can itself be differentiated w.r.t. weights
    g = Graph()
    params = _param_inputs(g, 1)
    x = g.input("x")
    gx = input_gradient(g, x, params, 1)
    (dw,) = g.grad(g.sum(g.square(gx)), [params[0]])
    c = linear_critic([3.0, 4.0])
    val = g.evaluate({"x": np.zeros((1, 2)), **_param_bindings(c)}, [dw])[0]
    np.testing.assert_allclose(val[:, 0], [6.0, 8.0])
