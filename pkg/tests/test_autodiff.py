import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import central_diff, rel_err
from ttc.autodiff import Graph, GraphError, backward, forward


def test_forward_square():
    g = Graph()
    x = g.input("x")
    assert forward(g, {"x": 3.0}, g.square(x)) == 9.0


def test_forward_leaky_relu():
    g = Graph()
    x = g.input("x")
    assert forward(g, {"x": -1.0}, g.leaky_relu(x, 0.2)) == pytest.approx(-0.2, abs=0)


def test_forward_dot():
    g = Graph()
    w, x = g.input("w"), g.input("x")
    out = g.matmul(w, x)
    val = forward(g, {"w": [[1.0, 2.0]], "x": [[3.0], [4.0]]}, out)
    assert val.item() == 11.0


def test_backward_power_rule():
    g = Graph()
    x = g.input("x")
    y = g.square(x)
    forward(g, {"x": 3.0}, y)
    assert backward(g, y)["x"] == 6.0


def test_backward_linear():
    g = Graph()
    w, x = g.input("w"), g.input("x")
    y = g.sum(g.mul(w, x))
    forward(g, {"w": np.array([1.0, 2.0]), "x": np.array([3.0, 4.0])}, y)
    np.testing.assert_array_equal(backward(g, y)["w"], [3.0, 4.0])


def test_unused_root_gets_zero_gradient():
    g = Graph()
    x, z = g.input("x"), g.input("z")
    y = g.sum(g.square(x))
    forward(g, {"x": np.ones(3), "z": np.ones((2, 2))}, y)
    grads = backward(g, y)
    np.testing.assert_array_equal(grads["z"], np.zeros((2, 2)))


def test_backward_needs_scalar():
    g = Graph()
    x = g.input("x")
    y = g.square(x)
    forward(g, {"x": np.ones(3)}, y)
    with pytest.raises(GraphError, match="scalar"):
        backward(g, y)


def test_backward_needs_forward():
    g = Graph()
    y = g.sum(g.input("x"))
    with pytest.raises(GraphError):
        backward(g, y)


def test_unbound_root():
    g = Graph()
    x, y = g.input("x"), g.input("y")
    with pytest.raises(GraphError, match="unbound"):
        forward(g, {"x": 1.0}, g.add(x, y))


def test_shape_mismatch_names_node():
    g = Graph()
    a, b = g.input("a"), g.input("b")
    c = g.matmul(a, b)
    with pytest.raises(GraphError) as info:
        forward(g, {"a": np.ones((2, 3)), "b": np.ones((2, 3))}, c)
    assert info.value.node == c.id


def _two_layer_loss(g):
    x, w0, b0, w1, b1 = (g.input(n) for n in ("x", "w0", "b0", "w1", "b1"))
    h = g.leaky_relu(g.add_row(g.matmul(x, w0), b0), 0.2)
    out = g.add_row(g.matmul(h, w1), b1)
    return g.mean(g.square(out), 10), ("x", "w0", "b0", "w1", "b1")


def test_two_layer_net_matches_finite_differences():
    rng = np.random.default_rng(0)
    vals = [rng.normal(size=(5, 3)), rng.normal(size=(3, 4)), rng.normal(size=4),
            rng.normal(size=(4, 2)), rng.normal(size=2)]
    g = Graph()
    loss, names = _two_layer_loss(g)

    def f(*arrs):
        return float(g.evaluate(dict(zip(names, arrs)), [loss])[0])

    forward(g, dict(zip(names, vals)), loss)
    grads = backward(g, loss)
    assert rel_err([grads[n] for n in names], central_diff(f, vals)) < 1e-5


# every differentiable op, each wrapped as sum(op(...) * c) with a random cotangent c
def _positive(rng, shape):
    return rng.uniform(0.5, 2.0, size=shape)


def _away_from_zero(rng, shape):
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(0.2, 2.0, size=shape)


OPS = {
    "add": (lambda g, a, b: g.add(a, b), [(3, 2), (3, 2)], None),
    "sub": (lambda g, a, b: g.sub(a, b), [(3, 2), (3, 2)], None),
    "mul": (lambda g, a, b: g.mul(a, b), [(3, 2), (3, 2)], None),
    "scale": (lambda g, a: g.scale(a, -1.7), [(4,)], None),
    "leaky_relu": (lambda g, a: g.leaky_relu(a, 0.2), [(3, 3)], _away_from_zero),
    "relu": (lambda g, a: g.relu(a), [(3, 3)], _away_from_zero),
    "square": (lambda g, a: g.square(a), [(2, 3)], None),
    "sqrt": (lambda g, a: g.sqrt(a), [(2, 3)], _positive),
    "tanh": (lambda g, a: g.tanh(a), [(2, 3)], None),
    "matmul": (lambda g, a, b: g.matmul(a, b), [(3, 4), (4, 2)], None),
    "transpose": (lambda g, a: g.transpose(a), [(3, 4)], None),
    "add_row": (lambda g, a, b: g.add_row(a, b), [(3, 4), (4,)], None),
    "sum_rows": (lambda g, a: g.sum_rows(a), [(3, 4)], None),
    "sum_cols": (lambda g, a: g.sum_cols(a), [(3, 4)], None),
    "bcast_scalar": (lambda g, s, a: g.bcast_scalar(s, a), [(), (2, 3)], None),
    "bcast_rows": (lambda g, v, a: g.bcast_rows(v, a), [(3,), (2, 3)], None),
    "bcast_cols": (lambda g, v, a: g.bcast_cols(v, a), [(2,), (2, 3)], None),
    "row_norms": (lambda g, a: g.row_norms(a), [(4, 3)], _away_from_zero),
}


@pytest.mark.parametrize("op", sorted(OPS))
def test_op_matches_finite_differences(op):
    build, shapes, draw = OPS[op]
    rng = np.random.default_rng(zlib.crc32(op.encode()))
    draw = draw or (lambda r, s: r.normal(size=s))
    vals = [np.asarray(draw(rng, s), dtype=np.float64) for s in shapes]
    g = Graph()
    ins = [g.input(f"a{i}") for i in range(len(shapes))]
    out = build(g, *ins)
    names = [f"a{i}" for i in range(len(shapes))]
    shape = g.evaluate(dict(zip(names, vals)), [out])[0].shape
    cot = g.const(rng.normal(size=shape))
    loss = g.sum(g.mul(out, cot))

    def f(*arrs):
        return float(g.evaluate(dict(zip(names, arrs)), [loss])[0])

    forward(g, dict(zip(names, vals)), loss)
    grads = backward(g, loss)
    assert rel_err([grads[n] for n in names], central_diff(f, vals)) < 1e-5


def test_second_order_through_gradient():
    # d/dx of (d/dx x^3) = 6x, built as grad of (3 x^2) via the graph
    g = Graph()
    x = g.input("x")
    y = g.sum(g.mul(g.square(x), x))
    (dy,) = g.grad(y, [x])
    (d2y,) = g.grad(g.sum(dy), [x])
    assert g.evaluate({"x": np.array([2.0])}, [d2y])[0][0] == pytest.approx(12.0, rel=1e-14)


def test_leaky_relu_tie_break_at_zero():
    g = Graph()
    x = g.input("x")
    y = g.sum(g.leaky_relu(x, 0.2))
    forward(g, {"x": np.zeros(2)}, y)
    np.testing.assert_array_equal(backward(g, y)["x"], [0.2, 0.2])


def test_deterministic():
    rng = np.random.default_rng(1)
    vals = [rng.normal(size=(5, 3)), rng.normal(size=(3, 4)), rng.normal(size=4),
            rng.normal(size=(4, 2)), rng.normal(size=2)]
    outs = []
    for _ in range(2):
        g = Graph()
        loss, names = _two_layer_loss(g)
        v = forward(g, dict(zip(names, vals)), loss)
        grads = backward(g, loss)
        outs.append((v.tobytes(), [grads[n].tobytes() for n in names]))
    assert outs[0] == outs[1]


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31))
def test_linearity(a, b, seed):
    rng = np.random.default_rng(seed)
    xv = rng.normal(size=(3, 2))
    g = Graph()
    x = g.input("x")
    f = g.sum(g.tanh(g.mul(x, x)))
    h = g.sum(g.sqrt(g.add(g.square(x), g.ones_like(x))))
    combo = g.add(g.scale(f, a), g.scale(h, b))
    gf, gh, gc = (g.grad(o, [x])[0] for o in (f, h, combo))
    vf, vh, vc = g.evaluate({"x": xv}, [gf, gh, gc])
    np.testing.assert_allclose(vc, a * vf + b * vh, rtol=1e-12, atol=1e-12)
