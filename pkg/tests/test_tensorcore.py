import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sofclr.tensorcore import (
    Graph,
    NonFiniteError,
    ShapeError,
    Tape,
    backward,
    finite_diff_grad,
    forward,
    value_and_grad,
)

from . import oracles


def _single_add():
    g = Graph()
    a, b = g.input("a", (2,)), g.input("b", (2,))
    g.output("out", a + b)
    return g


def test_add_of_two_inputs():
    out = forward(_single_add(), np.zeros(0), {"a": [1.0, 2.0], "b": [3.0, 4.0]})["out"]
    np.testing.assert_array_equal(out, [4.0, 6.0])


def test_identity_matmul():
    g = Graph()
    x = g.input("x", (None, 3))
    g.output("out", g.matmul(g.const(np.eye(3)), x))
    x0 = np.arange(9.0).reshape(3, 3)
    np.testing.assert_array_equal(forward(g, np.zeros(0), {"x": x0})["out"], x0)


def _mlp_graph(d_in=8, hidden=16, d_out=4):
    g = Graph()
    W0, b0 = g.param("W0", (d_in, hidden)), g.param("b0", (hidden,))
    W1, b1 = g.param("W1", (hidden, d_out)), g.param("b1", (d_out,))
    x = g.input("x", (None, d_in))
    out = g.output("y", (x @ W0 + b0).relu() @ W1 + b1)
    g.output("loss", (out * out).sum() * 0.5)
    return g, [(d_in, hidden), (hidden, d_out)]


def test_mlp_forward_matches_hand_rolled_oracle():
    g, dims = _mlp_graph()
    w = np.random.default_rng(42).normal(size=g.n_params)
    x = np.zeros(8)
    x[0] = 1.0
    got = forward(g, w, {"x": x[None, :]})["y"][0]
    np.testing.assert_allclose(got, oracles.mlp(w, dims, x), rtol=0, atol=1e-13)


def test_square_gradient():
    g = Graph()
    p = g.param("w", ())
    g.output("f", p * p)
    np.testing.assert_allclose(backward(g, np.array([3.0]), {}, "f"), [6.0])


def test_constant_output_has_zero_gradient():
    g = Graph()
    g.param("w", (3,))
    g.output("c", g.const(2.5))
    np.testing.assert_array_equal(backward(g, np.ones(3), {}, "c"), np.zeros(3))


def test_mlp_backward_matches_finite_differences():
    g, _ = _mlp_graph()
    rng = np.random.default_rng(0)
    w = rng.normal(size=g.n_params)
    x = rng.normal(size=(5, 8))
    grad = backward(g, w, {"x": x}, "loss")
    fd = finite_diff_grad(lambda p: forward(g, p, {"x": x})["loss"], w)
    assert np.max(np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-8)) <= 1e-6


def test_finite_diff_of_square():
    assert finite_diff_grad(lambda w: w[0] ** 2, [3.0], 1e-5)[0] == pytest.approx(6.0, abs=1e-8)


def test_finite_diff_of_linear_function():
    a = np.array([0.5, -2.0, 3.25])
    np.testing.assert_allclose(finite_diff_grad(lambda w: a @ w, np.ones(3)), a, rtol=1e-10)


def test_finite_diff_rejects_bad_step_and_nonfinite():
    with pytest.raises(ValueError):
        finite_diff_grad(lambda w: w[0], [1.0], 0.0)
    with pytest.raises(NonFiniteError):
        with np.errstate(all="ignore"):
            finite_diff_grad(lambda w: np.log(w[0]), [0.0], 1e-5)


def test_seeding_a_non_scalar_is_rejected():
    g, _ = _mlp_graph()
    with pytest.raises(ShapeError):
        backward(g, np.zeros(g.n_params), {"x": np.ones((2, 8))}, "y")


def test_shape_mismatch_is_reported():
    g, _ = _mlp_graph()
    with pytest.raises(ShapeError):
        forward(g, np.zeros(g.n_params), {"x": np.ones((2, 7))})
    with pytest.raises(ShapeError):
        forward(g, np.zeros(g.n_params - 1), {"x": np.ones((2, 8))})


def test_non_finite_intermediate_reports_node():
    g = Graph()
    x = g.input("x", (2,))
    bad = g.log(x)
    g.output("out", bad)
    with pytest.raises(NonFiniteError) as err:
        forward(g, np.zeros(0), {"x": [1.0, -1.0]})
    assert (err.value.node_id, err.value.op) == (bad.id, "log")


def test_forward_is_pure_and_bitwise_repeatable():
    g, _ = _mlp_graph()
    w = np.random.default_rng(1).normal(size=g.n_params)
    before = w.copy()
    x = np.random.default_rng(2).normal(size=(3, 8))
    a, b = forward(g, w, {"x": x}), forward(g, w, {"x": x})
    assert all(np.array_equal(a[k], b[k]) for k in a)
    np.testing.assert_array_equal(w, before)


def test_l2_normalize_degenerate_vector_falls_back_to_first_basis_vector():
    g = Graph()
    p = g.param("p", (3,))
    g.output("z", g.l2_normalize(p))
    np.testing.assert_array_equal(forward(g, np.zeros(3), {})["z"], [1.0, 0.0, 0.0])


def test_relu_subgradient_at_zero_is_zero():
    g = Graph()
    p = g.param("p", (2,))
    g.output("s", p.relu().sum())
    np.testing.assert_array_equal(backward(g, np.array([0.0, 1.0]), {}, "s"), [0.0, 1.0])


def test_vjp_is_linear_in_cotangents():
    g, _ = _mlp_graph()
    rng = np.random.default_rng(3)
    w, x = rng.normal(size=g.n_params), rng.normal(size=(4, 8))
    tape = Tape(g, w, {"x": x})
    c1, c2 = rng.normal(size=(4, 4)), rng.normal(size=(4, 4))
    np.testing.assert_allclose(tape.vjp({"y": c1 + c2}), tape.vjp({"y": c1}) + tape.vjp({"y": c2}), atol=1e-12)


def test_value_and_grad_matches_separate_calls():
    g, _ = _mlp_graph()
    w, x = np.linspace(-1, 1, g.n_params), np.ones((2, 8))
    outs, grads = value_and_grad(g, w, {"x": x}, ["loss"])
    assert outs["loss"] == forward(g, w, {"x": x})["loss"]
    np.testing.assert_array_equal(grads["loss"], backward(g, w, {"x": x}, "loss"))


def test_suffix_broadcast_only():
    g = Graph()
    a, b = g.input("a", (2, 3)), g.input("b", (2,))
    g.output("out", a + b)
    with pytest.raises(ShapeError):
        forward(g, np.zeros(0), {"a": np.ones((2, 3)), "b": np.ones(2)})


@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4))
def test_log_softmax_gradient_property(vals):
    g = Graph()
    p = g.param("p", (4,))
    r = g.const(np.array([0.3, -1.0, 0.7, 2.0]))
    g.output("f", (g.log_softmax(p) * r).sum())
    w = np.array(vals)
    grad = backward(g, w, {}, "f")
    fd = finite_diff_grad(lambda q: forward(g, q, {})["f"], w)
    np.testing.assert_allclose(grad, fd, rtol=1e-5, atol=1e-8)
