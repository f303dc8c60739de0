import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from relgan.autodiff import (DomainError, NonFiniteError, ShapeError, Tape, Tensor, backward,
                             broadcast_add_row, concat, grad_of_grad, l2_norm_rows, record, scale)

from conftest import assert_grad_close, numeric_grad


def test_sigmoid_values():
    assert Tensor(0.0).sigmoid().item() == 0.5
    assert Tensor(8.0).sigmoid().item() == pytest.approx(0.99966464986953352, abs=1e-15)
    assert Tensor(1.0 - 2.0).max0().item() == 0.0


def test_simple_backward_examples():
    tape = Tape()
    x = tape.leaf(0.0)
    assert backward(x.sigmoid(), [x])[x].item() == 0.25

    tape = Tape()
    x = tape.leaf(2.0)
    g = backward(-x.log_sigmoid(), [x])[x].item()
    assert g == pytest.approx(-0.11920292202211756, rel=1e-12)
    fd = numeric_grad(lambda v: -Tensor(v).log_sigmoid().item(), np.array(2.0))
    assert g == pytest.approx(float(fd), rel=1e-8)

    tape = Tape()
    x, y = tape.leaf(3.0), tape.leaf(2.0)
    grads = backward(x * y, [x, y])
    assert grads[x].item() == 2.0
    assert grads[y].item() == 3.0


def _rand(rng, shape, lo=-3, hi=3, avoid_zero=False):
    x = rng.uniform(lo, hi, size=shape)
    if avoid_zero:
        x = np.where(np.abs(x) < 1e-2, 0.5, x)
    return x


UNARY = {
    "neg": lambda t: -t,
    "exp": lambda t: t.exp(),
    "sigmoid": lambda t: t.sigmoid(),
    "log_sigmoid": lambda t: t.log_sigmoid(),
    "tanh": lambda t: t.tanh(),
    "relu": lambda t: t.relu(),
    "leaky_relu": lambda t: t.leaky_relu(0.2),
    "max0": lambda t: t.max0(),
    "square": lambda t: t.square(),
    "scale": lambda t: scale(t, -1.7),
    "sum": lambda t: t.sum(axis=0),
    "mean": lambda t: t.mean(axis=1),
    "transpose": lambda t: t.T,
    "reshape": lambda t: t.reshape(12),
    "slice": lambda t: t[1:, ::2],
    "l2_norm_rows": l2_norm_rows,
}
POSITIVE = {"log": lambda t: t.log(), "sqrt": lambda t: t.sqrt()}
BINARY = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / b,
    "matmul": lambda a, b: a @ b.T,
    "broadcast_add_row": lambda a, b: broadcast_add_row(a, b[0]),
    "concat": lambda a, b: concat([a, b], axis=1),
    "add_broadcast": lambda a, b: a + b[:1],
}


def _check_op(fn, inputs, rng):
    # scalar objective: random weighted sum of the op output
    out_shape = fn(*[Tensor(x) for x in inputs]).shape
    w = rng.standard_normal(out_shape)

    def objective(*xs):
        return (fn(*xs) * Tensor(w)).sum()

    tape = Tape()
    leaves = [tape.leaf(x) for x in inputs]
    grads = backward(objective(*leaves), leaves)
    for i, x in enumerate(inputs):
        def f(v, i=i):
            args = [Tensor(a) for a in inputs]
            args[i] = Tensor(v)
            return objective(*args).item()
        assert_grad_close(grads[leaves[i]].data, numeric_grad(f, x))


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_ops_match_finite_differences(name, rng):
    for _ in range(5):
        _check_op(UNARY[name], [_rand(rng, (3, 4), avoid_zero=True)], rng)


@pytest.mark.parametrize("name", sorted(POSITIVE))
def test_positive_domain_ops_match_finite_differences(name, rng):
    for _ in range(5):
        _check_op(POSITIVE[name], [_rand(rng, (3, 4), 0.1, 3)], rng)


@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_ops_match_finite_differences(name, rng):
    for _ in range(5):
        a = _rand(rng, (3, 4))
        b = _rand(rng, (3, 4), avoid_zero=True)
        if name == "div":
            b = np.where(np.abs(b) < 0.3, 1.0, b)
        _check_op(BINARY[name], [a, b], rng)


def test_domain_and_shape_errors():
    with pytest.raises(DomainError):
        Tensor([1.0, 0.0]).log()
    with pytest.raises(DomainError):
        Tensor(-1.0).sqrt()
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))
    with pytest.raises(ShapeError):
        Tensor(np.ones(3)) + Tensor(np.ones(4))
    with pytest.raises(ShapeError):
        broadcast_add_row(np.ones((2, 3)), np.ones(2))


def test_non_finite_values_are_errors():
    with pytest.raises(NonFiniteError):
        Tensor(800.0).exp()
    with pytest.raises(NonFiniteError):
        Tensor(np.nan)


def test_stable_log_sigmoid_handles_large_critic_gaps():
    big = Tensor(np.array([-700.0, 700.0]))
    assert np.all(np.isfinite((-big).log_sigmoid().data))
    assert (-(big[0:1] - big[1:2]).log_sigmoid()).data[0] == pytest.approx(1400.0)


def test_backward_errors():
    tape = Tape()
    x = tape.leaf(np.ones(3))
    with pytest.raises(ShapeError):
        backward(x * 2.0, [x])
    other = Tape().leaf(1.0)
    with pytest.raises(ValueError):
        backward(x.sum(), [other])
    with pytest.raises(ValueError):
        backward(Tensor(1.0), [x])


def test_unreached_leaf_gets_zero_gradient():
    tape = Tape()
    x, y = tape.leaf(np.ones(2)), tape.leaf(np.ones(3))
    grads = backward(x.sum(), [x, y])
    assert np.array_equal(grads[y].data, np.zeros(3))
    assert grads[y].shape == y.shape


def test_replay_is_bit_exact(rng):
    tape = Tape()
    x = tape.leaf(rng.standard_normal((5, 3)))
    w = tape.leaf(rng.standard_normal((3, 2)))
    h = (x @ w).leaky_relu(0.2).tanh()
    loss = (-(h.sum(axis=1)).log_sigmoid()).mean()
    backward(loss, [w], create_graph=True)
    first = tape.replay()
    second = tape.replay()
    for node, a, b in zip(tape.nodes, first, second):
        assert np.array_equal(a, b)
        assert np.array_equal(a, node.value)


def test_backward_is_linear(rng):
    tape = Tape()
    w = tape.leaf(rng.standard_normal(4))
    l1 = (w.square() * 3.0).sum()
    l2 = (w.sigmoid()).sum()
    g1 = backward(l1, [w])[w].data
    g2 = backward(l2, [w])[w].data
    g12 = backward(l1 + l2, [w])[w].data
    np.testing.assert_allclose(g12, g1 + g2, rtol=1e-14, atol=1e-15)


# -- double backprop ----------------------------------------------------------

def _linear_critic_penalty(w_value):
    tape = Tape()
    w = tape.leaf(np.asarray(w_value, dtype=float))
    x = tape.leaf(np.array([[0.3, -0.7], [1.1, 0.2], [-2.0, 0.5]]))
    c = (x @ w.reshape(2, 1)).sum()
    return tape, w, x, c


def test_grad_of_grad_unit_norm_linear_critic():
    tape, w, x, c = _linear_critic_penalty([1.0, 0.0])
    grads = grad_of_grad(c, x, [w])
    np.testing.assert_array_equal(grads[w].data, [0.0, 0.0])


def test_grad_of_grad_scaled_linear_critic():
    tape, w, x, c = _linear_critic_penalty([2.0, 0.0])
    grads = grad_of_grad(c, x, [w])
    # d/dw (|w| - 1)^2 = 2 (|w| - 1) w / |w|
    np.testing.assert_allclose(grads[w].data, [2.0, 0.0], rtol=1e-12)


def test_quadratic_critic_gradient_is_input():
    tape = Tape()
    x = tape.leaf(np.array([[1.0, 0.0]]))
    c = (x.square().sum()) * 0.5
    g = backward(c, [x], create_graph=True)[x]
    np.testing.assert_array_equal(g.data, [[1.0, 0.0]])
    assert ((l2_norm_rows(g) - 1.0).square().mean()).item() == 0.0


@given(st.lists(st.floats(-3, 3), min_size=2, max_size=2), st.floats(0.1, 3))
@settings(max_examples=50, deadline=None)
def test_grad_of_grad_quadratic_critic_closed_form(w_list, a):
    # C(x) = a * sum_j w_j x_j^2 ; grad_x C = 2 a w * x ; penalty at fixed x
    w0 = np.array(w_list)
    x0 = np.array([[0.7, -1.3]])
    tape = Tape()
    w = tape.leaf(w0)
    x = tape.leaf(x0)
    c = (x.square() * w).sum() * a
    grads = grad_of_grad(c, x, [w])
    gx = 2 * a * w0 * x0[0]
    n = np.linalg.norm(gx)
    expected = np.zeros(2) if n == 0 else 2 * (n - 1) * (gx / n) * 2 * a * x0[0]
    np.testing.assert_allclose(grads[w].data, expected, rtol=1e-8, atol=1e-12)


def test_grad_of_grad_mlp_matches_finite_differences(rng):
    w1_0 = rng.standard_normal((2, 5))
    w2_0 = rng.standard_normal((5, 1))
    x0 = rng.standard_normal((4, 2))

    def penalty_value(w1v, w2v):
        tape = Tape()
        x = tape.leaf(x0)
        c = ((x @ Tensor(w1v)).tanh() @ Tensor(w2v)).sum()
        g = backward(c, [x], create_graph=True)[x]
        return (l2_norm_rows(g) - 1.0).square().mean().item()

    tape = Tape()
    x = tape.leaf(x0)
    w1, w2 = tape.leaf(w1_0), tape.leaf(w2_0)
    c = ((x @ w1).tanh() @ w2).sum()
    grads = grad_of_grad(c, x, [w1, w2])
    assert_grad_close(grads[w1].data, numeric_grad(lambda v: penalty_value(v, w2_0), w1_0))
    assert_grad_close(grads[w2].data, numeric_grad(lambda v: penalty_value(w1_0, v), w2_0))


def test_leaky_relu_second_derivative_is_zero():
    tape = Tape()
    x = tape.leaf(np.array([[0.5, -0.5]]))
    w = tape.leaf(np.array([[2.0], [3.0]]))
    c = (x @ w).leaky_relu(0.2).sum()
    first = backward(c, [x], create_graph=True)[x]
    # first derivative w.r.t. x is w * slope; its gradient w.r.t. x itself is 0
    second = backward(first.sum(), [x])[x]
    np.testing.assert_array_equal(second.data, [[0.0, 0.0]])


def test_zero_gradient_norm_has_zero_penalty_derivative():
    tape = Tape()
    w = tape.leaf(np.zeros(2))
    x = tape.leaf(np.array([[1.0, 2.0]]))
    c = (x @ w.reshape(2, 1)).sum()
    grads = grad_of_grad(c, x, [w])
    np.testing.assert_array_equal(grads[w].data, [0.0, 0.0])


def test_record_rejects_unknown_op_and_mixed_tapes():
    with pytest.raises(KeyError):
        record("conv2d", Tensor(1.0))
    a, b = Tape().leaf(1.0), Tape().leaf(2.0)
    with pytest.raises(ValueError):
        a + b
