import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gcnda import tensor as T


def conv_oracle(x, k, b):
    """Triple loop over positions, filters and window rows."""
    n, d = x.shape
    f, h, _ = k.shape
    before = (h - 1) // 2
    out = np.zeros((n, f))
    for i in range(n):
        for kk in range(f):
            acc = b[kk]
            for j in range(h):
                row = i + j - before
                if 0 <= row < n:
                    for c in range(d):
                        acc += x[row, c] * k[kk, j, c]
            out[i, kk] = acc
    return out


# --- glorot -----------------------------------------------------------------


def test_glorot_limit_900_100():
    w = T.glorot_uniform(T.make_rng(0), 900, 100, (5000,))
    limit = math.sqrt(6 / 1000)
    assert limit == pytest.approx(0.0774597, abs=1e-7)
    assert np.all(np.abs(w) <= limit)
    assert np.abs(w).max() > 0.99 * limit


def test_glorot_unit_limit_and_mean():
    w = T.glorot_uniform(T.make_rng(1), 3, 3, (100_000,))
    assert np.all((w >= -1.0) & (w <= 1.0))
    assert abs(w.mean()) <= 0.02


@pytest.mark.parametrize("fans", [(0, 3), (3, 0), (-1, 2)])
def test_glorot_rejects_bad_fans(fans):
    with pytest.raises(ValueError):
        T.glorot_uniform(T.make_rng(0), *fans, (2,))


def test_same_seed_same_init():
    a = T.glorot_uniform(T.make_rng(42), 10, 20, (10, 20))
    b = T.glorot_uniform(T.make_rng(42), 10, 20, (10, 20))
    assert a.tobytes() == b.tobytes()


# --- convolution ------------------------------------------------------------


def test_conv_sliding_sum():
    x = np.arange(1.0, 6.0).reshape(5, 1)
    out = T.conv1d_same(x, np.ones((1, 3, 1)), np.zeros(1))
    np.testing.assert_array_equal(out[:, 0], [3, 6, 9, 12, 9])


def test_conv_zero_kernels_give_bias():
    x = np.random.default_rng(0).normal(size=(6, 4))
    out = T.conv1d_same(x, np.zeros((3, 2, 4)), np.array([0.5, -1.0, 2.0]))
    np.testing.assert_array_equal(out, np.tile([0.5, -1.0, 2.0], (6, 1)))


def test_conv_h1_identity():
    x = np.array([[1.5], [-2.0], [3.0]])
    np.testing.assert_array_equal(T.conv1d_same(x, np.ones((1, 1, 1)), np.zeros(1)), x)


def test_conv_even_h_pads_more_after():
    # h=2: zero rows before, one after, so out[i] = x[i] + x[i+1]
    x = np.array([[1.0], [2.0], [4.0]])
    out = T.conv1d_same(x, np.ones((1, 2, 1)), np.zeros(1))
    np.testing.assert_array_equal(out[:, 0], [3, 6, 4])


def test_conv_shape_errors():
    with pytest.raises(T.ShapeError):
        T.conv1d_same(np.zeros((5, 3)), np.zeros((2, 3, 4)), np.zeros(2))
    with pytest.raises(T.ShapeError):
        T.conv1d_same(np.zeros((5, 4)), np.zeros((2, 3, 4)), np.zeros(3))
    with pytest.raises(T.ShapeError):
        T.conv1d_same_backward(np.zeros((5, 4)), np.zeros((2, 3, 4)), np.zeros((5, 3)))


def test_conv_matches_oracle_random():
    rng = np.random.default_rng(7)
    for _ in range(100):
        n, d, h, f = rng.integers(1, 21), rng.integers(1, 9), rng.integers(1, 6), rng.integers(1, 9)
        x, k, b = rng.normal(size=(n, d)), rng.normal(size=(f, h, d)), rng.normal(size=f)
        np.testing.assert_allclose(T.conv1d_same(x, k, b), conv_oracle(x, k, b), rtol=0, atol=1e-12)


def test_conv_batched_equals_loop():
    rng = np.random.default_rng(3)
    x, k, b = rng.normal(size=(4, 9, 3)), rng.normal(size=(5, 4, 3)), rng.normal(size=5)
    out = T.conv1d_same(x, k, b)
    for i in range(4):
        np.testing.assert_allclose(out[i], conv_oracle(x[i], k, b), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(
    n=st.integers(1, 12),
    d=st.integers(1, 5),
    h=st.integers(1, 5),
    f=st.integers(1, 4),
    a=st.floats(-3, 3),
    c=st.floats(-3, 3),
    seed=st.integers(0, 2**16),
)
def test_conv_is_linear(n, d, h, f, a, c, seed):
    rng = np.random.default_rng(seed)
    x, z, k = rng.normal(size=(n, d)), rng.normal(size=(n, d)), rng.normal(size=(f, h, d))
    zero = np.zeros(f)
    lhs = T.conv1d_same(a * x + c * z, k, zero)
    rhs = a * T.conv1d_same(x, k, zero) + c * T.conv1d_same(z, k, zero)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_conv_backward_zero_upstream():
    rng = np.random.default_rng(0)
    x, k = rng.normal(size=(6, 3)), rng.normal(size=(2, 3, 3))
    gx, gk, gb = T.conv1d_same_backward(x, k, np.zeros((6, 2)))
    assert not gx.any() and not gk.any() and not gb.any()


def test_conv_backward_pulse_gives_window():
    rng = np.random.default_rng(1)
    x, k = rng.normal(size=(7, 2)), rng.normal(size=(1, 3, 2))
    up = np.zeros((7, 1))
    up[4, 0] = 1.0
    _, gk, gb = T.conv1d_same_backward(x, k, up)
    np.testing.assert_array_equal(gk[0], x[3:6])
    assert gb[0] == 1.0


def test_conv_backward_finite_difference():
    rng = T.make_rng(11)
    x, k, b = rng.normal(size=(7, 2)), rng.normal(size=(2, 3, 2)), rng.normal(size=2)
    r = rng.normal(size=(7, 2))
    gx, gk, gb = T.conv1d_same_backward(x, k, r)
    err = T.grad_check(lambda: float(np.sum(T.conv1d_same(x, k, b) * r)), {"x": x, "k": k, "b": b}, {"x": gx, "k": gk, "b": gb})
    assert err <= 1e-6


def test_conv_backward_skip_input_grad():
    rng = np.random.default_rng(2)
    x, k, up = rng.normal(size=(5, 3)), rng.normal(size=(2, 2, 3)), rng.normal(size=(5, 2))
    full = T.conv1d_same_backward(x, k, up)
    gx, gk, gb = T.conv1d_same_backward(x, k, up, input_grad=False)
    assert gx is None
    np.testing.assert_array_equal(gk, full[1])
    np.testing.assert_array_equal(gb, full[2])


# --- activations and products ----------------------------------------------


def test_activation_values():
    assert T.activation("sigmoid", np.array(0.0)) == 0.5
    assert float(T.activation("tanh", np.array(1.0))) == pytest.approx(0.7615941559557649, abs=1e-15)
    np.testing.assert_array_equal(T.activation("relu", np.array([-2.0, 3.0])), [0.0, 3.0])
    np.testing.assert_array_equal(T.activation("identity", np.array([-2.0, 3.0])), [-2.0, 3.0])


def test_sigmoid_matches_reference_and_saturates():
    x = np.linspace(-30, 30, 601)
    ref = np.array([1.0 / (1.0 + math.exp(-v)) for v in x])
    np.testing.assert_allclose(T.sigmoid(x), ref, rtol=1e-9, atol=1e-15)
    big = T.sigmoid(np.array([-1000.0, 1000.0]))
    assert np.all(np.isfinite(big)) and big[0] == 0.0 and big[1] == 1.0


def test_relu_derivative_at_zero_is_zero():
    g = T.activation_backward("relu", np.array([0.0, 1.0, -1.0]), None, np.ones(3))
    np.testing.assert_array_equal(g, [0.0, 1.0, 0.0])


def test_unknown_activation():
    with pytest.raises(ValueError):
        T.activation("gelu", np.zeros(2))
    with pytest.raises(ValueError):
        T.activation_backward("gelu", np.zeros(2), np.zeros(2), np.zeros(2))


@pytest.mark.parametrize(
    "a,b,expected",
    [([1, 2], [0, 0], [0, 0]), ([2, 3], [1, 1], [2, 3]), ([2, -1], [0.5, 4], [1, -4])],
)
def test_elementwise_mul(a, b, expected):
    np.testing.assert_array_equal(T.elementwise_mul(np.array(a, float), np.array(b, float)), expected)


def test_elementwise_mul_backward_and_shape():
    ga, gb = T.elementwise_mul_backward(np.array([2.0, -1.0]), np.array([0.5, 4.0]), np.array([1.0, 2.0]))
    np.testing.assert_array_equal(ga, [0.5, 8.0])
    np.testing.assert_array_equal(gb, [2.0, -2.0])
    with pytest.raises(T.ShapeError):
        T.elementwise_mul(np.zeros(2), np.zeros(3))


# --- pooling ---------------------------------------------------------------


def test_maxpool_example():
    v, arg = T.maxpool_time(np.array([[1.0, -2.0], [3.0, 0.0], [2.0, 5.0]]))
    np.testing.assert_array_equal(v, [3, 5])
    np.testing.assert_array_equal(arg, [1, 2])


def test_maxpool_tie_takes_first():
    _, arg = T.maxpool_time(np.full((4, 2), 1.5))
    np.testing.assert_array_equal(arg, [0, 0])


def test_maxpool_matches_scan():
    x = np.random.default_rng(5).normal(size=(20, 7))
    v, arg = T.maxpool_time(x)
    for k in range(7):
        best, at = -np.inf, -1
        for i in range(20):
            if x[i, k] > best:
                best, at = x[i, k], i
        assert v[k] == best and arg[k] == at


def test_maxpool_empty():
    with pytest.raises(ValueError):
        T.maxpool_time(np.zeros((0, 3)))


@settings(max_examples=50, deadline=None)
@given(n=st.integers(1, 15), f=st.integers(1, 6), seed=st.integers(0, 2**16))
def test_maxpool_backward_conserves_mass(n, f, seed):
    rng = np.random.default_rng(seed)
    x, up = rng.normal(size=(3, n, f)), rng.normal(size=(3, f))
    _, arg = T.maxpool_time(x)
    g = T.maxpool_time_backward(arg, n, up)
    assert g.sum() == pytest.approx(up.sum(), abs=1e-12)
    assert np.count_nonzero(g) <= 3 * f


# --- dense, dropout, loss --------------------------------------------------


def test_dense_examples():
    np.testing.assert_array_equal(T.dense(np.array([1.0, 2.0]), np.eye(2), np.zeros(2)), [1, 2])
    b = np.array([0.3, -0.2, 1.0])
    np.testing.assert_array_equal(T.dense(np.zeros(4), np.ones((4, 3)), b), b)
    with pytest.raises(T.ShapeError):
        T.dense(np.zeros(3), np.ones((4, 3)), b)


def test_dense_gradients_5_to_3():
    rng = T.make_rng(9)
    x, w, b, r = rng.normal(size=5), rng.normal(size=(5, 3)), rng.normal(size=3), rng.normal(size=3)
    gx, gw, gb = T.dense_backward(x, w, r)
    assert T.grad_check(lambda: float(T.dense(x, w, b) @ r), {"x": x, "w": w, "b": b}, {"x": gx, "w": gw, "b": gb}) <= 1e-6


def test_dropout_identities():
    x = np.arange(6.0)
    y, mask = T.dropout(x, 1.0, T.make_rng(0), True)
    np.testing.assert_array_equal(y, x)
    assert mask.all()
    y, _ = T.dropout(x, 0.3, T.make_rng(0), False)
    np.testing.assert_array_equal(y, x)


def test_dropout_inverted_scaling():
    x = np.full(1000, 3.0)
    y, mask = T.dropout(x, 0.5, T.make_rng(4), True)
    np.testing.assert_array_equal(y[mask == 1], 6.0)
    np.testing.assert_array_equal(y[mask == 0], 0.0)


def test_dropout_preserves_expectation():
    x = np.array([1.0, -2.0, 0.5, 4.0])
    rng = T.make_rng(123)
    trials = np.stack([T.dropout(x, 0.5, rng, True)[0] for _ in range(100_000)])
    np.testing.assert_allclose(trials.mean(axis=0), x, rtol=0.02)


@pytest.mark.parametrize("keep", [0.0, -0.1, 1.5])
def test_dropout_bad_keep(keep):
    with pytest.raises(ValueError):
        T.dropout(np.zeros(2), keep, T.make_rng(0), True)


def test_bce_values():
    assert T.bce_loss(0.5, 1) == pytest.approx(math.log(2), abs=1e-12)
    assert T.bce_loss(0.5, 0) == pytest.approx(0.693147, abs=1e-6)
    assert T.bce_loss(0.9, 1) == pytest.approx(0.105361, abs=1e-6)
    assert T.bce_loss(0.0, 1) == pytest.approx(-math.log(1e-7))
    with pytest.raises(ValueError):
        T.bce_loss(0.5, 2)


def test_bce_grad_is_batch_mean():
    p, y = np.array([0.2, 0.7]), np.array([1.0, 0.0])
    np.testing.assert_allclose(T.bce_loss_grad(p, y), [-1 / 0.2 / 2, 1 / 0.3 / 2])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=20))
def test_ops_keep_values_finite(xs):
    x = np.array(xs)
    for kind in T.ACTIVATIONS:
        assert np.all(np.isfinite(T.activation(kind, x)))
    p = T.sigmoid(x)
    y = (x > 0).astype(float)
    assert math.isfinite(T.bce_loss(p, y))
    assert np.all(np.isfinite(T.bce_loss_grad(p, y)))


# --- grad_check ------------------------------------------------------------


def test_grad_check_constant_function():
    x = np.ones(4)
    assert T.grad_check(lambda: 3.0, {"x": x}, {"x": np.zeros(4)}) == 0.0


def test_grad_check_detects_wrong_gradient():
    x = np.array([1.0, 2.0])
    assert T.grad_check(lambda: float(np.sum(x**2)), {"x": x}, {"x": x.copy()}) > 0.4
    np.testing.assert_array_equal(x, [1.0, 2.0])
