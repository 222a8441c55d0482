import numpy as np
import pytest

from remil.checks import (
    check_conv1d,
    check_cross_entropy,
    check_layer_norm,
    check_linear,
    check_softmax,
)
from remil.numerics import (
    ParamTensor,
    conv1d_depthwise,
    finite_diff_check,
    layer_norm,
    linear,
    softmax,
)


def test_linear_matches_hand_value():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    w = np.array([[1.0, 0.0, 2.0], [0.0, 1.0, -1.0]])
    b = np.array([0.5, -0.5, 0.0])
    out = linear(x, w, b)
    np.testing.assert_array_equal(out, [[1.5, 1.5, 0.0], [3.5, 3.5, 2.0]])


def test_linear_no_bias():
    x = np.ones((2, 3))
    w = np.eye(3)
    np.testing.assert_array_equal(linear(x, w), x)


def test_softmax_rows_normalize():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(5, 7)) * 20
    y = softmax(x, axis=-1)
    np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-12)
    assert (y > 0).all()


def test_softmax_shift_invariant():
    x = np.array([[1.0, 2.0, 3.0]])
    np.testing.assert_allclose(softmax(x), softmax(x + 1000.0), atol=1e-15)


def test_softmax_rejects_nonfinite():
    with pytest.raises(ValueError):
        softmax(np.array([[np.inf, 0.0]]))


def test_layer_norm_zero_mean_unit_var():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(4, 9)) * 3 + 5
    y = layer_norm(x, np.ones(9), np.zeros(9))
    np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=-1), 1.0, atol=1e-4)


def test_conv1d_identity_kernel():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(3, 8))
    k = np.zeros((3, 5))
    k[:, 2] = 1.0  # centered delta
    np.testing.assert_array_equal(conv1d_depthwise(x, k), x)


def test_conv1d_shift_kernel():
    x = np.arange(6.0).reshape(1, 6)
    k = np.zeros((1, 3))
    k[0, 0] = 1.0  # taps the left neighbor
    out = conv1d_depthwise(x, k)
    np.testing.assert_array_equal(out, [[0.0, 0.0, 1.0, 2.0, 3.0, 4.0]])


def test_conv1d_rejects_even_kernel():
    with pytest.raises(ValueError):
        conv1d_depthwise(np.zeros((2, 4)), np.zeros((2, 4)))


def test_param_tensor_rejects_nonfinite():
    with pytest.raises(ValueError):
        ParamTensor("bad", np.array([1.0, np.nan]))


def test_param_tensor_grad_accumulates():
    t = ParamTensor("t", np.zeros(3))
    t.grad += np.ones(3)
    t.grad += np.ones(3)
    np.testing.assert_array_equal(t.grad, [2.0, 2.0, 2.0])
    t.zero_grad()
    np.testing.assert_array_equal(t.grad, [0.0, 0.0, 0.0])


@pytest.mark.parametrize("seed", range(5))
def test_gradcheck_primitives(seed):
    for fn in (check_linear, check_softmax, check_layer_norm, check_conv1d,
               check_cross_entropy):
        report = fn(seed)
        assert report.passed, str(report)


def test_finite_diff_catches_wrong_gradient():
    rng = np.random.default_rng(3)
    t = ParamTensor("x", rng.normal(size=4))
    t.grad = 2.0 * t.values + 1.0  # wrong on purpose: true grad is 2x

    def loss():
        return float((t.values ** 2).sum())

    report = finite_diff_check("broken", loss, [t])
    assert not report.passed
    assert report.worst_coordinate[0] == "x"
