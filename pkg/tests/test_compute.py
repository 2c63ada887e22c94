import math

import numpy as np
import pytest

from mmembed.compute import (affine_backward, affine_forward, check_gradients,
                             elementwise, elementwise_backward, relative_error)
from mmembed.errors import NumericError, ShapeError


def scalar_affine(W, x, b):
    """Independent triple-loop oracle for W @ x + b."""
    m, n = len(W), len(W[0])
    out = [0.0] * m
    for i in range(m):
        acc = 0.0
        for j in range(n):
            acc += W[i][j] * x[j]
        out[i] = acc + b[i]
    return out


def test_affine_identity():
    y = affine_forward(np.eye(2), np.array([3.0, 4.0]), np.zeros(2))
    assert np.array_equal(y, [3.0, 4.0])


def test_affine_zero_weights_pass_bias():
    y = affine_forward(np.zeros((1, 2)), np.array([5.0, 7.0]), np.array([2.0]))
    assert np.array_equal(y, [2.0])


def test_affine_matches_scalar_loop():
    rng = np.random.default_rng(7)
    for _ in range(20):
        m, n = rng.integers(1, 6, size=2)
        W = rng.normal(size=(m, n))
        x = rng.normal(size=n)
        b = rng.normal(size=m)
        expected = scalar_affine(W.tolist(), x.tolist(), b.tolist())
        assert np.abs(affine_forward(W, x, b) - expected).max() < 1e-12


def test_affine_shape_errors():
    with pytest.raises(ShapeError):
        affine_forward(np.zeros((2, 3)), np.zeros(2), np.zeros(2))
    with pytest.raises(ShapeError):
        affine_forward(np.zeros((2, 3)), np.zeros(3), np.zeros(3))


def test_affine_backward_matches_finite_differences():
    rng = np.random.default_rng(3)
    W = rng.normal(size=(3, 4))
    x = rng.normal(size=4)
    b = rng.normal(size=3)
    weights = rng.normal(size=3)  # reduce output to a scalar

    def f(p):
        y = affine_forward(p["W"], p["x"], p["b"])
        dW, dx, db = affine_backward(p["W"], p["x"], weights)
        return float(weights @ y), {"W": dW, "x": dx, "b": db}

    report = check_gradients(f, {"W": W, "x": x, "b": b}, h=1e-6, tol=1e-7)
    assert report.passed, report.summary()


def test_relu_definition():
    assert np.array_equal(elementwise("relu", np.array([-2.0, 0.0, 3.0])), [0.0, 0.0, 3.0])


def test_sigmoid_values():
    assert elementwise("sigmoid", np.array([0.0]))[0] == 0.5
    # independently evaluated 1 / (1 + e^-1)
    assert abs(elementwise("sigmoid", np.array([1.0]))[0] - 0.7310585786) < 1e-9


def test_mul_and_shape_mismatch():
    a = np.array([1.0, 2.0])
    assert np.array_equal(elementwise("mul", a, a), [1.0, 4.0])
    with pytest.raises(ShapeError):
        elementwise("mul", a, np.array([1.0]))
    with pytest.raises(ShapeError):
        elementwise("mul", a)


def test_unknown_op_kind():
    with pytest.raises(ValueError):
        elementwise("exp", np.array([1.0]))


@pytest.mark.parametrize("kind", ["sigmoid", "tanh", "relu"])
def test_unary_backward_matches_finite_differences(kind, rng):
    a = rng.normal(size=6)
    a[0] = 2.0  # keep relu away from its kink
    dy = rng.normal(size=6)

    def f(p):
        out = elementwise(kind, p["a"])
        da = elementwise_backward(kind, out, dy, a=p["a"])
        return float(dy @ out), {"a": da}

    report = check_gradients(f, {"a": a}, h=1e-6, tol=1e-6)
    assert report.passed, report.summary()


def test_mul_backward():
    a = np.array([1.0, -2.0, 3.0])
    b = np.array([4.0, 5.0, -6.0])
    dy = np.array([1.0, 1.0, 2.0])
    da, db = elementwise_backward("mul", a * b, dy, a=a, b=b)
    assert np.array_equal(da, dy * b)
    assert np.array_equal(db, dy * a)


def test_primitives_finite_on_large_inputs():
    x = np.array([-1e3, -1.0, 0.0, 1.0, 1e3])
    for kind in ("sigmoid", "tanh", "relu"):
        assert np.all(np.isfinite(elementwise(kind, x)))
    W = np.full((2, 5), 1e3)
    assert np.all(np.isfinite(affine_forward(W, x, np.array([1e3, -1e3]))))


def test_check_gradients_quadratic():
    def f(p):
        th = p["theta"]
        return float(th[0] ** 2), {"theta": np.array([2.0 * th[0]])}

    report = check_gradients(f, {"theta": np.array([3.0])}, h=1e-5, tol=1e-9)
    assert report.passed
    assert report.max_rel_err < 1e-9
    assert report.analytic_at_worst == 6.0


def test_check_gradients_flags_corruption():
    def f(p):
        th = p["theta"]
        return float(th[0] ** 2), {"theta": np.array([2.0 * th[0] + 0.1])}

    report = check_gradients(f, {"theta": np.array([3.0])}, h=1e-5, tol=1e-4)
    assert not report.passed
    assert report.max_rel_err > 1e-4
    assert "FAIL" in report.summary()


def test_check_gradients_nonfinite_loss():
    def f(p):
        return float("nan"), {"theta": np.zeros(1)}

    with pytest.raises(NumericError):
        check_gradients(f, {"theta": np.zeros(1)})


def test_check_gradients_missing_grad():
    def f(p):
        return 0.0, {}

    with pytest.raises(ShapeError):
        check_gradients(f, {"theta": np.zeros(1)})


def test_relative_error_floor():
    assert relative_error(0.0, 0.0) == 0.0
    assert relative_error(1e-9, 0.0) == pytest.approx(1e-9 / 1e-8)
