"""Dense vector/matrix primitives with paired forward/backward passes.

Matrices are row-major C-contiguous ``numpy`` arrays.  Everything runs in
float64 here; the training hot path lives in :mod:`mmembed.backends` and is
expressed as compositions of these same formulas.  Backward functions are
hand-derived per layer (the model graph is fixed), and
:func:`check_gradients` verifies any composition of them against central
finite differences.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError


def affine_forward(W, x, b):
    """Return ``W @ x + b`` for a (m, n) matrix, (n,) input and (m,) bias."""
    W = np.asarray(W, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if W.ndim != 2 or x.ndim != 1 or b.ndim != 1:
        raise ShapeError(f"affine expects matrix/vector/vector, got {W.ndim}d/{x.ndim}d/{b.ndim}d")
    if W.shape[1] != x.shape[0] or W.shape[0] != b.shape[0]:
        raise ShapeError(f"affine shapes incompatible: W{W.shape}, x{x.shape}, b{b.shape}")
    return W @ x + b


def affine_backward(W, x, dy):
    """Gradients of ``y = W @ x + b`` given upstream ``dy``: (dW, dx, db)."""
    dy = np.asarray(dy, dtype=np.float64)
    if dy.shape != (W.shape[0],):
        raise ShapeError(f"upstream gradient shape {dy.shape} != ({W.shape[0]},)")
    return np.outer(dy, x), W.T @ dy, dy.copy()


def sigmoid(x):
    # expit-equivalent split form: never exponentiates a large positive value
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def elementwise(op_kind, a, b=None):
    """Apply a named componentwise function: sigmoid, tanh, relu, or mul."""
    a = np.asarray(a, dtype=np.float64)
    if op_kind == "sigmoid":
        return sigmoid(a)
    if op_kind == "tanh":
        return np.tanh(a)
    if op_kind == "relu":
        return np.maximum(a, 0.0)
    if op_kind == "mul":
        if b is None:
            raise ShapeError("mul needs two operands")
        b = np.asarray(b, dtype=np.float64)
        if a.shape != b.shape:
            raise ShapeError(f"mul shape mismatch: {a.shape} vs {b.shape}")
        return a * b
    raise ValueError(f"unknown op_kind {op_kind!r}")


def elementwise_backward(op_kind, out, dy, a=None, b=None):
    """Backward pass of :func:`elementwise` given the forward output ``out``.

    For ``mul`` both forward inputs must be supplied and a pair
    (da, db) is returned; the unary ops return a single array.
    """
    dy = np.asarray(dy, dtype=np.float64)
    if op_kind == "sigmoid":
        return dy * out * (1.0 - out)
    if op_kind == "tanh":
        return dy * (1.0 - out * out)
    if op_kind == "relu":
        return dy * (np.asarray(a) > 0.0)
    if op_kind == "mul":
        return dy * b, dy * a
    raise ValueError(f"unknown op_kind {op_kind!r}")


REL_ERR_FLOOR = 1e-8


def relative_error(a, n):
    """|a - n| / max(|a|, |n|, 1e-8), the gradient-check discrepancy measure."""
    return abs(a - n) / max(abs(a), abs(n), REL_ERR_FLOOR)


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_param: str
    worst_index: tuple
    analytic_at_worst: float
    numeric_at_worst: float
    per_param: dict = field(default_factory=dict)
    n_checked: int = 0
    tol: float = 1e-4

    @property
    def passed(self):
        return self.max_rel_err < self.tol

    def summary(self):
        status = "OK" if self.passed else "FAIL"
        return (
            f"gradcheck {status}: max rel err {self.max_rel_err:.3e} at "
            f"{self.worst_param}{list(self.worst_index)} "
            f"(analytic {self.analytic_at_worst:.6e}, numeric {self.numeric_at_worst:.6e}, "
            f"{self.n_checked} coordinates, tol {self.tol:g})"
        )


def check_gradients(f, params, h=1e-4, tol=1e-4, max_coords_per_param=None, rng=None):
    """Compare analytic gradients of ``f`` against central finite differences.

    ``f(params) -> (loss, grads)`` must be deterministic in ``params``; any
    internal randomness has to be frozen by the caller.  ``params`` is a dict
    of float64 arrays, perturbed in place one coordinate at a time with step
    ``h``.  With ``max_coords_per_param`` set, a seeded subsample of
    coordinates is checked instead of every one.
    """
    loss0, grads = f(params)
    if not np.isfinite(loss0):
        raise NumericError(f"loss is not finite: {loss0}")
    for name in params:
        if name not in grads:
            raise ShapeError(f"analytic gradients missing parameter {name!r}")
        if np.shape(grads[name]) != np.shape(params[name]):
            raise ShapeError(
                f"gradient shape {np.shape(grads[name])} != parameter shape "
                f"{np.shape(params[name])} for {name!r}"
            )

    report = GradCheckReport(
        max_rel_err=0.0, worst_param="", worst_index=(),
        analytic_at_worst=0.0, numeric_at_worst=0.0, tol=tol,
    )
    rng = rng or np.random.default_rng(0)
    for name in sorted(params):
        theta = params[name]
        coords = list(np.ndindex(theta.shape))
        if max_coords_per_param is not None and len(coords) > max_coords_per_param:
            picks = rng.choice(len(coords), size=max_coords_per_param, replace=False)
            coords = [coords[i] for i in sorted(picks)]
        worst = 0.0
        for idx in coords:
            orig = theta[idx]
            theta[idx] = orig + h
            lp = f(params)[0]
            theta[idx] = orig - h
            lm = f(params)[0]
            theta[idx] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise NumericError(f"non-finite loss while perturbing {name}{list(idx)}")
            numeric = (lp - lm) / (2.0 * h)
            analytic = float(grads[name][idx])
            err = relative_error(analytic, numeric)
            report.n_checked += 1
            worst = max(worst, err)
            if err > report.max_rel_err:
                report.max_rel_err = err
                report.worst_param = name
                report.worst_index = idx
                report.analytic_at_worst = analytic
                report.numeric_at_worst = numeric
        report.per_param[name] = worst
    return report
