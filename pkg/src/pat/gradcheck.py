"""Central finite-difference verification of backward rules.

The checker perturbs each element of an input with a step scaled to the
element's magnitude, evaluates the scalar function twice, and compares
(f(x+h) - f(x-h)) / 2h against the gradient from the backward pass.
"""

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, no_grad

__all__ = ["GradCheckError", "GradCheckReport", "grad_check"]

DEFAULT_STEP = 1e-3
DEFAULT_TOL = 1e-4


class GradCheckError(RuntimeError):
    """Non-finite values or missing gradients make the check meaningless."""


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    worst_index: tuple
    analytic: np.ndarray
    numeric: np.ndarray

    def __str__(self):
        verdict = "ok" if self.passed else "FAIL"
        return f"grad_check {verdict}: max rel err {self.max_rel_err:.3e} at {self.worst_index}"


def grad_check(f, x, step=DEFAULT_STEP, tol=DEFAULT_TOL):
    """Compare backward-pass gradients of scalar-valued `f` at `x` to central differences.

    `f` must be a pure function of the tensor it receives. The relative
    error denominator is floored at 1, so near-zero gradients are
    compared absolutely.
    """
    probe = Tensor(x.data.copy(), requires_grad=True)
    out = f(probe)
    if out.size != 1:
        raise GradCheckError(f"function under check must return a scalar, got {out.shape}")
    if not np.isfinite(out.data).all():
        raise GradCheckError("non-finite forward value")
    out.backward()
    if probe.grad is None:
        raise GradCheckError("no gradient reached the input; check requires_grad wiring")
    analytic = probe.grad.copy()
    if not np.isfinite(analytic).all():
        raise GradCheckError("non-finite analytic gradient")

    numeric = np.zeros_like(probe.data)
    flat = probe.data.reshape(-1)
    nflat = numeric.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            h = step * (1.0 + abs(orig))
            flat[i] = orig + h
            fp = float(f(probe).data.reshape(-1)[0])
            flat[i] = orig - h
            fm = float(f(probe).data.reshape(-1)[0])
            flat[i] = orig
            nflat[i] = (fp - fm) / (2.0 * h)
    if not np.isfinite(numeric).all():
        raise GradCheckError("non-finite finite-difference estimate")

    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    rel = np.abs(analytic - numeric) / denom
    worst = np.unravel_index(int(np.argmax(rel)), rel.shape) if rel.size else ()
    max_err = float(rel.max()) if rel.size else 0.0
    return GradCheckReport(max_err, max_err <= tol, worst, analytic, numeric)
