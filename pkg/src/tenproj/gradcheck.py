"""Independent finite-difference oracle for analytic gradients.

``central_diff_gradient`` differentiates any deterministic scalar function
of a parameter array entry by entry; ``compare_gradients`` scores an
analytic gradient against it. Nothing here touches any analytic-backward
code path, so agreement is evidence rather than tautology. Stochastic
layers must be evaluated in eval mode (or with frozen masks) so the checked
function is deterministic.
"""

from dataclasses import dataclass

import numpy as np

__all__ = ["GradCheckReport", "central_diff_gradient", "compare_gradients"]

DEFAULT_STEP = 1e-5
DEFAULT_TOL = 1e-6
DEFAULT_TOL_ABS = 1e-8


@dataclass(frozen=True)
class GradCheckReport:
    """Outcome of an analytic-vs-numeric gradient comparison."""

    max_rel_err: float
    max_abs_err: float
    worst_index: tuple
    step: float | None
    passed: bool

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status}: max rel err {self.max_rel_err:.3e}, "
            f"max abs err {self.max_abs_err:.3e} at index {self.worst_index}"
        )


def central_diff_gradient(f, params, step=DEFAULT_STEP):
    """Central-difference gradient of a scalar function.

    Evaluates (f(p + h e) - f(p - h e)) / (2 h) for every entry of
    ``params``. ``f`` must be pure and deterministic; it receives a fresh
    perturbed copy each call and must not retain it.
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    params = np.asarray(params, dtype=float)
    grad = np.zeros_like(params)
    for idx in np.ndindex(params.shape):
        plus = params.copy()
        minus = params.copy()
        plus[idx] += step
        minus[idx] -= step
        fp, fm = float(f(plus)), float(f(minus))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"non-finite function value at index {idx}")
        grad[idx] = (fp - fm) / (2.0 * step)
    return grad


def compare_gradients(analytic, numeric, tol=DEFAULT_TOL, tol_abs=DEFAULT_TOL_ABS,
                      step=None):
    """Score an analytic gradient against a numeric one.

    Per entry, the relative error is |a - n| / max(|a|, |n|, tol_abs); the
    check passes where the relative error is within ``tol`` or the absolute
    error is within ``tol_abs`` (the near-zero fallback).
    """
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    if analytic.shape != numeric.shape:
        raise ValueError(
            f"shape mismatch: analytic {analytic.shape} vs numeric {numeric.shape}"
        )
    abs_err = np.abs(analytic - numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), tol_abs)
    rel_err = abs_err / denom
    if rel_err.size == 0:
        return GradCheckReport(0.0, 0.0, (), step, True)
    worst = tuple(int(i) for i in np.unravel_index(int(np.argmax(rel_err)),
                                                   rel_err.shape))
    passed = bool(np.all((rel_err <= tol) | (abs_err <= tol_abs)))
    return GradCheckReport(
        max_rel_err=float(rel_err.max()),
        max_abs_err=float(abs_err.max()),
        worst_index=worst,
        step=step,
        passed=passed,
    )
