"""Central finite-difference verification of hand-written gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

DEFAULT_EPS = 1e-4
DEFAULT_TOL = 1e-3


@dataclass(frozen=True)
class GradCheckReport:
    """Outcome of comparing analytic gradients against finite differences.

    ``max_rel_error`` is over every coordinate of every checked input;
    ``worst`` names the offending (input, flat index).
    """

    passed: bool
    max_rel_error: float
    tol: float
    eps: float
    worst: tuple[str, int]
    per_input: dict = field(default_factory=dict)

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        name, idx = self.worst
        return (f"{status}: max rel error {self.max_rel_error:.3e} "
                f"(tol {self.tol:.0e}) at {name}[{idx}]")


def relative_error(analytic: float, numeric: float) -> float:
    """|a - n| scaled by the larger magnitude, floored to avoid 0/0."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def finite_diff_grad_check(func, inputs: dict, analytic: dict,
                           eps: float = DEFAULT_EPS, tol: float = DEFAULT_TOL,
                           skip: frozenset = frozenset()) -> GradCheckReport:
    """Compare analytic gradients of a scalar function to central differences.

    Args:
        func: maps a dict of arrays (same keys as ``inputs``) to a float.
        inputs: base point; every array is checked coordinate by
            coordinate unless its key is listed in ``skip``.
        analytic: claimed gradients, one array per checked input, shaped
            like the corresponding input.
        eps: central-difference step.
        tol: max allowed relative error per coordinate.

    Perturbations run on float64 copies; ``func`` must be deterministic.
    """
    if eps <= 0.0 or tol <= 0.0:
        raise ValidationError("eps and tol must be positive")
    base = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
    checked = [k for k in base if k not in skip]
    for key in checked:
        if key not in analytic:
            raise ValidationError(f"no analytic gradient supplied for input {key!r}")
        if np.shape(analytic[key]) != base[key].shape:
            raise ValidationError(
                f"analytic gradient for {key!r} has shape {np.shape(analytic[key])}, "
                f"input has {base[key].shape}"
            )

    worst = ("", -1)
    max_err = 0.0
    per_input = {}
    for key in checked:
        grad = np.asarray(analytic[key], dtype=np.float64).ravel()
        flat = base[key].ravel()  # view; writes perturb the dict copy
        key_err = 0.0
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + eps
            f_plus = float(func(base))
            flat[i] = saved - eps
            f_minus = float(func(base))
            flat[i] = saved
            numeric = (f_plus - f_minus) / (2.0 * eps)
            err = relative_error(float(grad[i]), numeric)
            if err > key_err:
                key_err = err
            if err > max_err:
                max_err = err
                worst = (key, i)
        per_input[key] = key_err
    return GradCheckReport(passed=max_err <= tol, max_rel_error=max_err,
                           tol=tol, eps=eps, worst=worst, per_input=per_input)


def corrupt_gradients(analytic: dict, scale: float = 1.1) -> dict:
    """Scale every gradient; used as the harness negative control."""
    return {k: np.asarray(v, dtype=np.float64) * scale for k, v in analytic.items()}
