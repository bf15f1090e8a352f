"""Finite-difference verification of analytic gradients.

An op under test is wrapped as a closure:

    def op(*inputs):
        y, back = ...        # back(dy) -> tuple of grads, one per input
        return y, back

The checker projects the output onto a fixed random direction to get a
scalar, evaluates the analytic gradient through `back`, and compares
against central differences with step 1e-4. Runs require float64 inputs;
float32 round-off would drown the comparison.
"""

import numpy as np

from .rng import Rng

FD_STEP = 1e-4


class GradCheckReport:
    def __init__(self, max_rel_errors: list[float], tolerance: float):
        self.max_rel_errors = max_rel_errors
        self.tolerance = tolerance

    @property
    def passed(self) -> bool:
        return all(e < self.tolerance for e in self.max_rel_errors)

    def __repr__(self):
        errs = ", ".join(f"{e:.3e}" for e in self.max_rel_errors)
        return f"GradCheckReport(max_rel_errors=[{errs}], tol={self.tolerance:g}, passed={self.passed})"


def _scalarize_direction(shape, rng: Rng) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, shape).astype(np.float64)


def grad_check(op, inputs, tolerance: float = 1e-4, step: float = FD_STEP,
               seed: int = 0) -> GradCheckReport:
    """Compare analytic grads of `op` w.r.t. each input against central
    differences. Returns a report with the max relative error per input."""
    inputs = [np.asarray(x) for x in inputs]
    for i, x in enumerate(inputs):
        if x.dtype != np.float64:
            raise ValueError(f"grad_check requires float64 inputs (input {i} is {x.dtype})")

    y, back = op(*inputs)
    r = _scalarize_direction(np.shape(y), Rng(seed, 0xFD))
    analytic = back(np.array(r, dtype=np.float64, copy=True) if np.ndim(r) else r)
    if not isinstance(analytic, (tuple, list)):
        analytic = (analytic,)
    if len(analytic) != len(inputs):
        raise ValueError(f"op returned {len(analytic)} grads for {len(inputs)} inputs")

    max_errs = []
    for i, x in enumerate(inputs):
        ga = np.asarray(analytic[i], dtype=np.float64)
        gn = np.empty_like(x, dtype=np.float64)
        flat = x.reshape(-1)
        gn_flat = gn.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            yp = np.sum(op(*inputs)[0] * r)
            flat[j] = orig - step
            ym = np.sum(op(*inputs)[0] * r)
            flat[j] = orig
            gn_flat[j] = (yp - ym) / (2.0 * step)
        denom = np.maximum(1.0, np.maximum(np.abs(ga), np.abs(gn)))
        err = float(np.max(np.abs(ga - gn) / denom)) if flat.size else 0.0
        max_errs.append(err)
    return GradCheckReport(max_errs, tolerance)
