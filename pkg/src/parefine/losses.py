"""Training objective: dice segmentation loss plus a dual-branch
consistency regularizer, combined as total = l_s + lambda * l_r."""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError

DICE_EPS = 1e-5


@dataclass
class LossValue:
    total: float
    l_s: float
    l_r: float
    lam: float


def dice_loss(y: np.ndarray, g: np.ndarray, eps: float = DICE_EPS):
    """Soft dice with squared-sum denominator:
    1 - (2*sum(y*g) + eps) / (sum(y^2) + sum(g^2) + eps).

    Returns (value, back); back(dl) gives the grad w.r.t. y.
    """
    if y.shape != g.shape:
        raise DimensionError(f"dice_loss shape mismatch: {y.shape} vs {g.shape}")
    inter = float((y * g).sum())
    denom = float((y * y).sum() + (g * g).sum() + eps)
    numer = 2.0 * inter + eps
    value = 1.0 - numer / denom

    def back(dl=1.0):
        # d/dy [ -numer/denom ] = -(2g*denom - numer*2y) / denom^2
        return dl * (-(2.0 * g * denom - numer * 2.0 * y) / (denom * denom))

    return value, back


def reg_loss(y1: np.ndarray, y2: np.ndarray):
    """Euclidean norm of the difference over all pixels, no averaging.
    Subgradient 0 at the origin."""
    if y1.shape != y2.shape:
        raise DimensionError(f"reg_loss shape mismatch: {y1.shape} vs {y2.shape}")
    diff = y1 - y2
    value = float(np.sqrt((diff * diff).sum()))

    def back(dl=1.0):
        if value == 0.0:
            z = np.zeros_like(diff)
            return z, z.copy()
        d = dl * diff / value
        return d, -d

    return value, back


def total_loss(y1: np.ndarray, y2: np.ndarray, g: np.ndarray, lam: float):
    """Combined objective; dice is measured on the main branch only.

    Returns (LossValue, back); back() yields (d_y1, d_y2). The reported
    total uses the identical arithmetic the backward distributes.
    """
    l_s, back_s = dice_loss(y1, g)
    l_r, back_r = reg_loss(y1, y2)
    value = LossValue(total=l_s + lam * l_r, l_s=l_s, l_r=l_r, lam=lam)

    def back(dl=1.0):
        d1 = back_s(dl)
        if lam != 0.0:
            r1, r2 = back_r(dl * lam)
            return d1 + r1, r2
        return d1, np.zeros_like(y2)

    return value, back
