"""Dense-tensor conventions and global numeric settings.

Tensors are plain C-contiguous numpy arrays. Images and maps are CxHxW,
batched activations are NxCxHxW; the flat buffer is row-major over those
axes. Two global switches live here:

* precision - float32 by default, float64 for gradient verification;
* debug finiteness checks - scans op outputs for NaN/Inf when enabled.
"""

from contextlib import contextmanager

import numpy as np

from .errors import NumericError

_DTYPE = np.float32
_DEBUG_CHECKS = False


def dtype() -> np.dtype:
    """Current default floating dtype (float32 or float64)."""
    return np.dtype(_DTYPE)


def set_precision(bits: int) -> None:
    """Switch the global default precision. Accepts 32 or 64."""
    global _DTYPE
    if bits == 32:
        _DTYPE = np.float32
    elif bits == 64:
        _DTYPE = np.float64
    else:
        raise ValueError(f"precision must be 32 or 64, got {bits}")


@contextmanager
def precision(bits: int):
    """Temporarily run with a different default precision."""
    old = 64 if _DTYPE == np.float64 else 32
    set_precision(bits)
    try:
        yield
    finally:
        set_precision(old)


def set_debug_checks(enabled: bool) -> None:
    """Enable per-op NaN/Inf scans (slow; meant for tests and debugging)."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(enabled)


def debug_checks_enabled() -> bool:
    return _DEBUG_CHECKS


def check_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    """Raise NumericError if x contains NaN/Inf. No-op unless debug checks are on."""
    if _DEBUG_CHECKS and not np.isfinite(x).all():
        raise NumericError(f"non-finite values in {what}")
    return x


def as_tensor(data, dt=None) -> np.ndarray:
    """Coerce to a C-contiguous array of the default (or given) dtype."""
    return np.ascontiguousarray(data, dtype=dt if dt is not None else _DTYPE)


def zeros(shape, dt=None) -> np.ndarray:
    return np.zeros(shape, dtype=dt if dt is not None else _DTYPE)
