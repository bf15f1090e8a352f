"""Multi-scale residual similarity gathering and per-pixel filter application.

The coarse map is expanded into similarity volumes: channel j of the d*d
volume at pixel p is the product of p's value with its j-th neighbor
(zero outside the image). Volumes at window sizes 3, 5, ..., D are fused by
residual summation through bottleneck stages (conv1x1 -> batchnorm -> ReLU),
and the final D^2xHxW volume is read as one D x D filter per pixel. Those
filters then rewrite the coarse map: each output pixel is the filter-weighted
mean of its neighborhood, normalized by the filter's element sum.

Channel j maps to displacement (dy, dx) row-major: j = (dy+r)*d + (dx+r)
with r = (d-1)/2. All products of probabilities are nonnegative and the
residual term is ReLU-gated, so filter banks are nonnegative by construction.
"""

import numpy as np

from . import ops, tensor
from .errors import DimensionError, ParameterError
from .params import ParamStore
from .rng import Rng

SUPPORTED_D = (3, 5, 7, 9)
APPLY_EPS = 1e-8

# Active allocation meter for the memory benchmark; see bench.py.
_METER = None


class VolumeAllocationMeter:
    """Records the transient similarity/filter volume buffers as they are
    allocated, so the benchmark can report the peak single-buffer footprint
    (the Theta(D^2*H*W) term)."""

    def __init__(self):
        self.allocations: list[int] = []

    def record(self, nbytes: int):
        self.allocations.append(nbytes)

    @property
    def peak_single_bytes(self) -> int:
        return max(self.allocations, default=0)

    @property
    def total_bytes(self) -> int:
        return sum(self.allocations)


class meter_volume_allocations:
    def __enter__(self) -> VolumeAllocationMeter:
        global _METER
        self._prev = _METER
        _METER = VolumeAllocationMeter()
        return _METER

    def __exit__(self, *exc):
        global _METER
        _METER = self._prev
        return False


def _alloc_volume(shape, dtype) -> np.ndarray:
    buf = np.empty(shape, dtype=dtype)
    if _METER is not None:
        _METER.record(buf.nbytes)
    return buf


# --------------------------------------------------------------------------
# Similarity volume
# --------------------------------------------------------------------------

def _offsets(d: int):
    r = (d - 1) // 2
    return [(dy + r, dx + r) for dy in range(-r, r + 1) for dx in range(-r, r + 1)]


def _as_batched(y):
    """Accept (H,W), (1,H,W) or (N,1,H,W); return (NxHxW planes, form tag)."""
    if y.ndim == 2:
        return y[None], "hw"
    if y.ndim == 3:
        if y.shape[0] != 1:
            raise DimensionError(f"coarse map must be single-channel, got shape {y.shape}")
        return y, "chw"
    if y.ndim == 4:
        if y.shape[1] != 1:
            raise DimensionError(f"coarse map must be single-channel, got shape {y.shape}")
        return y[:, 0], "nchw"
    raise DimensionError(f"coarse map must be 2-4 dims, got shape {y.shape}")


def _unbatch(a, form):
    """Drop the batch axis again for unbatched callers (a is N x ... x H x W)."""
    return a if form == "nchw" else a[0]


def _restore_grad(dy_n1hw, form):
    if form == "nchw":
        return dy_n1hw
    if form == "chw":
        return dy_n1hw[0]
    return dy_n1hw[0, 0]


def similarity_volume(coarse: np.ndarray, d: int):
    """Per-pixel neighborhood products: vol[j, p] = y(p + offset_j) * y(p).

    Returns (vol, cache) with vol of shape d^2 x H x W (or N x d^2 x H x W
    for batched input). Out-of-image neighbors contribute exactly 0.
    """
    if d % 2 == 0 or d < 3:
        raise ParameterError(f"similarity window must be odd and >= 3, got {d}")
    y, form = _as_batched(coarse)
    n, h, w = y.shape
    r = (d - 1) // 2
    yp = np.pad(y, ((0, 0), (r, r), (r, r)))
    vol = _alloc_volume((n, d * d, h, w), y.dtype)
    for j, (a, b) in enumerate(_offsets(d)):
        np.multiply(yp[:, a:a + h, b:b + w], y, out=vol[:, j])
    cache = (y, d, form)
    return _unbatch(vol, form), cache


def similarity_volume_backward(dvol: np.ndarray, cache):
    y, d, form = cache
    if form != "nchw":
        dvol = dvol[None]
    n, h, w = y.shape
    r = (d - 1) // 2
    yp = np.pad(y, ((0, 0), (r, r), (r, r)))
    dy = np.zeros_like(y)
    gp = np.zeros_like(yp)  # neighbor-side grads, padded coords
    for j, (a, b) in enumerate(_offsets(d)):
        dy += dvol[:, j] * yp[:, a:a + h, b:b + w]   # d/dy(p) of y(p+o)*y(p)
        gp[:, a:a + h, b:b + w] += dvol[:, j] * y    # d/dy(p+o); pad rows drop
    dy += gp[:, r:r + h, r:r + w]
    return _restore_grad(dy[:, None], form)


# --------------------------------------------------------------------------
# Bottleneck stages and the residual recursion
# --------------------------------------------------------------------------

def stage_sizes(d_final: int) -> list[int]:
    """Window sizes whose volumes get lifted: 3, 5, ..., D-2."""
    return list(range(3, d_final, 2))


def init_mrsg_params(d_final: int, rng: Rng, store: ParamStore | None = None) -> ParamStore:
    """Bottleneck parameters for every d -> d+2 stage, under the mrsg.* namespace."""
    if d_final not in SUPPORTED_D:
        raise ParameterError(f"filter size must be one of {SUPPORTED_D}, got {d_final}")
    store = store if store is not None else ParamStore()
    for d in stage_sizes(d_final):
        cin, cout = d * d, (d + 2) * (d + 2)
        bound = np.sqrt(6.0 / cin)
        store.add(f"mrsg.f{d}.w", rng.uniform(-bound, bound, (cout, cin, 1, 1)))
        store.add(f"mrsg.f{d}.b", np.zeros(cout))
        store.add(f"mrsg.f{d}.gamma", np.ones(cout))
        store.add(f"mrsg.f{d}.beta", np.zeros(cout))
        store.add_buffer(f"mrsg.f{d}.mean", np.zeros(cout))
        store.add_buffer(f"mrsg.f{d}.var", np.ones(cout))
    return store


def mrsg_param_count(d_final: int) -> tuple[int, float]:
    count = 0
    for d in stage_sizes(d_final):
        cin, cout = d * d, (d + 2) * (d + 2)
        count += cout * cin + cout + 2 * cout
    return count, count * 4 / 2**20


def bottleneck_f(vol: np.ndarray, store: ParamStore, d: int, mode: str,
                 update_running: bool = True):
    """conv1x1 -> batchnorm -> ReLU lifting a d^2-channel volume to (d+2)^2."""
    w = store[f"mrsg.f{d}.w"].value
    if vol.shape[1] != w.shape[1]:
        raise DimensionError(
            f"bottleneck stage {d} expects {w.shape[1]} channels, got {vol.shape[1]}")
    y, c_conv = ops.conv2d(vol, w, store[f"mrsg.f{d}.b"].value)
    y, c_bn = ops.batchnorm(y, store[f"mrsg.f{d}.gamma"].value, store[f"mrsg.f{d}.beta"].value,
                            store.buffer(f"mrsg.f{d}.mean"), store.buffer(f"mrsg.f{d}.var"),
                            mode, update_running=update_running)
    y, c_relu = ops.relu(y)
    return y, (d, c_conv, c_bn, c_relu)


def bottleneck_f_backward(dy: np.ndarray, cache, store: ParamStore):
    d, c_conv, c_bn, c_relu = cache
    dy = ops.relu_backward(dy, c_relu)
    dy, dgamma, dbeta = ops.batchnorm_backward(dy, c_bn)
    store[f"mrsg.f{d}.gamma"].grad += dgamma
    store[f"mrsg.f{d}.beta"].grad += dbeta
    dx, dw, db = ops.conv2d_backward(dy, c_conv)
    store[f"mrsg.f{d}.w"].grad += dw
    store[f"mrsg.f{d}.b"].grad += db
    return dx


def mrsg_assemble(coarse: np.ndarray, d_final: int, store: ParamStore,
                  mode: str = "train", update_running: bool = True):
    """Residual recursion over window sizes: start from the 3x3 volume,
    lift through the bottleneck, add the next raw volume, up to D.

    Returns (filter_bank, cache); the bank is D^2 x H x W per sample, one
    nonnegative D x D filter per pixel.
    """
    if d_final not in SUPPORTED_D:
        raise ParameterError(f"filter size must be one of {SUPPORTED_D}, got {d_final}")
    y2d, form = _as_batched(coarse)
    batched = y2d[:, None]  # N x 1 x H x W throughout the recursion
    cur, c3 = similarity_volume(batched, 3)
    stage_caches = []
    for d in stage_sizes(d_final):
        lifted, cf = bottleneck_f(cur, store, d, mode, update_running)
        nxt, cs = similarity_volume(batched, d + 2)
        np.add(nxt, lifted, out=nxt)  # residual sum, reusing the raw volume buffer
        stage_caches.append((cf, cs))
        cur = nxt
    if tensor.debug_checks_enabled() and np.any(cur < 0):
        raise AssertionError("filter bank lost nonnegativity")
    tensor.check_finite(cur, "mrsg_assemble")
    return _unbatch(cur, form), (c3, stage_caches, form)


def mrsg_assemble_backward(dbank: np.ndarray, cache, store: ParamStore):
    c3, stage_caches, form = cache
    if form != "nchw":
        dbank = dbank[None]
    dy = None
    dcur = dbank
    for cf, cs in reversed(stage_caches):
        g = similarity_volume_backward(dcur, cs)
        dy = g if dy is None else dy + g
        dcur = bottleneck_f_backward(dcur, cf, store)
    g = similarity_volume_backward(dcur, c3)
    dy = g if dy is None else dy + g
    return _restore_grad(dy, form)


# --------------------------------------------------------------------------
# Filter application
# --------------------------------------------------------------------------

def apply_pa_filters(coarse: np.ndarray, bank: np.ndarray, eps: float = APPLY_EPS,
                     normalize: str = "sum"):
    """Refine the coarse map with the per-pixel filters, zero padding outside
    the image. The raw response is sum_j K_p[j]*y(p+o_j); how it is kept in
    [0, 1] is switchable:

      'sum'     Y = raw / (sum_j K_p[j] + eps)   (filter-weighted mean; default)
      'sigmoid' Y = sigmoid(raw)
      'clamp'   Y = min(max(raw, 0), 1)
    """
    if normalize not in ("sum", "sigmoid", "clamp"):
        raise ParameterError(f"unknown filter normalization {normalize!r}")
    y, form = _as_batched(coarse)
    kb = bank[None] if bank.ndim == 3 else bank
    n, h, w = y.shape
    if kb.shape[0] != n or kb.shape[2:] != (h, w):
        raise DimensionError(
            f"filter bank shape {bank.shape} does not match coarse map {coarse.shape}")
    d2 = kb.shape[1]
    d = int(round(np.sqrt(d2)))
    if d * d != d2 or d % 2 == 0:
        raise DimensionError(f"filter bank channel count {d2} is not an odd square")

    r = (d - 1) // 2
    yp = np.pad(y, ((0, 0), (r, r), (r, r)))
    raw = np.zeros_like(y)
    for j, (a, b) in enumerate(_offsets(d)):
        raw += kb[:, j] * yp[:, a:a + h, b:b + w]
    if normalize == "sum":
        den = kb.sum(axis=1) + eps
        out = (raw / den)[:, None]
        extra = den
    elif normalize == "sigmoid":
        out, extra = ops.sigmoid(raw[:, None])
    else:
        out = np.clip(raw, 0.0, 1.0)[:, None]
        extra = None
    cache = (y, kb, raw, extra, d, form, bank.ndim == 3, normalize)
    tensor.check_finite(out, "apply_pa_filters")
    return _restore_grad(out, form) if form == "hw" else _unbatch(out, form), cache


def apply_pa_filters_backward(dout: np.ndarray, cache):
    y, kb, raw, extra, d, form, bank_unbatched, normalize = cache
    if form == "hw":
        dout = dout[None, None]
    elif form == "chw":
        dout = dout[None]
    dz = dout[:, 0]
    n, h, w = y.shape
    r = (d - 1) // 2
    yp = np.pad(y, ((0, 0), (r, r), (r, r)))

    if normalize == "sum":
        den = extra
        draw = dz / den
        dden = -dz * raw / (den * den)
    elif normalize == "sigmoid":
        draw = ops.sigmoid_backward(dout, extra)[:, 0]
        dden = None
    else:
        draw = dz * ((raw >= 0.0) & (raw <= 1.0))
        dden = None
    dbank = np.empty_like(kb)
    gp = np.zeros_like(yp)
    for j, (a, b) in enumerate(_offsets(d)):
        np.multiply(draw, yp[:, a:a + h, b:b + w], out=dbank[:, j])
        if dden is not None:
            dbank[:, j] += dden
        gp[:, a:a + h, b:b + w] += draw * kb[:, j]
    dy = _restore_grad(gp[:, r:r + h, r:r + w][:, None], form)
    if bank_unbatched:
        dbank = dbank[0]
    return dy, dbank


# --------------------------------------------------------------------------
# Filter visualization grid
# --------------------------------------------------------------------------

SEPARATOR_GRAY = 64


def export_filters(bank: np.ndarray, region: tuple[int, int, int, int],
                   stride: int) -> np.ndarray:
    """Render sampled per-pixel filters as a tiled uint8 grid.

    `region` is (top, left, height, width); pixels are sampled every
    `stride` rows/cols starting at the region corner. Each DxD filter is
    min-max normalized to [0, 255] on its own (white = high response); a
    constant filter renders mid-gray 128. Tiles are laid out with 1-pixel
    separator lines (gray 64) between and around them.
    """
    if bank.ndim != 3:
        raise DimensionError(f"expected a single filter bank (D^2,H,W), got {bank.shape}")
    d2, h, w = bank.shape
    d = int(round(np.sqrt(d2)))
    top, left, rh, rw = region
    if top < 0 or left < 0 or top + rh > h or left + rw > w:
        raise ParameterError(f"region {region} outside bank extent {h}x{w}")
    rows = list(range(top, top + rh, stride))
    cols = list(range(left, left + rw, stride))
    grid = np.full((len(rows) * (d + 1) + 1, len(cols) * (d + 1) + 1),
                   SEPARATOR_GRAY, dtype=np.uint8)
    for i, y in enumerate(rows):
        for j, x in enumerate(cols):
            k = bank[:, y, x].reshape(d, d)
            lo, hi = float(k.min()), float(k.max())
            if hi > lo:
                tile = np.rint((k - lo) / (hi - lo) * 255.0).astype(np.uint8)
            else:
                tile = np.full((d, d), 128, dtype=np.uint8)
            grid[1 + i * (d + 1):1 + i * (d + 1) + d,
                 1 + j * (d + 1):1 + j * (d + 1) + d] = tile
    return grid
