"""Differentiable neural primitives with hand-derived backward passes.

Every op works on batched NxCxHxW activations and comes in a pair:

    y, cache = op(x, ...)
    dx[, dparam...] = op_backward(dy, cache)

Caches hold exactly what the backward needs, so the same parameters can be
run through several live forwards (the dual-branch training path relies on
this). No graph or tape: composites wire their own backwards by hand.
"""

import numpy as np

from . import tensor
from .errors import DimensionError


def _require(cond: bool, msg: str):
    if not cond:
        raise DimensionError(msg)


# ---------------------------------------------------------------------------
# conv2d: cross-correlation semantics, im2col layout (c_in, ky, kx) so the
# reduction order is input-channel-major, then kernel row-major.
# ---------------------------------------------------------------------------

def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    n, c = xp.shape[:2]
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride, :, :]  # N,C,OH,OW,KH,KW
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kh * kw, oh * ow)
    return np.ascontiguousarray(cols)


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 1, pad: int = 0):
    """y[n,o] = sum_{c,ky,kx} w[o,c,ky,kx] * x[n,c,.*stride+ky-pad,...] + b[o]."""
    _require(x.ndim == 4, f"conv2d input must be NxCxHxW, got {x.ndim} dims")
    _require(w.ndim == 4, f"conv2d weight must be OxIxKhxKw, got {w.ndim} dims")
    n, c, h, wd = x.shape
    co, ci, kh, kw = w.shape
    _require(ci == c, f"conv2d channel axis mismatch: input has {c}, weight expects {ci}")
    _require(b.shape == (co,), f"conv2d bias axis mismatch: expected ({co},), got {b.shape}")
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    _require(oh > 0 and ow > 0, f"conv2d output extent not positive: {oh}x{ow}")

    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = _im2col(xp, kh, kw, stride, oh, ow)          # N, C*KH*KW, OH*OW
    wmat = w.reshape(co, ci * kh * kw)
    y = np.matmul(wmat, cols)                           # N, CO, OH*OW
    y += b[:, None]
    y = y.reshape(n, co, oh, ow)
    cache = (cols, w.shape, x.shape, stride, pad, wmat)
    return tensor.check_finite(y, "conv2d"), cache


def conv2d_backward(dy: np.ndarray, cache):
    cols, wshape, xshape, stride, pad, wmat = cache
    n, c, h, wd = xshape
    co, ci, kh, kw = wshape
    oh, ow = dy.shape[2], dy.shape[3]
    dyf = dy.reshape(n, co, oh * ow)

    db = dyf.sum(axis=(0, 2))
    dwmat = np.matmul(dyf, cols.transpose(0, 2, 1)).sum(axis=0)
    dw = dwmat.reshape(wshape)

    dcols = np.matmul(wmat.T, dyf)                      # N, C*KH*KW, OH*OW
    dcols = dcols.reshape(n, c, kh, kw, oh, ow)
    dxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=dy.dtype)
    for ky in range(kh):                                # fixed scatter order
        for kx in range(kw):
            dxp[:, :, ky:ky + stride * oh:stride, kx:kx + stride * ow:stride] += dcols[:, :, ky, kx]
    dx = dxp[:, :, pad:pad + h, pad:pad + wd] if pad else dxp
    return dx, dw, db


# ---------------------------------------------------------------------------
# Batch normalization over (N, H, W) per channel. Population (biased)
# variance is used both for normalization and the running estimate, so
# train-time statistics and inference statistics agree in the limit.
# ---------------------------------------------------------------------------

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def batchnorm(x, gamma, beta, running_mean, running_var, mode: str,
              momentum: float = BN_MOMENTUM, eps: float = BN_EPS,
              update_running: bool = True):
    """mode 'train' normalizes by batch stats (and may update the running
    buffers in place); mode 'infer' normalizes by the running buffers."""
    _require(x.ndim == 4, f"batchnorm input must be NxCxHxW, got {x.ndim} dims")
    c = x.shape[1]
    _require(gamma.shape == (c,) and beta.shape == (c,),
             f"batchnorm gamma/beta must have length {c} (channel axis)")
    if mode == "train":
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        if update_running:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mean
            running_var *= 1.0 - momentum
            running_var += momentum * var
    elif mode == "infer":
        mean, var = running_mean, running_var
    else:
        raise ValueError(f"batchnorm mode must be 'train' or 'infer', got {mode!r}")

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[:, None, None]) * inv_std[:, None, None]
    y = gamma[:, None, None] * xhat + beta[:, None, None]
    cache = (xhat, gamma, inv_std, mode)
    return tensor.check_finite(y, "batchnorm"), cache


def batchnorm_backward(dy: np.ndarray, cache):
    xhat, gamma, inv_std, mode = cache
    dgamma = (dy * xhat).sum(axis=(0, 2, 3))
    dbeta = dy.sum(axis=(0, 2, 3))
    dxhat = dy * gamma[:, None, None]
    if mode == "infer":
        # Running stats are constants: straight rescale.
        dx = dxhat * inv_std[:, None, None]
        return dx, dgamma, dbeta
    # Train mode: mean and variance depend on x. With m = N*H*W per channel,
    #   dx = inv_std/m * (m*dxhat - sum(dxhat) - xhat * sum(dxhat*xhat))
    m = dy.shape[0] * dy.shape[2] * dy.shape[3]
    s1 = dxhat.sum(axis=(0, 2, 3))[:, None, None]
    s2 = (dxhat * xhat).sum(axis=(0, 2, 3))[:, None, None]
    dx = (inv_std[:, None, None] / m) * (m * dxhat - s1 - xhat * s2)
    return dx, dgamma, dbeta


# ---------------------------------------------------------------------------
# Pointwise and shape ops
# ---------------------------------------------------------------------------

def relu(x):
    y = np.maximum(x, 0.0)
    return y, (x > 0.0)


def relu_backward(dy, cache):
    return dy * cache


def sigmoid(x):
    # Branch on sign for stability; both halves are exact where used.
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    return tensor.check_finite(y, "sigmoid"), y


def sigmoid_backward(dy, cache):
    y = cache
    return dy * y * (1.0 - y)


def maxpool2(x):
    """2x2 max pooling, stride 2. Ties route the gradient to the first
    occurrence in row-major window order."""
    n, c, h, w = x.shape
    _require(h % 2 == 0 and w % 2 == 0,
             f"maxpool2 needs even spatial dims, got {h}x{w}")
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(n, c, h // 2, w // 2, 4)
    arg = win.argmax(axis=-1)                 # first max wins ties
    y = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return y, (arg, x.shape)


def maxpool2_backward(dy, cache):
    arg, xshape = cache
    n, c, h, w = xshape
    dwin = np.zeros((n, c, h // 2, w // 2, 4), dtype=dy.dtype)
    np.put_along_axis(dwin, arg[..., None], dy[..., None], axis=-1)
    dx = dwin.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return dx.reshape(xshape)


def upsample_nearest2(x):
    y = np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)
    return y, None


def upsample_nearest2_backward(dy, cache=None):
    n, c, h, w = dy.shape
    return dy.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


def concat_channels(xs):
    first = xs[0]
    for x in xs[1:]:
        _require(x.shape[0] == first.shape[0] and x.shape[2:] == first.shape[2:],
                 f"concat_channels spatial/batch mismatch: {x.shape} vs {first.shape}")
    y = np.concatenate(xs, axis=1)
    return y, [x.shape[1] for x in xs]


def concat_channels_backward(dy, cache):
    sizes = cache
    out, at = [], 0
    for s in sizes:
        out.append(dy[:, at:at + s])
        at += s
    return out


def add(a, b):
    _require(a.shape == b.shape, f"add shape mismatch: {a.shape} vs {b.shape}")
    return a + b, None


def add_backward(dy, cache=None):
    return dy, dy


def mul(a, b):
    _require(a.shape == b.shape, f"mul shape mismatch: {a.shape} vs {b.shape}")
    return a * b, (a, b)


def mul_backward(dy, cache):
    a, b = cache
    return dy * b, dy * a
