"""Compact U-Net producing the 1-channel coarse probability map.

Each level is two (conv3x3 -> batchnorm -> ReLU) blocks; levels are joined
by 2x2 max pooling on the way down and nearest-neighbor x2 upsampling
followed by a conv3x3 block on the way up, with skip connections by channel
concatenation. A final conv1x1 plus sigmoid yields probabilities. Default
widths (8, 16, 32, 64, 128) put the learnable footprint near 2 MB.

Inputs whose spatial dims are not divisible by 2^(depth-1) are mirror-padded
to the next multiple and the output is cropped back, so full images of any
size run through unchanged in shape.
"""

from dataclasses import dataclass

import numpy as np

from . import ops, tensor
from .errors import DimensionError
from .params import ParamStore
from .rng import Rng


@dataclass
class UNetConfig:
    depth: int = 5
    base_width: int = 8
    in_channels: int = 3
    out_channels: int = 1
    sigmoid_output: bool = True  # if False the coarse map is raw logits

    def __post_init__(self):
        if self.depth < 2:
            raise ValueError(f"depth must be >= 2, got {self.depth}")
        if self.base_width < 1:
            raise ValueError(f"base_width must be >= 1, got {self.base_width}")
        if self.out_channels != 1:
            raise ValueError("coarse map is single-channel; out_channels must be 1")

    @property
    def widths(self) -> list[int]:
        return [self.base_width * (1 << i) for i in range(self.depth)]

    @property
    def multiple(self) -> int:
        return 1 << (self.depth - 1)


# --------------------------------------------------------------------------
# Layer plan: one flat description drives initialization, the closed-form
# parameter count, and the forward/backward wiring.
# --------------------------------------------------------------------------

def _conv_entries(prefix: str, cin: int, cout: int, k: int):
    return [("conv", prefix, cin, cout, k), ("bn", prefix, cout)]


def layer_plan(cfg: UNetConfig):
    w = cfg.widths
    plan = []
    for i in range(cfg.depth):
        cin = cfg.in_channels if i == 0 else w[i - 1]
        plan += _conv_entries(f"enc{i}.1", cin, w[i], 3)
        plan += _conv_entries(f"enc{i}.2", w[i], w[i], 3)
    for i in range(cfg.depth - 2, -1, -1):
        plan += _conv_entries(f"up{i}", w[i + 1], w[i], 3)
        plan += _conv_entries(f"dec{i}.1", 2 * w[i], w[i], 3)
        plan += _conv_entries(f"dec{i}.2", w[i], w[i], 3)
    plan.append(("conv", "head", w[0], cfg.out_channels, 1))
    return plan


def param_count(cfg: UNetConfig) -> tuple[int, float]:
    """Closed-form learnable scalar count and its size in MiB (4 B/value)."""
    count = 0
    for entry in layer_plan(cfg):
        if entry[0] == "conv":
            _, _, cin, cout, k = entry
            count += cout * cin * k * k + cout
        else:
            count += 2 * entry[2]  # gamma + beta
    return count, count * 4 / 2**20


def init_params(cfg: UNetConfig, rng: Rng, store: ParamStore | None = None) -> ParamStore:
    """Kaiming-uniform fan-in conv weights, zero biases, unit gamma."""
    store = store if store is not None else ParamStore()
    for entry in layer_plan(cfg):
        if entry[0] == "conv":
            _, name, cin, cout, k = entry
            bound = np.sqrt(6.0 / (cin * k * k))
            store.add(f"{name}.w", rng.uniform(-bound, bound, (cout, cin, k, k)))
            store.add(f"{name}.b", np.zeros(cout))
        else:
            _, name, c = entry
            store.add(f"{name}.gamma", np.ones(c))
            store.add(f"{name}.beta", np.zeros(c))
            store.add_buffer(f"{name}.mean", np.zeros(c))
            store.add_buffer(f"{name}.var", np.ones(c))
    return store


# --------------------------------------------------------------------------
# Conv->BN->ReLU unit, shared by encoder/decoder stages.
# --------------------------------------------------------------------------

def _cbr_forward(x, store, name, mode, update_running, pad):
    w, b = store[f"{name}.w"].value, store[f"{name}.b"].value
    y, c_conv = ops.conv2d(x, w, b, stride=1, pad=pad)
    y, c_bn = ops.batchnorm(y, store[f"{name}.gamma"].value, store[f"{name}.beta"].value,
                            store.buffer(f"{name}.mean"), store.buffer(f"{name}.var"),
                            mode, update_running=update_running)
    y, c_relu = ops.relu(y)
    return y, (name, c_conv, c_bn, c_relu)


def _cbr_backward(dy, cache, store):
    name, c_conv, c_bn, c_relu = cache
    dy = ops.relu_backward(dy, c_relu)
    dy, dgamma, dbeta = ops.batchnorm_backward(dy, c_bn)
    store[f"{name}.gamma"].grad += dgamma
    store[f"{name}.beta"].grad += dbeta
    dx, dw, db = ops.conv2d_backward(dy, c_conv)
    store[f"{name}.w"].grad += dw
    store[f"{name}.b"].grad += db
    return dx


# --------------------------------------------------------------------------
# Mirror pad / crop so arbitrary sizes pass through the pooling pyramid.
# --------------------------------------------------------------------------

def _pad_to_multiple(x, m):
    h, w = x.shape[2], x.shape[3]
    hp = -(-h // m) * m
    wp = -(-w // m) * m
    if hp == h and wp == w:
        return x, None
    pt, pl = (hp - h) // 2, (wp - w) // 2
    rows = np.pad(np.arange(h), (pt, hp - h - pt), mode="symmetric")
    cols = np.pad(np.arange(w), (pl, wp - w - pl), mode="symmetric")
    return x[:, :, rows[:, None], cols[None, :]], (h, w, pt, pl, rows, cols)


def _pad_backward(dxp, padinfo):
    if padinfo is None:
        return dxp
    h, w, pt, pl, rows, cols = padinfo
    n, c = dxp.shape[:2]
    drows = np.zeros((n, c, h, dxp.shape[3]), dtype=dxp.dtype)
    for i, src in enumerate(rows):          # mirrored positions accumulate
        drows[:, :, src, :] += dxp[:, :, i, :]
    dx = np.zeros((n, c, h, w), dtype=dxp.dtype)
    for j, src in enumerate(cols):
        dx[:, :, :, src] += drows[:, :, :, j]
    return dx


def _crop(y, padinfo):
    if padinfo is None:
        return y
    h, w, pt, pl = padinfo[:4]
    return y[:, :, pt:pt + h, pl:pl + w]


def _crop_backward(dy, padinfo, padded_hw):
    if padinfo is None:
        return dy
    h, w, pt, pl = padinfo[:4]
    out = np.zeros(dy.shape[:2] + padded_hw, dtype=dy.dtype)
    out[:, :, pt:pt + h, pl:pl + w] = dy
    return out


# --------------------------------------------------------------------------
# Forward / backward
# --------------------------------------------------------------------------

def unet_forward(x: np.ndarray, store: ParamStore, cfg: UNetConfig,
                 mode: str = "train", update_running: bool = True):
    """Coarse map for a 3xHxW image or an Nx3xHxW batch.

    Returns (probs, cache); probs has the input's spatial dims and one
    channel. The cache drives `unet_backward`.
    """
    squeezed = x.ndim == 3
    if squeezed:
        x = x[None]
    if x.ndim != 4 or x.shape[1] != cfg.in_channels:
        raise DimensionError(
            f"expected channel axis of {cfg.in_channels}, got input shape {x.shape}")

    xp, padinfo = _pad_to_multiple(x, cfg.multiple)
    caches = []
    skips = []
    h = xp
    for i in range(cfg.depth):
        h, c1 = _cbr_forward(h, store, f"enc{i}.1", mode, update_running, pad=1)
        h, c2 = _cbr_forward(h, store, f"enc{i}.2", mode, update_running, pad=1)
        caches.append(("enc", c1, c2))
        if i < cfg.depth - 1:
            skips.append(h)
            h, cp = ops.maxpool2(h)
            caches.append(("pool", cp))
    for i in range(cfg.depth - 2, -1, -1):
        h, _ = ops.upsample_nearest2(h)
        h, cu = _cbr_forward(h, store, f"up{i}", mode, update_running, pad=1)
        h, ccat = ops.concat_channels([skips[i], h])
        h, c1 = _cbr_forward(h, store, f"dec{i}.1", mode, update_running, pad=1)
        h, c2 = _cbr_forward(h, store, f"dec{i}.2", mode, update_running, pad=1)
        caches.append(("dec", cu, ccat, c1, c2))
    logits, c_head = ops.conv2d(h, store["head.w"].value, store["head.b"].value, pad=0)
    caches.append(("head", c_head))
    if cfg.sigmoid_output:
        probs, c_sig = ops.sigmoid(logits)
        caches.append(("sig", c_sig))
    else:
        probs = logits
    out = _crop(probs, padinfo)
    cache = (caches, padinfo, xp.shape[2:], cfg, squeezed)
    return (out[0] if squeezed else out), cache


def unet_backward(dprobs: np.ndarray, cache, store: ParamStore) -> np.ndarray:
    """Accumulates parameter grads into the store; returns grad w.r.t. input."""
    caches, padinfo, padded_hw, cfg, squeezed = cache
    if squeezed:
        dprobs = dprobs[None]
    dy = _crop_backward(dprobs, padinfo, padded_hw)
    stack = list(caches)
    if cfg.sigmoid_output:
        _, c_sig = stack.pop()
        dy = ops.sigmoid_backward(dy, c_sig)
    _, c_head = stack.pop()
    dy, dw, db = ops.conv2d_backward(dy, c_head)
    store["head.w"].grad += dw
    store["head.b"].grad += db
    # Decoder stages pop in level order 0 .. depth-2 (reverse of forward).
    skip_grads = {}
    for level in range(cfg.depth - 1):
        _, cu, ccat, c1, c2 = stack.pop()
        dy = _cbr_backward(dy, c2, store)
        dy = _cbr_backward(dy, c1, store)
        dskip, dy = ops.concat_channels_backward(dy, ccat)
        skip_grads[level] = dskip
        dy = _cbr_backward(dy, cu, store)
        dy = ops.upsample_nearest2_backward(dy)
    # Encoder from the bottom up the stack; skip grads rejoin above each pool.
    for i in range(cfg.depth - 1, -1, -1):
        if i < cfg.depth - 1:
            _, cp = stack.pop()
            dy = ops.maxpool2_backward(dy, cp)
            dy = dy + skip_grads[i]
        _, c1, c2 = stack.pop()
        dy = _cbr_backward(dy, c2, store)
        dy = _cbr_backward(dy, c1, store)
    dx = _pad_backward(dy, padinfo)
    return dx[0] if squeezed else dx
