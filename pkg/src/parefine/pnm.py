"""Binary PNM (PGM P5 / PPM P6) reading and writing, maxval 255 only.

The parser tracks its byte offset so malformed files fail with a precise
location. Comments (# to end of line) are legal anywhere in the header.
"""

import numpy as np

from .errors import PnmFormatError, UnsupportedPnmError


def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    n = len(data)
    while pos < n:
        c = data[pos:pos + 1]
        if c == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    if pos >= n:
        raise PnmFormatError("unexpected end of header", pos)
    start = pos
    while pos < n and not data[pos:pos + 1].isspace():
        pos += 1
    return data[start:pos], pos


def _read_int(data: bytes, pos: int, what: str) -> tuple[int, int]:
    tok, newpos = _read_token(data, pos)
    if not tok.isdigit():
        raise PnmFormatError(f"expected integer {what}, got {tok!r}", newpos - len(tok))
    return int(tok), newpos


def load_pnm(path) -> np.ndarray:
    """Returns uint8 (H, W) for P5 or (H, W, 3) for P6."""
    with open(path, "rb") as fh:
        data = fh.read()
    magic, pos = _read_token(data, 0)
    if magic not in (b"P5", b"P6"):
        raise PnmFormatError(f"not a binary PGM/PPM (magic {magic!r})", 0)
    channels = 1 if magic == b"P5" else 3
    width, pos = _read_int(data, pos, "width")
    height, pos = _read_int(data, pos, "height")
    maxval, pos = _read_int(data, pos, "maxval")
    if maxval != 255:
        raise UnsupportedPnmError(f"only maxval 255 is supported, got {maxval}")
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise PnmFormatError("missing whitespace before raster", pos)
    pos += 1
    need = width * height * channels
    raster = data[pos:pos + need]
    if len(raster) != need:
        raise PnmFormatError(
            f"truncated raster: need {need} bytes, file has {len(raster)}",
            pos + len(raster))
    arr = np.frombuffer(raster, dtype=np.uint8)
    return arr.reshape((height, width) if channels == 1 else (height, width, 3))


def save_pnm(path, arr: np.ndarray) -> None:
    """Writes uint8 (H, W) as P5 or (H, W, 3) as P6."""
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    if arr.ndim == 2:
        magic, h, w = b"P5", *arr.shape
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic, h, w = b"P6", arr.shape[0], arr.shape[1]
    else:
        raise ValueError(f"expected (H,W) or (H,W,3) uint8 array, got {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h))
        fh.write(arr.tobytes())


def load_image(path, channels: int = 3) -> np.ndarray:
    """Float image in [0, 1], CxHxW. Grayscale files are replicated to three
    channels when channels=3; color files cannot be loaded single-channel."""
    raw = load_pnm(path)
    if raw.ndim == 2:
        plane = raw.astype(np.float32) / 255.0
        if channels == 1:
            return plane[None]
        return np.repeat(plane[None], 3, axis=0)
    if channels == 1:
        raise UnsupportedPnmError(f"{path}: color file where grayscale was expected")
    return (raw.astype(np.float32) / 255.0).transpose(2, 0, 1)


def write_image(path, tensor: np.ndarray) -> None:
    """CxHxW float in [0, 1] -> PGM (C=1) or PPM (C=3), values scaled by 255."""
    if tensor.ndim != 3 or tensor.shape[0] not in (1, 3):
        raise ValueError(f"expected 1xHxW or 3xHxW tensor, got {tensor.shape}")
    scaled = np.rint(np.clip(tensor, 0.0, 1.0) * 255.0).astype(np.uint8)
    if tensor.shape[0] == 1:
        save_pnm(path, scaled[0])
    else:
        save_pnm(path, scaled.transpose(1, 2, 0))
