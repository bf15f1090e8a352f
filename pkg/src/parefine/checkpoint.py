"""Binary checkpoints: magic 'PARF', version 1, little-endian throughout.

Layout:
    magic(4s) version(u32) precision_bits(u32)
    config_len(u32) config_utf8            -- canonical key=value text
    iteration(u64)
    n_streams(u32) { name(u16+bytes) seed(u64) stream(u64)
                     counter(4*u64) key(2*u64) buffer(4*u64)
                     buffer_pos(u32) has_uint32(u32) uinteger(u64) }
    n_params(u32)  { name(u16+bytes) ndim(u8) dims(u32*) value m v }
    n_buffers(u32) { name(u16+bytes) ndim(u8) dims(u32*) value }

Array payloads use the checkpoint's precision dtype. A load followed by a
save reproduces the file byte for byte, which is what makes bitwise
train-resume possible.
"""

import struct
from dataclasses import dataclass

import numpy as np

from . import tensor
from .config import TrainConfig, config_from_kv, config_to_kv_text, parse_kv_text
from .errors import CheckpointError
from .params import ParamStore
from .rng import Rng

MAGIC = b"PARF"
VERSION = 1


@dataclass
class Checkpoint:
    config: TrainConfig
    iteration: int
    rng_states: dict[str, dict]
    store: ParamStore

    def restore_rngs(self) -> dict[str, Rng]:
        return {name: Rng.from_state(state) for name, state in self.rng_states.items()}


class _Writer:
    def __init__(self):
        self.chunks = []

    def pack(self, fmt, *vals):
        self.chunks.append(struct.pack("<" + fmt, *vals))

    def name(self, s: str):
        b = s.encode("utf-8")
        self.pack("H", len(b))
        self.chunks.append(b)

    def array(self, a: np.ndarray):
        self.chunks.append(np.ascontiguousarray(a).tobytes())

    def bytes(self) -> bytes:
        return b"".join(self.chunks)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def unpack(self, fmt):
        fmt = "<" + fmt
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise CheckpointError("truncated checkpoint", self.pos)
        vals = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return vals if len(vals) > 1 else vals[0]

    def name(self) -> str:
        n = self.unpack("H")
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated name", self.pos)
        s = self.data[self.pos:self.pos + n].decode("utf-8")
        self.pos += n
        return s

    def array(self, shape, dtype) -> np.ndarray:
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * np.dtype(dtype).itemsize
        if self.pos + nbytes > len(self.data):
            raise CheckpointError("truncated array payload", self.pos)
        a = np.frombuffer(self.data, dtype=dtype, count=count, offset=self.pos).reshape(shape)
        self.pos += nbytes
        return a.copy()


def serialize(cfg: TrainConfig, iteration: int, rngs: dict[str, Rng],
              store: ParamStore) -> bytes:
    w = _Writer()
    w.pack("4sII", MAGIC, VERSION, cfg.precision)
    cfg_text = config_to_kv_text(cfg).encode("utf-8")
    w.pack("I", len(cfg_text))
    w.chunks.append(cfg_text)
    w.pack("Q", iteration)

    w.pack("I", len(rngs))
    for name in rngs:  # caller-fixed order
        st = rngs[name].get_state()
        w.name(name)
        w.pack("QQ", st["seed"], st["stream"])
        w.pack("4Q", *st["counter"])
        w.pack("2Q", *st["key"])
        w.pack("4Q", *st["buffer"])
        w.pack("IIQ", st["buffer_pos"], st["has_uint32"], st["uinteger"])

    def write_header(name, shape):
        w.name(name)
        w.pack("B", len(shape))
        for dim in shape:
            w.pack("I", dim)

    params = list(store.params())
    w.pack("I", len(params))
    for name, p in params:
        write_header(name, p.value.shape)
        w.array(p.value)
        w.array(p.m)
        w.array(p.v)
    buffers = list(store.buffers())
    w.pack("I", len(buffers))
    for name, b in buffers:
        write_header(name, b.shape)
        w.array(b)
    return w.bytes()


def deserialize(data: bytes) -> Checkpoint:
    r = _Reader(data)
    magic, version, precision = r.unpack("4sII")
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise CheckpointError(f"unsupported version {version}", 4)
    dtype = np.float32 if precision == 32 else np.float64

    cfg_len = r.unpack("I")
    cfg_text = r.data[r.pos:r.pos + cfg_len].decode("utf-8")
    r.pos += cfg_len
    cfg = config_from_kv(parse_kv_text(cfg_text))
    iteration = r.unpack("Q")

    rng_states = {}
    for _ in range(r.unpack("I")):
        name = r.name()
        seed, stream = r.unpack("QQ")
        counter = list(r.unpack("4Q"))
        key = list(r.unpack("2Q"))
        buffer = list(r.unpack("4Q"))
        buffer_pos, has_uint32, uinteger = r.unpack("IIQ")
        rng_states[name] = {
            "seed": seed, "stream": stream, "counter": counter, "key": key,
            "buffer": buffer, "buffer_pos": buffer_pos,
            "has_uint32": has_uint32, "uinteger": uinteger,
        }

    def read_header():
        name = r.name()
        ndim = r.unpack("B")
        shape = tuple(r.unpack("I") for _ in range(ndim))
        return name, shape

    store = ParamStore()
    with tensor.precision(precision):  # keep payload dtype regardless of caller mode
        for _ in range(r.unpack("I")):
            name, shape = read_header()
            p = store.add(name, r.array(shape, dtype))
            p.m = r.array(shape, dtype)
            p.v = r.array(shape, dtype)
        for _ in range(r.unpack("I")):
            name, shape = read_header()
            store.add_buffer(name, r.array(shape, dtype))
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes", r.pos)
    return Checkpoint(cfg, iteration, rng_states, store)


def save(path, cfg, iteration, rngs, store) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(cfg, iteration, rngs, store))


def load(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return deserialize(fh.read())
