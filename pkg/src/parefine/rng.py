"""Seeded, splittable random number generation.

Built on numpy's Philox counter-based bit generator. A root stream is keyed
by the 64-bit user seed; named substreams (weights, patches, augment,
synth, ...) get independent keys derived by hashing the label into the
second key word, so stream contents never depend on call interleaving.
"""

import numpy as np

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def _fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


class Rng:
    """One Philox stream plus the key material to derive child streams."""

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        self._bitgen = np.random.Philox(key=np.array([self.seed, self.stream], dtype=np.uint64))
        self._gen = np.random.Generator(self._bitgen)

    def split(self, label: str) -> "Rng":
        """Independent child stream; same (seed, parent, label) -> same stream."""
        child = _fnv1a64(self.stream.to_bytes(8, "little") + label.encode("utf-8"))
        return Rng(self.seed, child)

    # Thin pass-throughs; all draws consume from this stream only.
    def random(self, shape=None):
        return self._gen.random(shape)

    def uniform(self, low=0.0, high=1.0, shape=None):
        return self._gen.uniform(low, high, shape)

    def normal(self, loc=0.0, scale=1.0, shape=None):
        return self._gen.normal(loc, scale, shape)

    def integers(self, low, high=None, shape=None):
        return self._gen.integers(low, high, shape)

    # Checkpointing: the full bit-generator state as flat uint64s.
    def get_state(self) -> dict:
        st = self._bitgen.state
        return {
            "seed": self.seed,
            "stream": self.stream,
            "counter": [int(v) for v in st["state"]["counter"]],
            "key": [int(v) for v in st["state"]["key"]],
            "buffer": [int(v) for v in st["buffer"]],
            "buffer_pos": int(st["buffer_pos"]),
            "has_uint32": int(st["has_uint32"]),
            "uinteger": int(st["uinteger"]),
        }

    def set_state(self, state: dict) -> None:
        self.seed = state["seed"]
        self.stream = state["stream"]
        st = self._bitgen.state
        st["state"]["counter"] = np.array(state["counter"], dtype=np.uint64)
        st["state"]["key"] = np.array(state["key"], dtype=np.uint64)
        st["buffer"] = np.array(state["buffer"], dtype=np.uint64)
        st["buffer_pos"] = state["buffer_pos"]
        st["has_uint32"] = state["has_uint32"]
        st["uinteger"] = state["uinteger"]
        self._bitgen.state = st

    @classmethod
    def from_state(cls, state: dict) -> "Rng":
        rng = cls(state["seed"], state["stream"])
        rng.set_state(state)
        return rng
