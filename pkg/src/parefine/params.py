"""Parameter storage: named learnable tensors with grad and Adam moments.

The store keeps two sections: trainable parameters (value/grad/m/v all of
one shape) and non-trainable buffers (batchnorm running statistics). Entry
order is insertion order and is part of the determinism contract.
"""

import numpy as np

from . import tensor


class Param:
    __slots__ = ("value", "grad", "m", "v")

    def __init__(self, value: np.ndarray):
        self.value = value
        self.grad = np.zeros_like(value)
        self.m = np.zeros_like(value)
        self.v = np.zeros_like(value)


class ParamStore:
    def __init__(self):
        self._params: dict[str, Param] = {}
        self._buffers: dict[str, np.ndarray] = {}

    # -- trainable parameters ------------------------------------------------
    def add(self, name: str, value) -> Param:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        p = Param(tensor.as_tensor(value))
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Param:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def params(self):
        return self._params.items()

    def names(self):
        return list(self._params.keys())

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.grad[...] = 0.0

    def param_count(self) -> int:
        """Number of learnable scalars actually allocated."""
        return sum(p.value.size for p in self._params.values())

    def megabytes(self) -> float:
        """Learnable footprint at 4 bytes/value, in MiB."""
        return self.param_count() * 4 / 2**20

    # -- non-trainable buffers (running stats) -------------------------------
    def add_buffer(self, name: str, value) -> np.ndarray:
        if name in self._buffers:
            raise KeyError(f"duplicate buffer {name!r}")
        self._buffers[name] = tensor.as_tensor(value)
        return self._buffers[name]

    def buffer(self, name: str) -> np.ndarray:
        return self._buffers[name]

    def buffers(self):
        return self._buffers.items()

    def has_buffer(self, name: str) -> bool:
        return name in self._buffers

    # -- precision -----------------------------------------------------------
    def astype(self, dt) -> "ParamStore":
        """Copy of the store in another dtype (for 64-bit verification runs)."""
        out = ParamStore()
        for name, p in self._params.items():
            q = out.add(name, p.value.astype(dt))
            q.grad = p.grad.astype(dt)
            q.m = p.m.astype(dt)
            q.v = p.v.astype(dt)
        for name, b in self._buffers.items():
            out._buffers[name] = b.astype(dt)
        return out
