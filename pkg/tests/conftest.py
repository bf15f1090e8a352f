import numpy as np
import pytest

from parefine import tensor


@pytest.fixture(autouse=True)
def _reset_precision():
    tensor.set_precision(32)
    yield
    tensor.set_precision(32)


@pytest.fixture
def f64():
    with tensor.precision(64):
        yield


def rand32(seed, shape, lo=0.0, hi=1.0):
    from parefine.rng import Rng
    return Rng(seed).split("test").uniform(lo, hi, shape).astype(np.float32)
