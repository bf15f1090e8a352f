"""Pixel-adaptive filter refinement for binary segmentation.

A compact U-Net produces a coarse probability map; a multi-scale residual
similarity-gathering head turns that map into one small adaptive filter per
pixel; a single filtering layer refines the map. Training runs a
weight-shared dual branch where the auxiliary input has its most confident
response cues erased, tied together by a consistency loss.

Submodules are imported lazily so the CLI can cap math-library threads
before numpy loads.
"""

__version__ = "0.1.0"

_SUBMODULES = (
    "backbone", "bench", "checkpoint", "cli", "config", "data", "errors",
    "figures", "gradcheck", "losses", "metrics", "mrsg", "ops", "params",
    "pipeline", "pnm", "rce", "rng", "tensor", "train", "verify",
)


def __getattr__(name):
    if name in _SUBMODULES:
        import importlib
        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
