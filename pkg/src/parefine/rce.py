"""Response cue erasing and the weight-shared dual branch.

Training runs two forwards through one parameter set: the main branch sees
the image as-is; the auxiliary branch sees a copy in which the k most
confident coarse-map positions (foreground or background, confidence
|p - 0.5|) have been zeroed out. Selection reads a snapshot of the main
coarse map and is non-differentiable by construction. Inference never
touches any of this; module-level call counters let tests assert that.
"""

from dataclasses import dataclass, field

import numpy as np

from . import mrsg, pipeline
from .errors import DimensionError

# Instrumentation: bumped by every RCE entry point, reset by tests.
CALL_COUNTS = {"select": 0, "erase": 0, "dual_branch": 0}


def reset_call_counts():
    for key in CALL_COUNTS:
        CALL_COUNTS[key] = 0


@dataclass
class ErasureSet:
    """Pixel positions to erase, ordered by descending confidence."""
    positions: np.ndarray  # (k, 2) int rows/cols
    source: str = ""

    def __len__(self):
        return len(self.positions)


@dataclass
class BranchOutputs:
    main_coarse: np.ndarray
    main_refined: np.ndarray
    aux_coarse: np.ndarray
    aux_refined: np.ndarray
    erasure_sets: list
    main_cache: object = field(repr=False, default=None)
    aux_cache: object = field(repr=False, default=None)


def select_topk_confident(coarse: np.ndarray, k: int, source: str = "") -> ErasureSet:
    """The k pixels whose probability is farthest from 0.5, both directions.
    Ties break row-major; k saturates at H*W."""
    CALL_COUNTS["select"] += 1
    plane = coarse[0] if coarse.ndim == 3 else coarse
    if plane.ndim != 2:
        raise DimensionError(f"expected a single coarse map, got shape {coarse.shape}")
    h, w = plane.shape
    k = max(0, min(int(k), h * w))
    if k == 0:
        return ErasureSet(np.empty((0, 2), dtype=np.int64), source)
    conf = np.abs(plane.reshape(-1) - 0.5)
    order = np.argsort(-conf, kind="stable")[:k]  # stable: ties stay row-major
    positions = np.stack([order // w, order % w], axis=1).astype(np.int64)
    return ErasureSet(positions, source)


def erase(x: np.ndarray, eset: ErasureSet, radius: int = 0) -> np.ndarray:
    """Copy of the 3xHxW image with all channels zeroed at each selected
    position (optionally a (2*radius+1)^2 square around it, clipped)."""
    CALL_COUNTS["erase"] += 1
    if x.ndim != 3:
        raise DimensionError(f"erase expects a 3xHxW image, got shape {x.shape}")
    h, w = x.shape[1], x.shape[2]
    out = x.copy()
    if len(eset) == 0:
        return out
    rows, cols = eset.positions[:, 0], eset.positions[:, 1]
    if rows.min() < 0 or cols.min() < 0 or rows.max() >= h or cols.max() >= w:
        raise AssertionError("erasure position outside image bounds")
    if radius == 0:
        out[:, rows, cols] = 0.0
    else:
        for r, c in eset.positions:
            out[:, max(0, r - radius):r + radius + 1,
                max(0, c - radius):c + radius + 1] = 0.0
    return out


def dual_branch_forward(x: np.ndarray, store, cfg, with_caches: bool = True) -> BranchOutputs:
    """Main branch on x, auxiliary branch on the cue-erased copy, same
    parameters. Batchnorm batch statistics are per-branch; running stats are
    updated by the main branch only, so inference is defined by the main path."""
    CALL_COUNTS["dual_branch"] += 1
    if x.ndim != 4:
        raise DimensionError(f"dual branch expects an Nx3xHxW batch, got shape {x.shape}")
    n, _, h, w = x.shape
    k = cfg.resolve_k(h, w)

    main_coarse, main_refined, main_cache = pipeline.forward_refine(
        x, store, cfg, mode="train", update_running=True)

    esets = [select_topk_confident(main_coarse[i], k, source=f"sample{i}")
             for i in range(n)]
    erased = np.stack([erase(x[i], esets[i], cfg.erase_radius) for i in range(n)])

    aux_coarse, aux_refined, aux_cache = pipeline.forward_refine(
        erased, store, cfg, mode="train", update_running=False)

    if not with_caches:
        main_cache = aux_cache = None
    return BranchOutputs(main_coarse, main_refined, aux_coarse, aux_refined,
                         esets, main_cache, aux_cache)


def dual_branch_backward(d_main_refined, d_aux_refined, outputs: BranchOutputs, store):
    """Push refined-map grads through both branches into the shared store."""
    pipeline.backward_refine(d_main_refined, outputs.main_cache, store)
    pipeline.backward_refine(d_aux_refined, outputs.aux_cache, store)
