"""Memory benchmark for the filter-generation head.

The dominant transients in the multi-scale assembly are the d^2 x H x W
similarity/filter volumes; the metric reported here is the largest single
volume buffer allocated during one assembly call (Theta(D^2 * H * W)), as
recorded by the allocation meter in the mrsg module. Total traced peak from
tracemalloc is reported alongside for context; it additionally counts stage
caches and so grows faster than the headline D^2 term.
"""

import tracemalloc
from dataclasses import dataclass

import numpy as np

from . import mrsg
from .params import ParamStore
from .rng import Rng


@dataclass
class MemoryRow:
    d_filter: int
    peak_volume_bytes: int
    total_volume_bytes: int
    traced_peak_bytes: int


def measure_assemble_memory(d_filter: int, hw: tuple[int, int] = (64, 64),
                            mode: str = "infer", seed: int = 0) -> MemoryRow:
    h, w = hw
    store = mrsg.init_mrsg_params(d_filter, Rng(seed).split("weights"), ParamStore())
    coarse = Rng(seed).split("bench").uniform(0.0, 1.0, (1, 1, h, w)).astype(np.float32)
    tracemalloc.start()
    try:
        tracemalloc.reset_peak()
        base = tracemalloc.get_traced_memory()[0]
        with mrsg.meter_volume_allocations() as meter:
            bank, _ = mrsg.mrsg_assemble(coarse, d_filter, store, mode=mode,
                                         update_running=False)
        peak = tracemalloc.get_traced_memory()[1]
    finally:
        tracemalloc.stop()
    del bank
    return MemoryRow(d_filter, meter.peak_single_bytes, meter.total_bytes,
                     max(0, peak - base))


def memory_report(hw=(64, 64), ds=(3, 5, 7, 9), mode: str = "infer") -> list[MemoryRow]:
    return [measure_assemble_memory(d, hw, mode) for d in ds]


def report_text(rows: list[MemoryRow], hw) -> str:
    """Tab-delimited table plus the D=max/D=min growth ratio."""
    lines = ["d\tpeak_volume_bytes\ttotal_volume_bytes\ttraced_peak_bytes"]
    for r in rows:
        lines.append(f"{r.d_filter}\t{r.peak_volume_bytes}\t{r.total_volume_bytes}"
                     f"\t{r.traced_peak_bytes}")
    lo = min(rows, key=lambda r: r.d_filter)
    hi = max(rows, key=lambda r: r.d_filter)
    ratio = hi.peak_volume_bytes / lo.peak_volume_bytes
    lines.append(f"# grid {hw[0]}x{hw[1]}; peak ratio D={hi.d_filter} / D={lo.d_filter}"
                 f" = {ratio:.3f}")
    return "\n".join(lines) + "\n"
