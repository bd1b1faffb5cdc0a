"""Rank and optimizer-memory accounting over recorded rank traces.

All quantities are plain arithmetic on per-step ranks, so they can be
recomputed exactly from a serialized trace.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

BF16_BYTES = 2
METHODS = ("adarankgrad", "galore", "lora", "full")
WEIGHTED_RANK_FORMULA = "sum_j sum_t R_t^j (d_j + d_{j+1}) / (T * sum_j d_j * d_{j+1})"


@dataclass(frozen=True)
class LayerTrace:
    layer_id: int
    dims: tuple[int, int]  # (d_j, d_{j+1})
    rank_series: tuple[int, ...]
    baseline_rank: int

    def __post_init__(self):
        object.__setattr__(self, "rank_series", tuple(int(r) for r in self.rank_series))
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if not self.rank_series:
            raise ValueError(f"layer {self.layer_id}: empty rank series")
        if min(self.rank_series) < 1:
            raise ValueError(f"layer {self.layer_id}: ranks must be >= 1")
        if self.baseline_rank < 1:
            raise ValueError(f"layer {self.layer_id}: baseline rank must be >= 1")
        if len(self.dims) != 2 or min(self.dims) < 1:
            raise ShapeError(f"layer {self.layer_id}: invalid dims {self.dims}")

    @property
    def steps(self) -> int:
        return len(self.rank_series)


def layer_effective_rank(trace: LayerTrace) -> float:
    """Mean rank over the recorded steps."""
    return float(np.mean(trace.rank_series))


def total_weighted_avg_rank(traces) -> float:
    """Evaluates ``WEIGHTED_RANK_FORMULA`` over all layers."""
    traces = list(traces)
    if not traces:
        raise ValueError("need at least one layer trace")
    steps = {tr.steps for tr in traces}
    if len(steps) != 1:
        raise ValueError(f"layer traces cover different step counts: {sorted(steps)}")
    (t,) = steps
    num = sum(sum(tr.rank_series) * (tr.dims[0] + tr.dims[1]) for tr in traces)
    den = t * sum(tr.dims[0] * tr.dims[1] for tr in traces)
    return num / den


def memory_reduction(trace: LayerTrace) -> float:
    """``(baseline - mean rank) * (d_j + d_{j+1})`` elements; negative if the rank grew."""
    return (trace.baseline_rank - layer_effective_rank(trace)) * (trace.dims[0] + trace.dims[1])


def total_memory_reduction(traces) -> float:
    return float(sum(memory_reduction(tr) for tr in traces))


def bf16_bytes(elements: float) -> float:
    return BF16_BYTES * elements


def optimizer_state_elements(n: int, m: int, r_adap: int, method: str) -> int:
    """Optimizer state size for an ``n x m`` weight (``n >= m``)."""
    if n < m:
        raise ShapeError(f"expected n >= m, got n={n}, m={m}; transpose the weight first")
    if min(n, m) < 1:
        raise ShapeError(f"invalid dims ({n}, {m})")
    if method == "full":
        return 2 * n * m
    if r_adap < 1:
        raise ValueError("rank must be >= 1")
    if method in ("adarankgrad", "galore"):
        return n * r_adap + 2 * m * r_adap
    if method == "lora":
        return 2 * n * r_adap + 2 * m * r_adap
    raise ValueError(f"method must be one of {METHODS}, got {method!r}")


def summary(traces) -> dict:
    """Per-layer and total rank/memory statistics, ready for JSON."""
    traces = list(traces)
    layers = []
    for tr in traces:
        red = memory_reduction(tr)
        layers.append(
            {
                "layer_id": tr.layer_id,
                "dims": list(tr.dims),
                "effective_rank": layer_effective_rank(tr),
                "baseline_rank": tr.baseline_rank,
                "mem_reduction_elements": red,
                "mem_reduction_bytes_bf16": bf16_bytes(red),
            }
        )
    total = total_memory_reduction(traces)
    return {
        "layers": layers,
        "total_weighted_avg_rank": total_weighted_avg_rank(traces),
        "total_weighted_avg_rank_formula": WEIGHTED_RANK_FORMULA,
        "total_mem_reduction_elements": total,
        "total_mem_reduction_bytes_bf16": bf16_bytes(total),
    }


def summary_json(traces) -> str:
    return json.dumps(summary(traces), indent=2, sort_keys=True) + "\n"
