"""KV-cache memory and padding-waste formulas.

All byte quantities are exact integers; ratios are double precision. The
padded footprint charges every request at the batch maximum length, the
exact footprint charges actual per-request lengths; a config switch in the
batch controller selects which one the safety check uses.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class ModelConfig:
    layers: int
    heads: int
    head_dim: int
    bytes_per_elem: int  # 2 for FP16
    max_seq_len: int

    def __post_init__(self) -> None:
        for name in ("layers", "heads", "head_dim", "max_seq_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model.{name} must be >= 1")
        if self.bytes_per_elem not in (1, 2, 4):
            raise ConfigError("model.bytes_per_elem must be one of 1, 2, 4")

    @property
    def kv_bytes_per_token(self) -> int:
        # K and V planes across every layer/head
        return 2 * self.layers * self.heads * self.head_dim * self.bytes_per_elem


# Architecture-shaped presets. The L/H/D values are approximations of
# publicly known 13B-class configurations, not measured data.
MODEL_PRESETS: dict[str, ModelConfig] = {
    "llama2-13b-like": ModelConfig(layers=40, heads=40, head_dim=128,
                                   bytes_per_elem=2, max_seq_len=4096),
    "opt-13b-like": ModelConfig(layers=40, heads=40, head_dim=128,
                                bytes_per_elem=2, max_seq_len=2048),
}


@dataclass(frozen=True)
class GpuConfig:
    total_mem: int   # bytes
    model_mem: int   # bytes reserved for weights + activations
    reserve_fraction: float = 0.10

    def __post_init__(self) -> None:
        if self.total_mem < 0 or self.model_mem < 0:
            raise ConfigError("gpu memory sizes must be >= 0")
        if self.model_mem > self.total_mem:
            raise ConfigError("gpu.model_mem must not exceed gpu.total_mem")
        if not 0.0 <= self.reserve_fraction < 1.0:
            raise ConfigError("gpu.reserve_fraction must be in [0, 1)")


def kv_footprint_padded(model: ModelConfig, max_len: int, count: int) -> int:
    """Batch KV bytes when every request is padded to the batch max length."""
    if count < 0:
        raise ValueError("count must be >= 0")
    if count == 0:
        return 0
    if max_len > model.max_seq_len:
        raise ValueError(f"max_len {max_len} exceeds model max_seq_len {model.max_seq_len}")
    if max_len < 1:
        raise ValueError("max_len must be >= 1 for a non-empty batch")
    return model.kv_bytes_per_token * max_len * count


def kv_footprint_exact(model: ModelConfig, lengths: Sequence[int]) -> int:
    """Batch KV bytes charged at actual per-request lengths (no padding)."""
    total = 0
    for length in lengths:
        if length > model.max_seq_len:
            raise ValueError(f"length {length} exceeds model max_seq_len {model.max_seq_len}")
        if length < 1:
            raise ValueError("lengths must be >= 1")
        total += length
    return model.kv_bytes_per_token * total


def waste_ratio(lengths: Sequence[int]) -> float:
    """Padding waste of one batch: (max - mean) / max, in [0, 1)."""
    if not lengths:
        raise ValueError("waste_ratio requires a non-empty batch")
    if any(length < 1 for length in lengths):
        raise ValueError("lengths must be >= 1")
    s_max = max(lengths)
    s_avg = sum(lengths) / len(lengths)
    return (s_max - s_avg) / s_max


class LengthHistogram:
    """Empirical length distribution over contiguous bins.

    Each bin's mass sits at its midpoint; waste integrals and conditional
    means are evaluated discretely over those midpoints.
    """

    def __init__(self, edges: Sequence[float], counts: Sequence[float]):
        edges_arr = np.asarray(edges, dtype=float)
        counts_arr = np.asarray(counts, dtype=float)
        if edges_arr.ndim != 1 or len(edges_arr) < 2:
            raise ConfigError("histogram needs at least two edges")
        if len(counts_arr) != len(edges_arr) - 1:
            raise ConfigError("histogram counts must have len(edges) - 1 entries")
        if not np.all(np.diff(edges_arr) > 0):
            raise ConfigError("histogram edges must be strictly increasing")
        if np.any(counts_arr < 0):
            raise ConfigError("histogram counts must be >= 0")
        self.edges = edges_arr
        self.counts = counts_arr
        self.mids = (edges_arr[:-1] + edges_arr[1:]) / 2.0

    @classmethod
    def from_samples(cls, samples: Sequence[float], bins: int = 64,
                     value_range: tuple[float, float] | None = None) -> "LengthHistogram":
        counts, edges = np.histogram(np.asarray(samples, dtype=float),
                                     bins=bins, range=value_range)
        return cls(edges, counts)

    @property
    def total_count(self) -> float:
        return float(self.counts.sum())

    def bins(self) -> Iterator[tuple[float, float]]:
        for mid, cnt in zip(self.mids, self.counts):
            yield float(mid), float(cnt)

    def support(self) -> tuple[float, float]:
        """Midpoint range carrying mass; error when the histogram is empty."""
        nz = np.nonzero(self.counts)[0]
        if len(nz) == 0:
            raise ValueError("histogram has no mass")
        return float(self.mids[nz[0]]), float(self.mids[nz[-1]])

    def mass_in(self, low: float, up: float) -> float:
        sel = (self.mids >= low) & (self.mids < up)
        return float(self.counts[sel].sum())

    def conditional_mean(self, low: float, up: float) -> float | None:
        """Mean length over [low, up); None when the interval holds no mass."""
        sel = (self.mids >= low) & (self.mids < up)
        mass = float(self.counts[sel].sum())
        if mass == 0:
            return None
        return float((self.mids[sel] * self.counts[sel]).sum() / mass)


def expected_waste(hist: LengthHistogram,
                   buckets: Sequence[tuple[float, float]]) -> float:
    """Distribution-weighted padding waste of a bucket partition.

    Every unit of mass at length S inside bucket [low, up) contributes
    (1 - S/up); the result is normalised by total mass. Buckets must be
    contiguous and cover the histogram's support.
    """
    if not buckets:
        raise ValueError("expected_waste requires at least one bucket")
    total = hist.total_count
    if total == 0:
        raise ValueError("histogram has no mass")
    for (low, up) in buckets:
        if not low < up:
            raise ValueError(f"bucket [{low}, {up}) is empty or inverted")
    for (_, up_a), (low_b, _) in zip(buckets, buckets[1:]):
        if up_a != low_b:
            raise ValueError(f"buckets leave a gap or overlap at [{up_a}, {low_b})")
    lo_support, hi_support = hist.support()
    if lo_support < buckets[0][0] or hi_support >= buckets[-1][1]:
        raise ValueError(
            f"buckets [{buckets[0][0]}, {buckets[-1][1]}) do not cover the "
            f"histogram support [{lo_support}, {hi_support}]")
    uppers = [up for _, up in buckets]
    acc = 0.0
    for mid, cnt in hist.bins():
        if cnt == 0:
            continue
        idx = bisect_right(uppers, mid)  # first bucket with up > mid
        acc += cnt * (1.0 - mid / uppers[idx])
    return acc / total


def safe_memory(gpu: GpuConfig) -> int:
    """Usable KV bytes after reserving a fraction of the post-model remainder."""
    remain = gpu.total_mem - gpu.model_mem
    return math.floor((1.0 - gpu.reserve_fraction) * remain)


def token_budget(model: ModelConfig, gpu: GpuConfig) -> int:
    """Largest total token count whose KV fits in safe memory."""
    return safe_memory(gpu) // model.kv_bytes_per_token


def max_safe_batch(lengths: Sequence[int], budget: int) -> int:
    """Largest admission-ordered prefix whose token sum fits the budget."""
    total = 0
    for i, length in enumerate(lengths):
        total += length
        if total > budget:
            return i
    return len(lengths)
