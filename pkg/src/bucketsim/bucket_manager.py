"""Adaptive request bucketing: assignment, midpoint splitting, low-load merging.

Buckets are half-open token-length intervals [low, up) that jointly cover
[0, max_seq_len) at all times. Lookup is a deliberate linear scan so the
measured cost matches the O(n*k) assignment bound; operation counters back
the complexity assertions in the tests.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from operator import attrgetter
from typing import Deque, Iterator

from .memory_model import LengthHistogram
from .workload import Request

_ARRIVAL_ORDER = attrgetter("arrival_time", "id")


@dataclass
class Bucket:
    low: int
    up: int
    requests: Deque[Request] = field(default_factory=deque)

    def __post_init__(self) -> None:
        # cached so the split check stays O(1) per bucket, matching the
        # O(k)-adjustment complexity contract
        self.mid = (self.low + self.up) // 2
        self.short_count = sum(1 for r in self.requests if r.input_len < self.mid)

    def __len__(self) -> int:
        return len(self.requests)

    def add(self, request: Request) -> None:
        self.requests.append(request)
        if request.input_len < self.mid:
            self.short_count += 1

    def remove_ids(self, ids: set[int]) -> None:
        kept: Deque[Request] = deque()
        for r in self.requests:
            if r.id in ids:
                if r.input_len < self.mid:
                    self.short_count -= 1
            else:
                kept.append(r)
        self.requests = kept

    def token_mass(self) -> int:
        return sum(r.input_len for r in self.requests)


@dataclass(frozen=True)
class StructuralChange:
    """One bucketing event for the metrics ledger."""

    kind: str  # "split" | "merge" | "skip"
    parent_low: int
    parent_up: int
    midpoint: int | None = None


@dataclass(frozen=True)
class PartitionViolation:
    kind: str  # "gap" | "overlap" | "bounds" | "misfiled"
    detail: str


class BucketSet:
    """Ordered, contiguous buckets plus the split/merge policy state.

    Single-writer: only the scheduler tick mutates an instance; snapshots for
    metrics must copy what they need.
    """

    def __init__(self, max_seq_len: int, split_threshold: float = 0.5,
                 buckets: list[Bucket] | None = None):
        if max_seq_len < 1:
            raise ValueError("max_seq_len must be >= 1")
        if not 0.0 < split_threshold <= 1.0:
            raise ValueError("split_threshold must be in (0, 1]")
        self.max_seq_len = max_seq_len
        self.split_threshold = split_threshold
        self.buckets: list[Bucket] = buckets if buckets is not None else [Bucket(0, max_seq_len)]
        # set on any content or structure change; adjust_buckets is a no-op
        # on unchanged state, so callers may skip it while clean
        self.dirty = True
        # complexity counters (cumulative, plus the last assign call)
        self.assign_calls = 0
        self.assign_comparisons = 0
        self.last_assign_comparisons = 0
        self.adjust_calls = 0
        self.adjust_bucket_scans = 0
        self.requests_moved = 0

    def __len__(self) -> int:
        return len(self.buckets)

    @property
    def total_requests(self) -> int:
        return sum(len(b) for b in self.buckets)

    def iter_requests(self) -> Iterator[Request]:
        for b in self.buckets:
            yield from b.requests

    def assign(self, request: Request) -> int:
        """Append a request to the unique bucket covering its input length."""
        if not 0 <= request.input_len < self.max_seq_len:
            raise ValueError(
                f"input_len {request.input_len} outside [0, {self.max_seq_len}); "
                "truncation should have been applied")
        self.assign_calls += 1
        self.dirty = True
        input_len = request.input_len
        comparisons = 0
        # buckets are contiguous and ascending, so the first bucket whose
        # upper bound exceeds the length is the unique match
        for b in self.buckets:
            comparisons += 1
            if input_len < b.up:
                b.requests.append(request)
                if input_len < b.mid:
                    b.short_count += 1
                self.assign_comparisons += comparisons
                self.last_assign_comparisons = comparisons
                return comparisons - 1
        raise AssertionError("bucket partition does not cover request length")  # unreachable

    def adjust_buckets(self, n_max: int) -> list[StructuralChange]:
        """One split/merge pass driven by the current safe batch size.

        Below n_max total requests everything collapses into the single
        full-range bucket (requests re-queued in global arrival order).
        Otherwise each bucket whose short fraction exceeds the threshold and
        whose population exceeds n_max is split once at its integer midpoint.
        Width-1 buckets are never split; the skip is recorded.
        """
        self.adjust_calls += 1
        buckets = self.buckets
        self.adjust_bucket_scans += len(buckets)
        total = 0
        for b in buckets:
            total += len(b.requests)
        if total < n_max:
            if len(buckets) == 1 and buckets[0].low == 0 \
                    and buckets[0].up == self.max_seq_len:
                self.dirty = False
                return []
            merged = sorted(self.iter_requests(), key=_ARRIVAL_ORDER)
            self.requests_moved += len(merged)
            self.buckets = [Bucket(0, self.max_seq_len, deque(merged))]
            return [StructuralChange("merge", 0, self.max_seq_len)]

        if total == n_max:  # no single bucket can exceed the split floor
            self.dirty = False
            return []
        threshold = self.split_threshold
        split_list = [b for b in buckets
                      if (c := len(b.requests)) > n_max
                      and b.short_count > threshold * c]
        if not split_list:
            self.dirty = False
            return []
        changes: list[StructuralChange] = []
        splitting = set(map(id, split_list))
        new_buckets: list[Bucket] = []
        for b in buckets:
            if id(b) not in splitting:
                new_buckets.append(b)
                continue
            if b.mid <= b.low:  # width-1 bucket: midpoint degenerates
                changes.append(StructuralChange("skip", b.low, b.up, b.mid))
                new_buckets.append(b)
                continue
            mid = b.mid
            # stable partition keeps FIFO order within each child
            left = Bucket(b.low, mid,
                          deque(r for r in b.requests if r.input_len < mid))
            right = Bucket(mid, b.up,
                           deque(r for r in b.requests if r.input_len >= mid))
            self.requests_moved += len(b.requests)
            new_buckets.extend((left, right))
            changes.append(StructuralChange("split", b.low, b.up, mid))
        self.buckets = new_buckets
        if not changes or all(c.kind == "skip" for c in changes):
            self.dirty = False
        return changes

    def check_partition(self) -> PartitionViolation | None:
        """Verify disjoint contiguous coverage and per-bucket membership."""
        if not self.buckets:
            return PartitionViolation("gap", f"no buckets cover [0, {self.max_seq_len})")
        if self.buckets[0].low != 0:
            return PartitionViolation("gap", f"no bucket covers [0, {self.buckets[0].low})")
        if self.buckets[-1].up != self.max_seq_len:
            return PartitionViolation(
                "gap", f"no bucket covers [{self.buckets[-1].up}, {self.max_seq_len})")
        for b in self.buckets:
            if not 0 <= b.low < b.up <= self.max_seq_len:
                return PartitionViolation("bounds", f"bucket [{b.low}, {b.up}) is malformed")
        for a, b in zip(self.buckets, self.buckets[1:]):
            if a.up < b.low:
                return PartitionViolation("gap", f"gap at [{a.up}, {b.low})")
            if a.up > b.low:
                return PartitionViolation("overlap", f"overlap at [{b.low}, {a.up})")
        for b in self.buckets:
            for r in b.requests:
                if not b.low <= r.input_len < b.up:
                    return PartitionViolation(
                        "misfiled",
                        f"request {r.id} with length {r.input_len} sits in [{b.low}, {b.up})")
        return None


@dataclass(frozen=True)
class BoundaryFit:
    boundary: float
    iterations: int
    converged: bool


def optimal_boundary_oracle(hist: LengthHistogram, low: float, up: float,
                            tol: float, max_iters: int = 100) -> BoundaryFit:
    """Fixed-point search for the conditional-mean bucket boundary.

    Iterates U <- mean(S | low <= S < U) starting from U = up until
    successive values differ by less than tol*(up - low). When no mass lies
    strictly below U the iteration cannot move and is treated as converged.
    Test-only oracle for judging the midpoint-bisection approximation; never
    on the scheduling hot path.
    """
    if tol <= 0:
        raise ValueError("tol must be > 0")
    if hist.mass_in(low, up) == 0:
        raise ValueError(f"histogram has no mass in [{low}, {up})")
    u = float(up)
    threshold = tol * (up - low)
    for iteration in range(1, max_iters + 1):
        mean = hist.conditional_mean(low, u)
        if mean is None:  # point mass at the boundary: nothing below to average
            return BoundaryFit(u, iteration, True)
        if abs(u - mean) < threshold:
            return BoundaryFit(mean, iteration, True)
        u = mean
    return BoundaryFit(u, max_iters, False)
