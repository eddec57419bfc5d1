"""Memory-safe batch formation from buckets under dispatch policies.

Online traffic is dispatched from the bucket holding the globally oldest
online request; offline traffic from the bucket with the largest queued
token mass. Admission is prefix-greedy against the safe-memory budget under
the configured accounting mode (padded charges the batch maximum length per
request, exact charges actual lengths).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .bucket_manager import Bucket, BucketSet
from .memory_model import GpuConfig, ModelConfig, safe_memory
from .workload import Request, TaskClass


class DispatchPolicy(Enum):
    SJF = "sjf"
    LJF = "ljf"
    EARLIEST_ARRIVAL = "earliest_arrival"
    FCFS = "fcfs"


class MemoryAccounting(Enum):
    PADDED = "padded"
    EXACT = "exact"


def order_requests(requests: Sequence[Request], policy: DispatchPolicy) -> list[Request]:
    """Total, stable dispatch order within one bucket."""
    if policy is DispatchPolicy.SJF:
        key = lambda r: (r.input_len, r.arrival_time, r.id)
    elif policy is DispatchPolicy.LJF:
        key = lambda r: (-r.input_len, r.arrival_time, r.id)
    else:  # FCFS and EARLIEST_ARRIVAL share the same ordering rule
        key = lambda r: (r.arrival_time, r.id)
    return sorted(requests, key=key)


@dataclass(frozen=True)
class BatchPlan:
    """An ordered set of requests released for prefill."""

    request_ids: tuple[int, ...]
    requests: tuple[Request, ...]
    max_input_len: int
    token_sum: int
    footprint: int  # bytes under the accounting mode active at creation
    created_at: float
    source_bucket: tuple[int, int]

    def __len__(self) -> int:
        return len(self.requests)


@dataclass(frozen=True)
class OversizeRejection:
    """A request whose solo footprint exceeds total safe memory: it can never
    run, so it is removed permanently instead of blocking the queue head."""

    request: Request
    footprint: int
    safe_mem: int


class BatchController:
    """Forms batches against live memory headroom; single-writer per tick."""

    def __init__(self, model: ModelConfig, gpu: GpuConfig,
                 accounting: MemoryAccounting = MemoryAccounting.PADDED):
        self.model = model
        self.gpu = gpu
        self.accounting = accounting
        self.base_safe = safe_memory(gpu)
        self.current_safe = self.base_safe
        self.kv_per_token = model.kv_bytes_per_token
        self.rejections: list[OversizeRejection] = []

    def on_memory_change(self, new_safe: int) -> int:
        """Track a memory update; returns the new token budget."""
        if new_safe < 0:
            raise ValueError("safe memory must be >= 0")
        self.current_safe = new_safe
        return self.token_budget()

    def token_budget(self) -> int:
        return self.current_safe // self.kv_per_token

    def current_n_max(self, bucket_set: BucketSet) -> int:
        """Safe batch size estimate handed to bucketing as the split floor.

        Uses the monitor's mean-queued-length view of the admission bound:
        how many requests of average length fit the token budget. An idle
        system reports 1 so the bucket structure collapses while empty.
        """
        total = bucket_set.total_requests
        if total == 0:
            return 1
        mean_len = sum(r.input_len for r in bucket_set.iter_requests()) / total
        return max(1, int(self.token_budget() // mean_len))

    def select_bucket(self, bucket_set: BucketSet, task_class: TaskClass) -> int | None:
        """Pick the dispatch bucket for a task class, or None if all empty.

        Online: the bucket holding the globally oldest waiting online
        request. Offline: the bucket with the largest queued offline token
        mass (maximises the homogeneity payoff per batch), ties to the lower
        index.
        """
        if task_class is TaskClass.ONLINE:
            best_idx = None
            best_key = None
            for idx, bucket in enumerate(bucket_set.buckets):
                for r in bucket.requests:
                    if r.task_class is not TaskClass.ONLINE:
                        continue
                    key = (r.arrival_time, r.id)
                    if best_key is None or key < best_key:
                        best_key = key
                        best_idx = idx
            return best_idx
        best_idx = None
        best_mass = 0
        for idx, bucket in enumerate(bucket_set.buckets):
            mass = sum(r.input_len for r in bucket.requests
                       if r.task_class is TaskClass.OFFLINE)
            if mass > best_mass:
                best_mass = mass
                best_idx = idx
        return best_idx

    def _footprint(self, max_len: int, count: int, token_sum: int) -> int:
        if self.accounting is MemoryAccounting.PADDED:
            return self.kv_per_token * max_len * count
        return self.kv_per_token * token_sum

    def form_batch(self, bucket: Bucket, policy: DispatchPolicy, *,
                   pledged: int = 0, task_class: TaskClass | None = None,
                   now: float = 0.0) -> BatchPlan | None:
        """Admit the longest policy-ordered prefix that fits the headroom.

        Admitted requests leave the bucket queue (remaining order unchanged).
        Returns None with the queue untouched when nothing fits right now.
        Requests that can never fit even alone are removed and recorded in
        self.rejections instead of blocking the head of the line.
        """
        headroom = self.current_safe - pledged
        if headroom <= 0:
            return None
        candidates = [r for r in bucket.requests
                      if task_class is None or r.task_class is task_class]
        if not candidates:
            return None
        ordered = order_requests(candidates, policy)

        admitted: list[Request] = []
        removed_ids: set[int] = set()
        cur_max = 0
        cur_sum = 0
        for r in ordered:
            solo = self.kv_per_token * r.input_len
            if solo > self.current_safe:
                self.rejections.append(OversizeRejection(r, solo, self.current_safe))
                removed_ids.add(r.id)
                continue
            new_max = max(cur_max, r.input_len)
            new_sum = cur_sum + r.input_len
            fp = self._footprint(new_max, len(admitted) + 1, new_sum)
            if fp > headroom:
                break
            admitted.append(r)
            removed_ids.add(r.id)
            cur_max, cur_sum = new_max, new_sum

        if removed_ids:
            bucket.remove_ids(removed_ids)
        if not admitted:
            return None
        return BatchPlan(
            request_ids=tuple(r.id for r in admitted),
            requests=tuple(admitted),
            max_input_len=cur_max,
            token_sum=cur_sum,
            footprint=self._footprint(cur_max, len(admitted), cur_sum),
            created_at=now,
            source_bucket=(bucket.low, bucket.up),
        )
