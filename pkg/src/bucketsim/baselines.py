"""Comparison scheduling policies run inside the same simulator.

These stand in for external serving systems as policy proxies only:
"static-proxy" is fixed-size FCFS batching on a coupled pipeline,
"continuous-proxy" is FCFS continuous batching without bucketing on the
disaggregated pipeline. Reports label them as proxies; no absolute claims
about the systems they approximate are made.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Deque, Union

from .batch_controller import (BatchController, BatchPlan, DispatchPolicy,
                               MemoryAccounting, OversizeRejection)
from .bucket_manager import Bucket
from .errors import ConfigError
from .memory_model import GpuConfig, ModelConfig, safe_memory
from .workload import Request


@dataclass(frozen=True)
class BucketServePolicy:
    pass


@dataclass(frozen=True)
class StaticBatchPolicy:
    fixed_n: int

    def __post_init__(self) -> None:
        if self.fixed_n < 1:
            raise ConfigError("static batch size must be >= 1")


@dataclass(frozen=True)
class ContinuousNoBucketPolicy:
    pass


PolicyKind = Union[BucketServePolicy, StaticBatchPolicy, ContinuousNoBucketPolicy]


def parse_policy(text: str) -> PolicyKind:
    """Config key: policy in {bucketserve, static:<n>, continuous}."""
    if text == "bucketserve":
        return BucketServePolicy()
    if text == "continuous":
        return ContinuousNoBucketPolicy()
    if text.startswith("static:"):
        raw = text.split(":", 1)[1]
        try:
            n = int(raw)
        except ValueError:
            raise ConfigError(f"policy static:<n> needs an integer, got {raw!r}") from None
        return StaticBatchPolicy(n)
    raise ConfigError(f"unknown policy {text!r} (expected bucketserve, static:<n> or continuous)")


def policy_label(kind: PolicyKind) -> str:
    if isinstance(kind, BucketServePolicy):
        return "bucketserve"
    if isinstance(kind, StaticBatchPolicy):
        return f"static-proxy:{kind.fixed_n}"
    return "continuous-proxy"


class StaticBatchScheduler:
    """Fixed-size FCFS batching with the classic halve-on-OOM workaround.

    Padded accounting is mandatory: the whole batch is charged at its max
    length. Waits until fixed_n requests queue up, except at trace end where
    the remnant is flushed as a partial batch.
    """

    def __init__(self, model: ModelConfig, gpu: GpuConfig, fixed_n: int):
        if fixed_n < 1:
            raise ConfigError("static batch size must be >= 1")
        self.model = model
        self.fixed_n = fixed_n
        self.safe = safe_memory(gpu)
        self.kv_per_token = model.kv_bytes_per_token
        self.queue: Deque[Request] = deque()
        self.halvings = 0
        self.rejections: list[OversizeRejection] = []

    def enqueue(self, request: Request) -> None:
        self.queue.append(request)

    def schedule(self, now: float, flush: bool) -> BatchPlan | None:
        """Form the next FCFS batch, or None if still waiting for fill."""
        while self.queue:
            if len(self.queue) < self.fixed_n and not flush:
                return None
            n = min(self.fixed_n, len(self.queue))
            while True:
                take = [self.queue[i] for i in range(n)]
                max_len = max(r.input_len for r in take)
                footprint = self.kv_per_token * max_len * n
                if footprint <= self.safe:
                    for _ in range(n):
                        self.queue.popleft()
                    return BatchPlan(
                        request_ids=tuple(r.id for r in take),
                        requests=tuple(take),
                        max_input_len=max_len,
                        token_sum=sum(r.input_len for r in take),
                        footprint=footprint,
                        created_at=now,
                        source_bucket=(0, self.model.max_seq_len),
                    )
                if n == 1:
                    # single request over safe memory: drop it permanently
                    victim = self.queue.popleft()
                    self.rejections.append(
                        OversizeRejection(victim, footprint, self.safe))
                    break  # retry from the (shorter) queue
                n = n // 2
                self.halvings += 1
        return None


def schedule_continuous_nobucket(bucket: Bucket, model: ModelConfig,
                                 gpu: GpuConfig, pledged: int = 0,
                                 accounting: MemoryAccounting = MemoryAccounting.EXACT,
                                 now: float = 0.0) -> BatchPlan | None:
    """FCFS admission over one implicit full-range bucket, no bucketing.

    Same admission rules as the main controller; the accounting mode follows
    the caller's scenario so the bucketing-disabled reduction is exact.
    """
    controller = BatchController(model, gpu, accounting)
    return controller.form_batch(bucket, DispatchPolicy.FCFS,
                                 pledged=pledged, now=now)
