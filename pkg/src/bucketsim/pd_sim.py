"""Discrete-event engine for the disaggregated serving pipeline.

Prefill workers pull memory-safe batches formed from buckets, finished KV
state is shipped to a decode pool running continuous batching, and a global
monitor records everything. Execution cost is a parameterized linear model
(compute-bound prefill, bandwidth-bound decode); the coefficients are
calibration knobs, not measured hardware data. The event loop is logically
single-threaded and fully deterministic: ties are broken by event kind then
sequence number.
"""

from __future__ import annotations

import heapq
import json
import time as _time
from dataclasses import dataclass, replace
from enum import Enum, IntEnum
from typing import IO, Deque, Iterable
from collections import deque

from .baselines import (ContinuousNoBucketPolicy, PolicyKind,
                        StaticBatchPolicy, StaticBatchScheduler, policy_label)
from .batch_controller import (BatchController, BatchPlan, DispatchPolicy,
                               MemoryAccounting)
from .bucket_manager import BucketSet
from .errors import ConfigError, SimulationError
from .memory_model import LengthHistogram, ModelConfig, GpuConfig, expected_waste, safe_memory
from .metrics import (MetricsCollector, MetricsReport, MonitorSnapshot,
                      RequestOutcome, SloConfig, latency_percentiles,
                      slo_attainment)
from .workload import Request, TaskClass, Trace


class EventKind(IntEnum):
    ARRIVAL = 0
    SCHEDULER_TICK = 1
    PREFILL_DONE = 2
    TRANSFER_DONE = 3
    DECODE_STEP_DONE = 4
    COMPLETION = 5


@dataclass(frozen=True)
class CostModel:
    """Linear execution-time model; all knobs are artifact calibration.

    Defaults: 5 ms prefill launch, 0.5 us/token prefill compute, 3 ms decode
    step launch, and a decode bandwidth term chosen so stepping over a
    40 GiB KV footprint takes about 60 ms.
    """

    prefill_base: float = 0.005
    prefill_per_token: float = 5e-7
    decode_step_base: float = 0.003
    decode_per_kv_byte: float = 0.06 / (40 * 2**30)
    transfer_bandwidth: float = 600e9
    transfer_latency: float = 1e-4

    def validate(self) -> None:
        for name in ("prefill_base", "prefill_per_token", "decode_step_base",
                     "decode_per_kv_byte", "transfer_latency"):
            if getattr(self, name) < 0:
                raise ConfigError(f"cost.{name} must be >= 0")
        if self.transfer_bandwidth <= 0:
            raise ConfigError("cost.transfer_bandwidth must be > 0")


@dataclass(frozen=True)
class ClusterConfig:
    prefill_workers: int
    decode_workers: int
    gpu: GpuConfig  # per-worker

    def validate(self) -> None:
        if self.prefill_workers < 1 or self.decode_workers < 1:
            raise ConfigError("cluster worker counts must be >= 1")


def prefill_time(plan: BatchPlan, cost: CostModel,
                 accounting: MemoryAccounting) -> float:
    """Prefill duration: base plus per-token compute. Padded accounting
    charges the padded token grid, exact charges actual tokens."""
    if len(plan) == 0:
        raise ValueError("prefill_time requires a non-empty plan")
    if accounting is MemoryAccounting.PADDED:
        tokens = plan.max_input_len * len(plan)
    else:
        tokens = plan.token_sum
    return cost.prefill_base + cost.prefill_per_token * tokens


def transfer_time(nbytes: int, cost: CostModel) -> float:
    if nbytes < 0:
        raise ValueError("transfer bytes must be >= 0")
    return cost.transfer_latency + nbytes / cost.transfer_bandwidth


class _Phase(Enum):
    QUEUED = "queued"
    PREFILL = "prefill"
    TRANSFER = "transfer"
    DECODE_WAIT = "decode_wait"
    DECODE = "decode"
    DONE = "done"
    REJECTED = "rejected"


@dataclass
class _RequestState:
    req: Request
    target_output: int = 0
    emitted: int = 0
    phase: _Phase = _Phase.QUEUED
    context: int = 0           # KV tokens held while in decode / suspended
    decode_worker: int | None = None
    was_suspended: bool = False
    # phase-time accumulators (seconds)
    wait_s: float = 0.0
    prefill_s: float = 0.0
    transfer_s: float = 0.0
    decode_s: float = 0.0
    span_start: float = 0.0    # start of the currently open span
    reject_reason: str | None = None
    pending_recompute_s: float = 0.0


@dataclass
class _Slot:
    state: _RequestState
    context: int
    remaining: int
    seq: int  # admission order; LIFO suspension key


class _DecodeWorker:
    def __init__(self, index: int, safe: int, kv_per_token: int):
        self.index = index
        self.safe = safe
        self.kv_per_token = kv_per_token
        self.slots: list[_Slot] = []
        self.wait: Deque[_RequestState] = deque()
        self.step_pending = False
        self.in_use = 0
        self.admit_seq = 0
        # utilization accounting
        self.busy_s = 0.0
        self.weighted_slot_s = 0.0
        self.peak_slots = 0

    def projection(self) -> int:
        """Footprint if every active slot grows by one token."""
        return self.in_use + self.kv_per_token * len(self.slots)

    def admission_fits(self, context: int) -> bool:
        return self.projection() + self.kv_per_token * (context + 1) <= self.safe

    def recomputed_in_use(self) -> int:
        return self.kv_per_token * sum(s.context for s in self.slots)


class _PrefillWorker:
    def __init__(self, index: int, safe: int):
        self.index = index
        self.safe = safe
        self.plan: BatchPlan | None = None
        self.busy_s = 0.0
        self.token_work = 0  # real (unpadded) tokens prefilled


@dataclass
class _StaticBatch:
    plan: BatchPlan
    members: list[_Slot]
    max_len0: int
    steps: int = 0


class _CoupledWorker:
    """Static-proxy worker: runs prefill then batch-unit decode, coupled."""

    def __init__(self, index: int, safe: int, kv_per_token: int):
        self.index = index
        self.safe = safe
        self.kv_per_token = kv_per_token
        self.batch: _StaticBatch | None = None
        self.phase: str = "idle"  # idle | prefill | decode
        self.in_use = 0
        self.busy_s = 0.0
        self.token_work = 0
        self.weighted_slot_s = 0.0
        self.peak_slots = 0

    def padded_in_use(self) -> int:
        if self.batch is None:
            return 0
        active = sum(1 for m in self.batch.members if m.remaining > 0)
        return self.kv_per_token * active * (self.batch.max_len0 + self.batch.steps)


@dataclass
class PrefillActivity:
    busy_s: float
    token_work: int


@dataclass
class DecodeActivity:
    weighted_slot_s: float
    peak_slots: int


def utilization_proxy(prefill: Iterable[PrefillActivity],
                      decode: Iterable[DecodeActivity],
                      window: float, cost: CostModel) -> dict[str, float]:
    """Busy-time utilization proxies per phase over a window.

    Prefill: fraction of peak token throughput (pure busy fraction when the
    per-token cost is zero). Decode: busy time weighted by slot occupancy
    relative to the worker's own peak. These are simulator-internal proxies,
    not comparable to hardware utilization percentages.
    """
    if window <= 0:
        raise ValueError("utilization window must have elapsed time > 0")
    prefill = list(prefill)
    decode = list(decode)
    if prefill:
        if cost.prefill_per_token > 0:
            used = sum(p.token_work * cost.prefill_per_token for p in prefill)
        else:
            used = sum(p.busy_s for p in prefill)
        prefill_util = min(1.0, used / (window * len(prefill)))
    else:
        prefill_util = 0.0
    if decode:
        per_worker = []
        for d in decode:
            if d.peak_slots == 0:
                per_worker.append(0.0)
            else:
                per_worker.append(min(1.0, d.weighted_slot_s / (window * d.peak_slots)))
        decode_util = sum(per_worker) / len(decode)
    else:
        decode_util = 0.0
    return {"prefill": prefill_util, "decode": decode_util}


class Simulator:
    """One deterministic run of a trace under a scheduling policy."""

    def __init__(self, trace: Trace, *, model: ModelConfig, cluster: ClusterConfig,
                 cost: CostModel, policy: PolicyKind,
                 offline_policy: DispatchPolicy = DispatchPolicy.SJF,
                 accounting: MemoryAccounting = MemoryAccounting.PADDED,
                 slo: SloConfig = SloConfig(),
                 tick_interval: float = 0.05,
                 split_threshold: float = 0.5,
                 resume_mode: str = "retain",
                 event_log: IO[str] | None = None):
        cost.validate()
        cluster.validate()
        if tick_interval <= 0:
            raise ConfigError("tick_interval must be > 0")
        if resume_mode not in ("retain", "recompute"):
            raise ConfigError("resume_mode must be retain or recompute")
        if offline_policy not in (DispatchPolicy.SJF, DispatchPolicy.LJF,
                                  DispatchPolicy.FCFS):
            raise ConfigError("offline_policy must be sjf, ljf or fcfs")
        self.model = model
        self.cluster = cluster
        self.cost = cost
        self.policy = policy
        self.offline_policy = offline_policy
        self.accounting = accounting
        self.slo = slo
        self.tick_interval = tick_interval
        self.resume_mode = resume_mode
        self.event_log = event_log
        self.collector = MetricsCollector()

        self.kv_per_token = model.kv_bytes_per_token
        self.worker_safe = safe_memory(cluster.gpu)

        # the simulator owns private copies: it mutates timestamps and lengths
        trace.validate()
        self.states: dict[int, _RequestState] = {}
        self._trace_requests = [replace(r) for r in trace.requests]

        self.now = 0.0
        self._heap: list[tuple[float, int, int, object]] = []
        self._seq = 0
        self._arrivals_remaining = len(self._trace_requests)
        self._pending_requests = 0
        self._last_batch_latency: float | None = None
        self._recent_arrivals: Deque[float] = deque()
        self._peak_prefill_mem = 0
        self._peak_decode_mem = 0

        self.is_static = isinstance(policy, StaticBatchPolicy)
        if self.is_static:
            pool = cluster.prefill_workers + cluster.decode_workers
            self.coupled_workers = [_CoupledWorker(i, self.worker_safe, self.kv_per_token)
                                    for i in range(pool)]
            self.static_sched = StaticBatchScheduler(model, cluster.gpu, policy.fixed_n)
            self.bucket_set = None
            self.controller = None
        else:
            if isinstance(policy, ContinuousNoBucketPolicy):
                # single fixed bucket; threshold 1.0 means splits never trigger
                self.bucket_set = BucketSet(model.max_seq_len, split_threshold=1.0)
                self._adjust_enabled = False
                self._online_policy = DispatchPolicy.FCFS
                self._offline_policy_eff = DispatchPolicy.FCFS
            else:
                self.bucket_set = BucketSet(model.max_seq_len,
                                            split_threshold=split_threshold)
                self._adjust_enabled = True
                self._online_policy = DispatchPolicy.EARLIEST_ARRIVAL
                self._offline_policy_eff = offline_policy
            self.controller = BatchController(model, cluster.gpu, accounting)
            self.prefill_workers = [_PrefillWorker(i, self.worker_safe)
                                    for i in range(cluster.prefill_workers)]
            self.decode_workers = [_DecodeWorker(i, self.worker_safe, self.kv_per_token)
                                   for i in range(cluster.decode_workers)]

    # ---- event plumbing -------------------------------------------------

    def _push(self, t: float, kind: EventKind, payload: object = None) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (t, int(kind), self._seq, payload))

    def _log(self, kind: str, request_id: int | None = None,
             worker: int | None = None, detail: dict | None = None) -> None:
        if self.event_log is None:
            return
        obj: dict = {"t": self.now, "kind": kind}
        if request_id is not None:
            obj["request_id"] = request_id
        if worker is not None:
            obj["worker"] = worker
        if detail:
            obj["detail"] = detail
        self.event_log.write(json.dumps(obj) + "\n")

    # ---- top level -------------------------------------------------------

    def run(self) -> MetricsReport:
        wall0 = _time.perf_counter()
        for r in self._trace_requests:
            self._push(r.arrival_time, EventKind.ARRIVAL, r)
        self._pending_requests = len(self._trace_requests)
        if self._trace_requests:
            self._push(0.0, EventKind.SCHEDULER_TICK, None)
        while self._heap:
            t, kind, _seq, payload = heapq.heappop(self._heap)
            if t < self.now:
                raise SimulationError(
                    f"event queue went backwards: {t} after {self.now}")
            self.now = t
            kind = EventKind(kind)
            if kind is EventKind.ARRIVAL:
                self._on_arrival(payload)
            elif kind is EventKind.SCHEDULER_TICK:
                self._on_tick()
            elif kind is EventKind.PREFILL_DONE:
                self._on_prefill_done(payload)
            elif kind is EventKind.TRANSFER_DONE:
                self._on_transfer_done(payload)
            elif kind is EventKind.DECODE_STEP_DONE:
                self._on_decode_step_done(payload)
            else:
                self._on_completion(payload)
            self._audit_memory()
        return self._finalize(_time.perf_counter() - wall0)

    # ---- arrival / ingestion ----------------------------------------------

    def _on_arrival(self, req: Request) -> None:
        self._arrivals_remaining -= 1
        self.collector.record_event("arrival", self.now)
        # ultra-long inputs are truncated to the model's bucketable range
        if req.input_len >= self.model.max_seq_len:
            req.input_len = self.model.max_seq_len - 1
        if req.output_len is None:
            raise ConfigError(
                f"request {req.id} has no output length; fill it from an "
                "output distribution before running")
        if req.task_class is TaskClass.ONLINE:
            if req.slo_ttft is None:
                req.slo_ttft = self.slo.ttft
            if req.slo_e2e is None:
                req.slo_e2e = self.slo.e2e
        state = _RequestState(req=req)
        # the final token is returned without entering the KV cache, so the
        # context never exceeds max_seq_len
        state.target_output = max(1, min(req.output_len,
                                         self.model.max_seq_len - req.input_len + 1))
        req.enqueue_time = self.now
        state.span_start = self.now
        self.states[req.id] = state
        if self.is_static:
            self.static_sched.enqueue(req)
        else:
            perf = _time.perf_counter
            t0 = perf()
            self.bucket_set.assign(req)
            self.collector.bucketing_overhead_s += perf() - t0
        self._log("arrival", request_id=req.id,
                  detail={"input_len": req.input_len, "class": req.task_class.value})
        # burst boundary: dispatch once no same-time arrival is queued; bucket
        # adjustment itself stays on the tick cadence to keep its cost bounded
        if not (self._heap and self._heap[0][0] == self.now
                and self._heap[0][1] == int(EventKind.ARRIVAL)):
            self._schedule_pass(adjust=False)

    # ---- scheduling pass ---------------------------------------------------

    def _work_pending(self) -> bool:
        return self._pending_requests > 0

    def _on_tick(self) -> None:
        self.collector.record_event("tick", self.now)
        self._take_snapshot()
        self._schedule_pass()
        self._log("scheduler_tick")
        if self._work_pending():
            self._push(self.now + self.tick_interval, EventKind.SCHEDULER_TICK, None)

    def _schedule_pass(self, adjust: bool = True) -> None:
        if self.is_static:
            self._dispatch_static()
            return
        if adjust and self._adjust_enabled and self.bucket_set.dirty:
            # adjust_buckets is a no-op on unchanged state, so clean passes skip it
            n_max = self.controller.current_n_max(self.bucket_set)
            perf = _time.perf_counter
            t0 = perf()
            changes = self.bucket_set.adjust_buckets(n_max)
            self.collector.bucketing_overhead_s += perf() - t0
            for ch in changes:
                self.collector.on_structural(self.now, ch.kind, ch.parent_low,
                                             ch.parent_up, ch.midpoint)
                self._log(f"bucket_{ch.kind}",
                          detail={"parent_range": [ch.parent_low, ch.parent_up],
                                  "midpoint": ch.midpoint})
        self._dispatch_prefill()

    def _next_plan(self) -> BatchPlan | None:
        for cls, policy in ((TaskClass.ONLINE, self._online_policy),
                            (TaskClass.OFFLINE, self._offline_policy_eff)):
            idx = self.controller.select_bucket(self.bucket_set, cls)
            if idx is None:
                continue
            plan = self.controller.form_batch(
                self.bucket_set.buckets[idx], policy,
                pledged=0, task_class=cls, now=self.now)
            if plan is not None or self.controller.rejections:
                self.bucket_set.dirty = True
            self._drain_controller_rejections()
            if plan is not None:
                return plan
        return None

    def _drain_controller_rejections(self) -> None:
        for rej in self.controller.rejections:
            self._reject(self.states[rej.request.id], "oversize")
        self.controller.rejections.clear()

    def _dispatch_prefill(self) -> None:
        for w in self.prefill_workers:
            if w.plan is not None:
                continue
            plan = self._next_plan()
            if plan is None:
                break
            self._start_prefill(w, plan)

    def _start_prefill(self, w: _PrefillWorker, plan: BatchPlan) -> None:
        from .memory_model import waste_ratio
        duration = prefill_time(plan, self.cost, self.accounting)
        for req in plan.requests:
            state = self.states[req.id]
            state.wait_s += self.now - state.span_start
            state.phase = _Phase.PREFILL
            state.span_start = self.now
            req.prefill_start = self.now
        w.plan = plan
        w.busy_s += duration
        w.token_work += plan.token_sum
        self._peak_prefill_mem = max(self._peak_prefill_mem, plan.footprint)
        self.collector.on_batch(self.now, waste_ratio([r.input_len for r in plan.requests]))
        self._last_batch_latency = duration
        self._push(self.now + duration, EventKind.PREFILL_DONE, w.index)
        self._log("prefill_start", worker=w.index,
                  detail={"requests": list(plan.request_ids),
                          "footprint": plan.footprint})

    def _on_prefill_done(self, worker_idx: int) -> None:
        self.collector.record_event("prefill", self.now)
        if self.is_static:
            self._on_static_prefill_done(worker_idx)
            return
        w = self.prefill_workers[worker_idx]
        plan = w.plan
        w.plan = None
        for req in plan.requests:
            state = self.states[req.id]
            state.prefill_s += self.now - state.span_start
            state.phase = _Phase.TRANSFER
            state.span_start = self.now
            kv_bytes = self.kv_per_token * req.input_len
            self._push(self.now + transfer_time(kv_bytes, self.cost),
                       EventKind.TRANSFER_DONE, req.id)
        self._log("prefill_done", worker=worker_idx,
                  detail={"requests": list(plan.request_ids)})
        self._dispatch_prefill()

    # ---- decode pool ---------------------------------------------------------

    def _choose_decode_worker(self) -> _DecodeWorker:
        best = self.decode_workers[0]
        best_free = best.safe - best.in_use
        for w in self.decode_workers[1:]:
            free = w.safe - w.in_use
            if free > best_free:  # ties keep the lower index
                best, best_free = w, free
        return best

    def _on_transfer_done(self, req_id: int) -> None:
        self.collector.record_event("transfer", self.now)
        state = self.states[req_id]
        state.transfer_s += self.now - state.span_start
        state.phase = _Phase.DECODE_WAIT
        state.span_start = self.now
        state.context = state.req.input_len
        w = self._choose_decode_worker()
        state.decode_worker = w.index
        w.wait.append(state)
        self._log("transfer_done", request_id=req_id, worker=w.index)
        if not w.step_pending:
            self._drain_decode_wait(w)
            self._maybe_schedule_step(w)

    def _admit_slot(self, w: _DecodeWorker, state: _RequestState) -> None:
        if self.resume_mode == "recompute" and state.was_suspended:
            # KV is rebuilt on the decode worker; charge it to the next step
            state.context = state.req.input_len
            state.emitted = 0
            state.pending_recompute_s = (self.cost.prefill_base +
                                         self.cost.prefill_per_token * state.req.input_len)
        w.admit_seq += 1
        slot = _Slot(state, state.context, state.target_output - state.emitted,
                     w.admit_seq)
        w.slots.append(slot)
        w.in_use += self.kv_per_token * slot.context
        state.wait_s += self.now - state.span_start
        state.phase = _Phase.DECODE
        state.span_start = self.now

    def _drain_decode_wait(self, w: _DecodeWorker) -> None:
        """Admit waiting requests in order while the growth lookahead fits."""
        while w.wait:
            state = w.wait[0]
            needed = self.kv_per_token * (state.context + 1)
            if needed > w.safe:
                # can never fit even on an empty worker
                w.wait.popleft()
                self._reject(state, "decode_oversize")
                continue
            if not w.admission_fits(state.context):
                break
            w.wait.popleft()
            self._admit_slot(w, state)

    def _maybe_schedule_step(self, w: _DecodeWorker) -> None:
        if w.step_pending or not w.slots:
            return
        duration = self.cost.decode_step_base + self.cost.decode_per_kv_byte * w.in_use
        extra = sum(s.state.pending_recompute_s for s in w.slots)
        if extra:
            duration += extra
            for s in w.slots:
                s.state.pending_recompute_s = 0.0
        w.step_pending = True
        w.busy_s += duration
        w.weighted_slot_s += duration * len(w.slots)
        w.peak_slots = max(w.peak_slots, len(w.slots))
        self._push(self.now + duration, EventKind.DECODE_STEP_DONE, w.index)

    def _on_decode_step_done(self, worker_idx: int) -> None:
        self.collector.record_event("decode", self.now)
        if self.is_static:
            self._on_static_decode_step(worker_idx)
            return
        w = self.decode_workers[worker_idx]
        w.step_pending = False
        finished: list[_Slot] = []
        for slot in w.slots:
            slot.remaining -= 1
            slot.state.emitted += 1
            req = slot.state.req
            if req.first_token_time is None:
                req.first_token_time = self.now
            if slot.remaining == 0:
                finished.append(slot)
            else:
                slot.context += 1
                slot.state.context = slot.context
                w.in_use += self.kv_per_token
        for slot in finished:
            w.slots.remove(slot)
            w.in_use -= self.kv_per_token * slot.context
            state = slot.state
            state.decode_s += self.now - state.span_start
            state.phase = _Phase.DONE
            state.req.completion_time = self.now
            self._push(self.now, EventKind.COMPLETION, state)
        self._handle_growth_overflow(w)
        self._drain_decode_wait(w)
        self._maybe_schedule_step(w)
        self._log("decode_step", worker=worker_idx,
                  detail={"slots": len(w.slots)})

    def _handle_growth_overflow(self, w: _DecodeWorker) -> None:
        """Suspend most-recently-admitted slots until the next step fits."""
        while w.projection() > w.safe and len(w.slots) > 1:
            victim = max(w.slots, key=lambda s: s.seq)
            w.slots.remove(victim)
            w.in_use -= self.kv_per_token * victim.context
            state = victim.state
            state.decode_s += self.now - state.span_start
            state.phase = _Phase.DECODE_WAIT
            state.span_start = self.now
            state.context = victim.context
            state.was_suspended = True
            w.wait.appendleft(state)
            self.collector.on_suspension(self.now)
            self._log("suspension", request_id=state.req.id, worker=w.index)
        if w.slots and w.projection() > w.safe:
            # a lone slot that cannot grow can never finish on this worker
            victim = w.slots.pop()
            w.in_use -= self.kv_per_token * victim.context
            self._reject(victim.state, "decode_overflow")

    # ---- static (coupled) pipeline -----------------------------------------

    def _dispatch_static(self) -> None:
        flush = self._arrivals_remaining == 0
        for w in self.coupled_workers:
            if w.phase != "idle":
                continue
            plan = self.static_sched.schedule(self.now, flush)
            self.collector.halvings = self.static_sched.halvings
            for rej in self.static_sched.rejections:
                self._reject(self.states[rej.request.id], "oversize")
            self.static_sched.rejections.clear()
            if plan is None:
                break
            self._start_static_prefill(w, plan)

    def _start_static_prefill(self, w: _CoupledWorker, plan: BatchPlan) -> None:
        from .memory_model import waste_ratio
        duration = prefill_time(plan, self.cost, MemoryAccounting.PADDED)
        members = []
        for req in plan.requests:
            state = self.states[req.id]
            state.wait_s += self.now - state.span_start
            state.phase = _Phase.PREFILL
            state.span_start = self.now
            req.prefill_start = self.now
            members.append(_Slot(state, req.input_len, state.target_output,
                                 len(members)))
        w.batch = _StaticBatch(plan, members, plan.max_input_len)
        w.phase = "prefill"
        w.in_use = plan.footprint
        w.busy_s += duration
        w.token_work += plan.token_sum
        self._peak_prefill_mem = max(self._peak_prefill_mem, plan.footprint)
        self.collector.on_batch(self.now, waste_ratio([r.input_len for r in plan.requests]))
        self._last_batch_latency = duration
        self._push(self.now + duration, EventKind.PREFILL_DONE, w.index)
        self._log("prefill_start", worker=w.index,
                  detail={"requests": list(plan.request_ids), "static": True})

    def _on_static_prefill_done(self, worker_idx: int) -> None:
        w = self.coupled_workers[worker_idx]
        w.phase = "decode"
        for m in w.batch.members:
            state = m.state
            state.prefill_s += self.now - state.span_start
            state.phase = _Phase.DECODE
            state.span_start = self.now
        self._schedule_static_step(w)

    def _schedule_static_step(self, w: _CoupledWorker) -> None:
        batch = w.batch
        active = [m for m in batch.members if m.remaining > 0]
        if not active:
            w.batch = None
            w.phase = "idle"
            w.in_use = 0
            self._dispatch_static()
            return
        # growth check before the step: padded rows each gain one token
        while active:
            projected = self.kv_per_token * len(active) * (batch.max_len0 + batch.steps + 1)
            if projected <= w.safe:
                break
            victim = active.pop()  # youngest batch member still active
            victim.remaining = 0
            self._reject(victim.state, "static_overflow")
        if not active:
            w.batch = None
            w.phase = "idle"
            w.in_use = 0
            self._dispatch_static()
            return
        w.in_use = self.kv_per_token * len(active) * (batch.max_len0 + batch.steps)
        self._peak_decode_mem = max(self._peak_decode_mem, w.in_use)
        duration = self.cost.decode_step_base + self.cost.decode_per_kv_byte * w.in_use
        w.busy_s += duration
        w.weighted_slot_s += duration * len(active)
        w.peak_slots = max(w.peak_slots, len(active))
        self._push(self.now + duration, EventKind.DECODE_STEP_DONE, w.index)

    def _on_static_decode_step(self, worker_idx: int) -> None:
        w = self.coupled_workers[worker_idx]
        batch = w.batch
        batch.steps += 1
        for m in batch.members:
            if m.remaining <= 0:
                continue
            m.remaining -= 1
            m.state.emitted += 1
            req = m.state.req
            if req.first_token_time is None:
                req.first_token_time = self.now
            if m.remaining == 0:
                state = m.state
                state.decode_s += self.now - state.span_start
                state.phase = _Phase.DONE
                req.completion_time = self.now
                self._push(self.now, EventKind.COMPLETION, state)
        active = sum(1 for m in batch.members if m.remaining > 0)
        w.in_use = self.kv_per_token * active * (batch.max_len0 + batch.steps)
        self._log("decode_step", worker=worker_idx, detail={"slots": active, "static": True})
        self._schedule_static_step(w)

    # ---- terminal states ------------------------------------------------------

    def _reject(self, state: _RequestState, reason: str) -> None:
        if state.phase in (_Phase.DONE, _Phase.REJECTED):
            return
        # close whichever span is open
        span = self.now - state.span_start
        if state.phase in (_Phase.QUEUED, _Phase.DECODE_WAIT):
            state.wait_s += span
        elif state.phase is _Phase.PREFILL:
            state.prefill_s += span
        elif state.phase is _Phase.TRANSFER:
            state.transfer_s += span
        elif state.phase is _Phase.DECODE:
            state.decode_s += span
        state.phase = _Phase.REJECTED
        state.reject_reason = reason
        state.req.completion_time = None
        self._push(self.now, EventKind.COMPLETION, state)

    def _on_completion(self, state: _RequestState) -> None:
        req = state.req
        if state.phase is _Phase.REJECTED:
            self.collector.on_rejection(self.now, state.reject_reason or "unknown")
            outcome_completed = False
            ttft = None
            e2e = None
        else:
            self.collector.on_completion(self.now)
            outcome_completed = True
            ttft = req.first_token_time - req.arrival_time
            e2e = req.completion_time - req.arrival_time
        self._pending_requests -= 1
        self.collector.on_outcome(RequestOutcome(
            request_id=req.id,
            task_class=req.task_class.value,
            completed=outcome_completed,
            arrival=req.arrival_time,
            ttft=ttft,
            e2e=e2e,
            slo_ttft=req.slo_ttft,
            slo_e2e=req.slo_e2e,
            tokens_out=state.emitted,
            wait_s=state.wait_s,
            prefill_s=state.prefill_s,
            transfer_s=state.transfer_s,
            decode_s=state.decode_s,
        ))
        self._log("completion", request_id=req.id,
                  detail={"outcome": "completed" if outcome_completed else "rejected"})

    # ---- monitoring -------------------------------------------------------------

    def _take_snapshot(self) -> None:
        while self._recent_arrivals and self._recent_arrivals[0] < self.now - 1.0:
            self._recent_arrivals.popleft()
        if self.is_static:
            queued = list(self.static_sched.queue)
            bucket_lens = [len(queued)]
            decode_waits: list[int] = []
            prefill_mem = [w.in_use for w in self.coupled_workers]
            decode_mem: list[int] = []
        else:
            queued = list(self.bucket_set.iter_requests())
            bucket_lens = [len(b) for b in self.bucket_set.buckets]
            decode_waits = [len(w.wait) for w in self.decode_workers]
            prefill_mem = [w.plan.footprint if w.plan else 0 for w in self.prefill_workers]
            decode_mem = [w.in_use for w in self.decode_workers]
        mean_len = (sum(r.input_len for r in queued) / len(queued)) if queued else None
        self.collector.on_snapshot(MonitorSnapshot(
            time=self.now,
            prefill_mem_in_use=prefill_mem,
            decode_mem_in_use=decode_mem,
            bucket_queue_lens=bucket_lens,
            decode_wait_lens=decode_waits,
            arrival_rate_1s=len(self._recent_arrivals) / 1.0,
            mean_queued_input_len=mean_len,
            recent_batch_latency=self._last_batch_latency,
        ))
        if not self.is_static and queued:
            hist = LengthHistogram.from_samples(
                [r.input_len for r in queued], bins=64,
                value_range=(0, self.model.max_seq_len))
            partition = [(b.low, b.up) for b in self.bucket_set.buckets]
            self.collector.on_expected_waste(self.now, expected_waste(hist, partition))

    def _audit_memory(self) -> None:
        if self.is_static:
            for w in self.coupled_workers:
                if w.in_use > w.safe:
                    self.collector.safety_violations += 1
                    raise SimulationError(
                        f"static worker {w.index} footprint {w.in_use} exceeds "
                        f"safe memory {w.safe} at t={self.now}")
            return
        for w in self.prefill_workers:
            if w.plan is not None and w.plan.footprint > w.safe:
                self.collector.safety_violations += 1
                raise SimulationError(
                    f"prefill worker {w.index} footprint {w.plan.footprint} "
                    f"exceeds safe memory {w.safe} at t={self.now}")
        for w in self.decode_workers:
            actual = w.recomputed_in_use()
            if actual != w.in_use:
                raise SimulationError(
                    f"decode worker {w.index} memory ledger drift: "
                    f"{w.in_use} tracked vs {actual} actual at t={self.now}")
            if w.in_use > w.safe:
                self.collector.safety_violations += 1
                raise SimulationError(
                    f"decode worker {w.index} footprint {w.in_use} exceeds "
                    f"safe memory {w.safe} at t={self.now}")
            self._peak_decode_mem = max(self._peak_decode_mem, w.in_use)

    # ---- report -------------------------------------------------------------------

    def _finalize(self, wall_s: float) -> MetricsReport:
        col = self.collector
        outcomes = col.outcomes
        completed = [o for o in outcomes if o.completed]
        for o in completed:
            span_sum = o.wait_s + o.prefill_s + o.transfer_s + o.decode_s
            if o.e2e is not None and abs(span_sum - o.e2e) > 1e-6 * max(1.0, o.e2e):
                raise SimulationError(
                    f"phase breakdown of request {o.request_id} does not sum "
                    f"to its end-to-end time ({span_sum} vs {o.e2e})")
        duration = 0.0
        for r in self._trace_requests:
            state = self.states.get(r.id)
            if state is None:
                continue
            if r.completion_time is not None:
                duration = max(duration, r.completion_time)
        if not completed and outcomes:
            duration = max((o.arrival for o in outcomes), default=0.0)
        tokens = sum(o.tokens_out for o in completed)
        report = MetricsReport(
            policy=policy_label(self.policy),
            accounting=self.accounting.value,
            requests_total=len(self._trace_requests),
            completed=col.completed,
            rejected=col.rejected,
            duration_s=duration,
            tokens_generated=tokens,
            tokens_per_s=tokens / duration if duration > 0 else 0.0,
            server_rps=col.completed / duration if duration > 0 else 0.0,
            offered_rps=len(self._trace_requests) / duration if duration > 0 else 0.0,
            slo_attainment=slo_attainment(outcomes),
            batches=col.batches,
            mean_batch_waste=(sum(col.batch_waste) / len(col.batch_waste)
                              if col.batch_waste else None),
            expected_waste_trajectory=list(col.expected_waste_trajectory),
            structural={"splits": col.splits, "merges": col.merges,
                        "skipped_splits": col.skipped_splits},
            suspensions=col.suspensions,
            rejection_kinds=dict(col.rejection_kinds),
            halvings=col.halvings,
            peak_memory={"prefill": self._peak_prefill_mem,
                         "decode": self._peak_decode_mem},
            bucketing_overhead_s=col.bucketing_overhead_s,
            process_wall_s=wall_s,
        )
        ttfts = sorted(o.ttft for o in completed if o.ttft is not None)
        e2es = sorted(o.e2e for o in completed if o.e2e is not None)
        report.ttft_p50, report.ttft_p90, report.ttft_p99 = latency_percentiles(ttfts)
        report.e2e_p50, report.e2e_p90, report.e2e_p99 = latency_percentiles(e2es)
        report.phase_totals = {
            "queue": sum(o.wait_s for o in completed),
            "prefill": sum(o.prefill_s for o in completed),
            "transfer": sum(o.transfer_s for o in completed),
            "decode": sum(o.decode_s for o in completed),
        }
        if duration > 0:
            if self.is_static:
                prefill_act = [PrefillActivity(w.busy_s, w.token_work)
                               for w in self.coupled_workers]
                decode_act = [DecodeActivity(w.weighted_slot_s, w.peak_slots)
                              for w in self.coupled_workers]
            else:
                prefill_act = [PrefillActivity(w.busy_s, w.token_work)
                               for w in self.prefill_workers]
                decode_act = [DecodeActivity(w.weighted_slot_s, w.peak_slots)
                              for w in self.decode_workers]
            report.utilization = utilization_proxy(prefill_act, decode_act,
                                                   duration, self.cost)
        # per-request timestamp monotonicity, checked for every completed run
        for r in self._trace_requests:
            if r.completion_time is None:
                continue
            seq = [r.arrival_time, r.enqueue_time, r.prefill_start,
                   r.first_token_time, r.completion_time]
            if any(b < a for a, b in zip(seq, seq[1:])):
                raise SimulationError(f"request {r.id} timestamps are not monotone: {seq}")
        return report


def run(trace: Trace, cluster: ClusterConfig, model: ModelConfig,
        cost: CostModel, policy: PolicyKind, tick_interval: float = 0.05,
        **kwargs) -> MetricsReport:
    """Run one simulation to quiescence and return the metrics report."""
    sim = Simulator(trace, model=model, cluster=cluster, cost=cost,
                    policy=policy, tick_interval=tick_interval, **kwargs)
    return sim.run()
