"""System-wide metric collection and the evaluation report.

The collector is the single-writer monitor fed by the event loop; report
computation is pure over the finished streams. Machine-format (JSON) output
contains only deterministic fields so repeated runs of the same scenario
are byte-identical; wall-clock measurements (bucketing overhead, process
time) appear in the table format and on the report object itself.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from typing import Iterable, Sequence

import numpy as np

from .errors import SimulationError


@dataclass(frozen=True)
class SloConfig:
    ttft: float | None = None
    e2e: float | None = None


@dataclass
class MonitorSnapshot:
    """Point-in-time view of queues, memory, and arrival pressure."""

    time: float
    prefill_mem_in_use: list[int]
    decode_mem_in_use: list[int]
    bucket_queue_lens: list[int]
    decode_wait_lens: list[int]
    arrival_rate_1s: float
    mean_queued_input_len: float | None
    recent_batch_latency: float | None


@dataclass
class RequestOutcome:
    """Per-request summary used for SLO accounting and latency percentiles."""

    request_id: int
    task_class: str  # "online" | "offline"
    completed: bool
    arrival: float
    ttft: float | None
    e2e: float | None
    slo_ttft: float | None
    slo_e2e: float | None
    tokens_out: int
    wait_s: float
    prefill_s: float
    transfer_s: float
    decode_s: float


class MetricsCollector:
    """Append-only event sink with per-stream timestamp monotonicity."""

    def __init__(self) -> None:
        self._last_t: dict[str, float] = {}
        self.completed = 0
        self.rejected = 0
        self.rejection_kinds: dict[str, int] = {}
        self.splits = 0
        self.merges = 0
        self.skipped_splits = 0
        # full structural records: (time, kind, parent_low, parent_up, midpoint)
        self.structural_events: list[tuple] = []
        self.suspensions = 0
        self.halvings = 0
        self.batches = 0
        self.batch_waste: list[float] = []
        self.expected_waste_trajectory: list[tuple[float, float]] = []
        self.snapshots: list[MonitorSnapshot] = []
        self.outcomes: list[RequestOutcome] = []
        self.bucketing_overhead_s = 0.0
        self.safety_violations = 0

    def record_event(self, stream: str, t: float) -> None:
        last = self._last_t.get(stream)
        if last is not None and t < last:
            raise SimulationError(
                f"out-of-order timestamp on stream {stream!r}: {t} after {last}")
        self._last_t[stream] = t

    def on_structural(self, t: float, kind: str, parent_low: int = 0,
                      parent_up: int = 0, midpoint: int | None = None) -> None:
        self.record_event("structural", t)
        self.structural_events.append((t, kind, parent_low, parent_up, midpoint))
        if kind == "split":
            self.splits += 1
        elif kind == "merge":
            self.merges += 1
        else:
            self.skipped_splits += 1

    def on_batch(self, t: float, waste: float) -> None:
        self.record_event("batch", t)
        self.batches += 1
        self.batch_waste.append(waste)

    def on_suspension(self, t: float) -> None:
        self.record_event("suspension", t)
        self.suspensions += 1

    def on_rejection(self, t: float, kind: str) -> None:
        self.record_event("rejection", t)
        self.rejected += 1
        self.rejection_kinds[kind] = self.rejection_kinds.get(kind, 0) + 1

    def on_completion(self, t: float) -> None:
        self.record_event("completion", t)
        self.completed += 1

    def on_outcome(self, outcome: RequestOutcome) -> None:
        self.outcomes.append(outcome)

    def on_expected_waste(self, t: float, value: float) -> None:
        self.record_event("expected_waste", t)
        self.expected_waste_trajectory.append((t, value))

    def on_snapshot(self, snap: MonitorSnapshot) -> None:
        self.record_event("snapshot", snap.time)
        self.snapshots.append(snap)

    def add_bucketing_overhead(self, seconds: float) -> None:
        self.bucketing_overhead_s += seconds


def slo_attainment(outcomes: Iterable[RequestOutcome]) -> float | None:
    """Fraction of online requests meeting every configured deadline.

    Rejected online requests count as misses; offline requests are excluded.
    Returns None when no online request carries any SLO target (the metric
    is undefined, not 0 or 1).
    """
    eligible = 0
    hits = 0
    for o in outcomes:
        if o.task_class != "online":
            continue
        if o.slo_ttft is None and o.slo_e2e is None:
            continue
        eligible += 1
        if not o.completed:
            continue
        ok = True
        if o.slo_ttft is not None and (o.ttft is None or o.ttft > o.slo_ttft):
            ok = False
        if o.slo_e2e is not None and (o.e2e is None or o.e2e > o.slo_e2e):
            ok = False
        if ok:
            hits += 1
    if eligible == 0:
        return None
    return hits / eligible


@dataclass(frozen=True)
class GoodputResult:
    rps: float
    flag: str  # "interpolated" | "saturated" | "below_threshold"


def goodput_at(threshold: float, points: Sequence[tuple[float, float]]) -> GoodputResult:
    """Max sustainable load meeting the attainment threshold.

    points are (load_rps, attainment) pairs; attainment is expected to be
    (approximately) non-increasing in load. Linear interpolation between the
    bracketing pair; flagged endpoints when the threshold is never crossed.
    """
    if len(points) < 2:
        raise ValueError("goodput_at needs at least two sweep points")
    pts = sorted(points, key=lambda p: p[0])
    above = [i for i, (_, a) in enumerate(pts) if a >= threshold]
    if not above:
        return GoodputResult(pts[0][0], "below_threshold")
    i = above[-1]
    if i == len(pts) - 1:
        return GoodputResult(pts[-1][0], "saturated")
    l1, a1 = pts[i]
    l2, a2 = pts[i + 1]
    rps = l1 + (a1 - threshold) / (a1 - a2) * (l2 - l1)
    return GoodputResult(rps, "interpolated")


@dataclass
class MetricsReport:
    """Aggregated run results.

    Deterministic fields round-trip through JSON; the wall-clock fields
    (bucketing_overhead_s, process_wall_s) are measured per run and excluded
    from machine output so identical scenarios emit identical bytes.
    """

    policy: str = ""
    accounting: str = ""
    requests_total: int = 0
    completed: int = 0
    rejected: int = 0
    duration_s: float = 0.0
    tokens_generated: int = 0
    tokens_per_s: float = 0.0
    server_rps: float = 0.0
    offered_rps: float = 0.0
    slo_attainment: float | None = None
    ttft_p50: float | None = None
    ttft_p90: float | None = None
    ttft_p99: float | None = None
    e2e_p50: float | None = None
    e2e_p90: float | None = None
    e2e_p99: float | None = None
    phase_totals: dict = field(default_factory=lambda: {
        "queue": 0.0, "prefill": 0.0, "transfer": 0.0, "decode": 0.0})
    batches: int = 0
    mean_batch_waste: float | None = None
    expected_waste_trajectory: list = field(default_factory=list)
    structural: dict = field(default_factory=lambda: {
        "splits": 0, "merges": 0, "skipped_splits": 0})
    suspensions: int = 0
    rejection_kinds: dict = field(default_factory=dict)
    halvings: int = 0
    utilization: dict = field(default_factory=lambda: {"prefill": 0.0, "decode": 0.0})
    peak_memory: dict = field(default_factory=lambda: {"prefill": 0, "decode": 0})
    # wall-clock measurements; never part of machine output
    bucketing_overhead_s: float = 0.0
    process_wall_s: float = 0.0

    _WALL_FIELDS = ("bucketing_overhead_s", "process_wall_s")

    def overhead_fraction(self) -> float | None:
        if self.process_wall_s <= 0:
            return None
        return self.bucketing_overhead_s / self.process_wall_s

    def to_dict(self, include_wall_clock: bool = False) -> dict:
        d = asdict(self)
        d["expected_waste_trajectory"] = [list(p) for p in self.expected_waste_trajectory]
        if not include_wall_clock:
            for k in self._WALL_FIELDS:
                d.pop(k)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        d = dict(d)
        d["expected_waste_trajectory"] = [tuple(p) for p in d.get("expected_waste_trajectory", [])]
        for k in cls._WALL_FIELDS:
            d.setdefault(k, 0.0)
        return cls(**d)

    def machine_equal(self, other: "MetricsReport") -> bool:
        return self.to_dict() == other.to_dict()

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def to_table(self) -> str:
        def fmt(v):
            if v is None:
                return "-"
            if isinstance(v, float):
                return f"{v:.6g}"
            return str(v)

        rows = [
            ("policy", self.policy),
            ("accounting", self.accounting),
            ("requests", self.requests_total),
            ("completed", self.completed),
            ("rejected", self.rejected),
            ("duration_s", self.duration_s),
            ("tokens_generated", self.tokens_generated),
            ("tokens_per_s", self.tokens_per_s),
            ("server_rps", self.server_rps),
            ("offered_rps", self.offered_rps),
            ("slo_attainment", self.slo_attainment),
            ("ttft_p50/p90/p99", " / ".join(fmt(v) for v in
                                            (self.ttft_p50, self.ttft_p90, self.ttft_p99))),
            ("e2e_p50/p90/p99", " / ".join(fmt(v) for v in
                                           (self.e2e_p50, self.e2e_p90, self.e2e_p99))),
            ("queue_s_total", self.phase_totals["queue"]),
            ("prefill_s_total", self.phase_totals["prefill"]),
            ("transfer_s_total", self.phase_totals["transfer"]),
            ("decode_s_total", self.phase_totals["decode"]),
            ("batches", self.batches),
            ("mean_batch_waste", self.mean_batch_waste),
            ("splits/merges/skips", f"{self.structural['splits']} / "
                                    f"{self.structural['merges']} / "
                                    f"{self.structural['skipped_splits']}"),
            ("suspensions", self.suspensions),
            ("halvings", self.halvings),
            ("util_prefill", self.utilization["prefill"]),
            ("util_decode", self.utilization["decode"]),
            ("peak_mem_prefill_bytes", self.peak_memory["prefill"]),
            ("peak_mem_decode_bytes", self.peak_memory["decode"]),
            ("bucketing_overhead_s", self.bucketing_overhead_s),
            ("process_wall_s", self.process_wall_s),
            ("overhead_fraction", self.overhead_fraction()),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {fmt(v)}" for k, v in rows) + "\n"


def emit_report(report: MetricsReport, fmt: str) -> str:
    if fmt == "json":
        return report.to_json()
    if fmt == "table":
        return report.to_table()
    raise ValueError(f"unknown report format {fmt!r}")


def _percentile(values: Sequence[float], q: float) -> float | None:
    if not values:
        return None
    return float(np.percentile(np.asarray(values, dtype=float), q))


def latency_percentiles(values: Sequence[float]) -> tuple[float | None, float | None, float | None]:
    return _percentile(values, 50), _percentile(values, 90), _percentile(values, 99)


SWEEP_CSV_HEADER = "load_rps,server_rps,slo_attainment,tokens_per_s"


@dataclass(frozen=True)
class SweepRow:
    load_rps: float
    server_rps: float
    slo_attainment: float | None
    tokens_per_s: float
    server_rps_std: float | None = None
    slo_attainment_std: float | None = None
    tokens_per_s_std: float | None = None
    repeats: int = 1


def sweep_to_csv(rows: Sequence[SweepRow]) -> str:
    def cell(v):
        return "" if v is None else repr(float(v))

    lines = [SWEEP_CSV_HEADER
             + ",server_rps_std,slo_attainment_std,tokens_per_s_std,repeats"]
    for r in rows:
        lines.append(",".join([
            repr(float(r.load_rps)),
            repr(float(r.server_rps)),
            cell(r.slo_attainment),
            repr(float(r.tokens_per_s)),
            cell(r.server_rps_std),
            cell(r.slo_attainment_std),
            cell(r.tokens_per_s_std),
            str(r.repeats),
        ]))
    return "\n".join(lines) + "\n"
