"""Synthetic workload generation and trace ingestion.

Produces the timed request stream fed to the scheduler. Requests are either
drawn from configurable length/output distributions under a Poisson or
fixed-interval arrival process, or replayed from CSV / JSON-lines trace
files. All sampling goes through an explicit numpy Generator, so a fixed
(spec, seed) pair yields byte-identical traces across runs.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import IO, Iterator, Union

import numpy as np

from .errors import ConfigError, TraceFormatError


class TaskClass(Enum):
    ONLINE = "online"
    OFFLINE = "offline"


@dataclass
class Request:
    """One inference job: identity, arrival, lengths, class, SLO targets.

    output_len is sampled at generation time and stays hidden from the
    scheduler; the decode simulator reveals it one token at a time. It is
    None for trace records that omit the output column (filled in later
    from the scenario's output distribution).
    """

    id: int
    arrival_time: float
    input_len: int
    output_len: int | None
    task_class: TaskClass
    slo_ttft: float | None = None
    slo_e2e: float | None = None
    # lifecycle timestamps, filled in by the simulator
    enqueue_time: float | None = None
    prefill_start: float | None = None
    first_token_time: float | None = None
    completion_time: float | None = None


def _clamp_tokens(x: float, cap: int | None) -> int:
    v = int(round(x))
    if v < 1:
        v = 1
    if cap is not None and v > cap:
        v = cap
    return v


@dataclass(frozen=True)
class ShortNormal:
    """Normal token-length distribution, rounded and clamped to [1, cap].

    sd == 0 gives a degenerate constant distribution.
    """

    mean: float
    sd: float
    cap: int | None = None

    def validate(self, name: str = "length_dist") -> None:
        if self.mean <= 0:
            raise ConfigError(f"{name}.mean must be > 0")
        if self.sd < 0:
            raise ConfigError(f"{name}.sd must be >= 0")
        if self.cap is not None and self.cap < 1:
            raise ConfigError(f"{name}.cap must be >= 1")

    def sample(self, rng: np.random.Generator) -> int:
        return _clamp_tokens(rng.normal(self.mean, self.sd), self.cap)

    def nominal_mean(self) -> float:
        return self.mean if self.cap is None else min(self.mean, float(self.cap))


@dataclass(frozen=True)
class LongTailLogNormal:
    """Log-normal token-length distribution with a hard cap."""

    mu: float
    sigma: float
    cap: int

    def validate(self, name: str = "length_dist") -> None:
        if self.mu <= 0:
            raise ConfigError(f"{name}.mu must be > 0")
        if self.sigma <= 0:
            raise ConfigError(f"{name}.sigma must be > 0")
        if self.cap < 1:
            raise ConfigError(f"{name}.cap must be >= 1")

    def sample(self, rng: np.random.Generator) -> int:
        return _clamp_tokens(rng.lognormal(self.mu, self.sigma), self.cap)

    def nominal_mean(self) -> float:
        return min(math.exp(self.mu + self.sigma**2 / 2.0), float(self.cap))


@dataclass(frozen=True)
class Mixture:
    """Weighted mixture over length distributions."""

    components: tuple
    weights: tuple[float, ...]

    def validate(self, name: str = "length_dist") -> None:
        if not self.components or len(self.components) != len(self.weights):
            raise ConfigError(f"{name}.components and weights must match and be non-empty")
        if any(w < 0 for w in self.weights):
            raise ConfigError(f"{name}.weights must be non-negative")
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise ConfigError(f"{name}.weights must sum to 1 within 1e-9")
        for i, comp in enumerate(self.components):
            comp.validate(f"{name}.components[{i}]")

    def sample(self, rng: np.random.Generator) -> int:
        idx = int(rng.choice(len(self.components), p=self.weights))
        return self.components[idx].sample(rng)

    def nominal_mean(self) -> float:
        return sum(w * c.nominal_mean() for c, w in zip(self.components, self.weights))


LengthDist = Union[ShortNormal, LongTailLogNormal, Mixture]


def sample_output_len(dist: LengthDist, rng: np.random.Generator) -> int:
    """Draw one output length (>= 1, reproducible for a fixed rng state)."""
    return dist.sample(rng)


@dataclass(frozen=True)
class PoissonArrivals:
    rate: float  # requests/s

    def validate(self, name: str = "arrival") -> None:
        if self.rate <= 0:
            raise ConfigError(f"{name}.rate must be > 0")


@dataclass(frozen=True)
class FixedIntervalArrivals:
    gap: float  # seconds between consecutive arrivals

    def validate(self, name: str = "arrival") -> None:
        if self.gap <= 0:
            raise ConfigError(f"{name}.gap must be > 0")


@dataclass(frozen=True)
class TraceReplay:
    """Marker arrival process: the workload comes from an external trace file."""

    path: str

    def validate(self, name: str = "arrival") -> None:
        if not self.path:
            raise ConfigError(f"{name}.path must be non-empty")


ArrivalProcess = Union[PoissonArrivals, FixedIntervalArrivals, TraceReplay]


@dataclass(frozen=True)
class Horizon:
    """Generation stop condition: a duration in seconds or a request count."""

    seconds: float | None = None
    requests: int | None = None

    def validate(self) -> None:
        if (self.seconds is None) == (self.requests is None):
            raise ConfigError("horizon must set exactly one of seconds/requests")
        if self.seconds is not None and self.seconds <= 0:
            raise ConfigError("horizon.seconds must be > 0")
        if self.requests is not None and self.requests < 0:
            raise ConfigError("horizon.requests must be >= 0")


@dataclass(frozen=True)
class WorkloadSpec:
    arrival: ArrivalProcess
    length_dist: LengthDist
    output_dist: LengthDist
    horizon: Horizon
    online_fraction: float = 0.5
    seed: int = 0

    def validate(self) -> None:
        self.arrival.validate("arrival")
        self.length_dist.validate("length_dist")
        self.output_dist.validate("output_dist")
        self.horizon.validate()
        if not 0.0 <= self.online_fraction <= 1.0:
            raise ConfigError("online_fraction must be in [0, 1]")


@dataclass
class Trace:
    """Request records ordered by arrival time with unique ids."""

    requests: list[Request] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.requests)

    def __iter__(self) -> Iterator[Request]:
        return iter(self.requests)

    def validate(self) -> None:
        last = -math.inf
        seen: set[int] = set()
        for r in self.requests:
            if r.arrival_time < last:
                raise ConfigError("trace arrival times must be non-decreasing")
            last = r.arrival_time
            if r.id in seen:
                raise ConfigError(f"duplicate request id {r.id}")
            seen.add(r.id)


def _arrival_times(arrival: ArrivalProcess, horizon: Horizon,
                   rng: np.random.Generator) -> Iterator[float]:
    if isinstance(arrival, TraceReplay):
        raise ConfigError("arrival.kind=trace cannot be used with gen_synthetic")
    if isinstance(arrival, FixedIntervalArrivals):
        if horizon.requests is not None:
            for i in range(horizon.requests):
                yield i * arrival.gap
        else:
            t, i = 0.0, 0
            while t < horizon.seconds:
                yield t
                i += 1
                t = i * arrival.gap
        return
    # Poisson: exponential inter-arrival gaps
    mean_gap = 1.0 / arrival.rate
    t = 0.0
    n = 0
    while True:
        t += float(rng.exponential(mean_gap))
        if horizon.requests is not None and n >= horizon.requests:
            return
        if horizon.seconds is not None and t >= horizon.seconds:
            return
        yield t
        n += 1


def gen_synthetic(spec: WorkloadSpec) -> Trace:
    """Generate a synthetic trace. Deterministic for a fixed (spec, seed)."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    requests: list[Request] = []
    for i, t in enumerate(_arrival_times(spec.arrival, spec.horizon, rng)):
        input_len = spec.length_dist.sample(rng)
        output_len = spec.output_dist.sample(rng)
        online = rng.random() < spec.online_fraction
        requests.append(Request(
            id=i,
            arrival_time=t,
            input_len=input_len,
            output_len=output_len,
            task_class=TaskClass.ONLINE if online else TaskClass.OFFLINE,
        ))
    trace = Trace(requests)
    trace.validate()
    return trace


def fill_missing_outputs(trace: Trace, dist: LengthDist,
                         rng: np.random.Generator) -> None:
    """Sample output_len for trace records that omitted it (replay support)."""
    dist.validate("output_dist")
    for r in trace.requests:
        if r.output_len is None:
            r.output_len = dist.sample(rng)


class TraceFormat(Enum):
    CSV = "csv"
    JSONL = "jsonl"


_CSV_HEADER = ["arrival_s", "input_tokens", "output_tokens", "class"]
_JSON_KEYS = {"arrival_s", "input_tokens", "output_tokens", "class"}


def _parse_class(text: str, line: int) -> TaskClass:
    t = text.strip().lower()
    if t == "online":
        return TaskClass.ONLINE
    if t == "offline":
        return TaskClass.OFFLINE
    raise TraceFormatError(line, f"class must be online or offline, got {text!r}")


def _load_csv(stream: IO[str]) -> list[Request]:
    reader = csv.reader(stream)
    requests: list[Request] = []
    next_id = 0
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if row[0].strip() == "arrival_s":  # optional header
            continue
        if len(row) != 4:
            raise TraceFormatError(line, f"expected 4 fields, got {len(row)}")
        try:
            arrival = float(row[0])
        except ValueError:
            raise TraceFormatError(line, f"arrival_s is not a number: {row[0]!r}") from None
        try:
            input_len = int(row[1])
        except ValueError:
            raise TraceFormatError(line, f"input_tokens is not an integer: {row[1]!r}") from None
        out_text = row[2].strip()
        if out_text:
            try:
                output_len = int(out_text)
            except ValueError:
                raise TraceFormatError(line, f"output_tokens is not an integer: {row[2]!r}") from None
        else:
            output_len = None
        cls = _parse_class(row[3], line)
        if input_len < 1:
            raise TraceFormatError(line, f"input_tokens must be >= 1, got {input_len}")
        if output_len is not None and output_len < 1:
            raise TraceFormatError(line, f"output_tokens must be >= 1, got {output_len}")
        requests.append(Request(next_id, arrival, input_len, output_len, cls))
        next_id += 1
    return requests


def _load_jsonl(stream: IO[str]) -> list[Request]:
    requests: list[Request] = []
    next_id = 0
    for line_no, raw in enumerate(stream, start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise TraceFormatError(line_no, f"invalid JSON: {exc.msg}") from None
        if not isinstance(obj, dict):
            raise TraceFormatError(line_no, "each line must be a JSON object")
        unknown = set(obj) - _JSON_KEYS
        if unknown:
            raise TraceFormatError(line_no, f"unknown key {sorted(unknown)[0]!r}")
        for key in ("arrival_s", "input_tokens", "class"):
            if key not in obj:
                raise TraceFormatError(line_no, f"missing key {key!r}")
        arrival = obj["arrival_s"]
        if isinstance(arrival, bool) or not isinstance(arrival, (int, float)):
            raise TraceFormatError(line_no, "arrival_s must be a number")
        input_len = obj["input_tokens"]
        if isinstance(input_len, bool) or not isinstance(input_len, int):
            raise TraceFormatError(line_no, "input_tokens must be an integer")
        output_len = obj.get("output_tokens")
        if output_len is not None and (isinstance(output_len, bool) or not isinstance(output_len, int)):
            raise TraceFormatError(line_no, "output_tokens must be an integer")
        if not isinstance(obj["class"], str):
            raise TraceFormatError(line_no, "class must be a string")
        cls = _parse_class(obj["class"], line_no)
        if input_len < 1:
            raise TraceFormatError(line_no, f"input_tokens must be >= 1, got {input_len}")
        if output_len is not None and output_len < 1:
            raise TraceFormatError(line_no, f"output_tokens must be >= 1, got {output_len}")
        requests.append(Request(next_id, float(arrival), input_len, output_len, cls))
        next_id += 1
    return requests


def load_trace(stream: IO[str], fmt: TraceFormat) -> Trace:
    """Parse a trace stream. Records are sorted by arrival time; ids follow
    file order. An empty stream yields an empty trace."""
    if fmt is TraceFormat.CSV:
        requests = _load_csv(stream)
    else:
        requests = _load_jsonl(stream)
    requests.sort(key=lambda r: r.arrival_time)  # stable: file order on ties
    trace = Trace(requests)
    trace.validate()
    return trace


def format_for_path(path: str | Path) -> TraceFormat:
    suffix = Path(path).suffix.lower()
    if suffix == ".csv":
        return TraceFormat.CSV
    if suffix == ".jsonl":
        return TraceFormat.JSONL
    raise ConfigError(f"cannot infer trace format from extension {suffix!r} (use .csv or .jsonl)")


def load_trace_path(path: str | Path) -> Trace:
    fmt = format_for_path(path)
    with open(path, "r", encoding="utf-8") as f:
        return load_trace(f, fmt)


def save_trace(trace: Trace, stream: IO[str], fmt: TraceFormat) -> None:
    """Write a trace; round-trips losslessly through load_trace."""
    if fmt is TraceFormat.CSV:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(_CSV_HEADER)
        for r in trace:
            out = "" if r.output_len is None else r.output_len
            writer.writerow([repr(r.arrival_time), r.input_len, out, r.task_class.value])
    else:
        for r in trace:
            obj = {"arrival_s": r.arrival_time, "input_tokens": r.input_len}
            if r.output_len is not None:
                obj["output_tokens"] = r.output_len
            obj["class"] = r.task_class.value
            stream.write(json.dumps(obj) + "\n")


def save_trace_path(trace: Trace, path: str | Path) -> None:
    fmt = format_for_path(path)
    with open(path, "w", encoding="utf-8") as f:
        save_trace(trace, f, fmt)
