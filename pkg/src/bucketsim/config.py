"""Scenario files: strict YAML parsing into validated run configurations.

Unknown keys are always rejected with the offending key named, so typos
fail fast instead of silently running a different experiment. All
randomness in a run flows from the single scenario seed.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import IO, Any

import numpy as np
import yaml

from .baselines import PolicyKind, parse_policy, policy_label
from .batch_controller import DispatchPolicy, MemoryAccounting
from .errors import ConfigError
from .memory_model import MODEL_PRESETS, GpuConfig, ModelConfig, safe_memory, token_budget
from .metrics import MetricsReport, SloConfig
from .pd_sim import ClusterConfig, CostModel, Simulator
from .workload import (FixedIntervalArrivals, Horizon, LengthDist, Mixture,
                       LongTailLogNormal, PoissonArrivals, ShortNormal, Trace,
                       WorkloadSpec, fill_missing_outputs, gen_synthetic,
                       load_trace_path)

GIB = 2**30


def _require_mapping(value: Any, context: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(f"{context} must be a mapping")
    return dict(value)


def _reject_unknown(mapping: dict, context: str) -> None:
    if mapping:
        key = sorted(str(k) for k in mapping)[0]
        raise ConfigError(f"unknown key {key!r} in {context}")


def _take(mapping: dict, key: str, context: str, required: bool = True,
          default: Any = None) -> Any:
    if key in mapping:
        return mapping.pop(key)
    if required:
        raise ConfigError(f"missing key {key!r} in {context}")
    return default


def _num(value: Any, context: str) -> float:
    if isinstance(value, bool):
        raise ConfigError(f"{context} must be a number")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        # YAML 1.1 reads exponent forms like 1.0e9 as strings; accept them
        try:
            return float(value)
        except ValueError:
            pass
    raise ConfigError(f"{context} must be a number")


def _int(value: Any, context: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{context} must be an integer")
    return value


def _parse_dist(raw: Any, context: str) -> LengthDist:
    d = _require_mapping(raw, context)
    kind = _take(d, "kind", context)
    if kind == "short_normal":
        dist = ShortNormal(
            mean=_num(_take(d, "mean", context), f"{context}.mean"),
            sd=_num(_take(d, "sd", context), f"{context}.sd"),
            cap=(_int(d.pop("cap"), f"{context}.cap") if "cap" in d else None),
        )
    elif kind == "longtail_lognormal":
        dist = LongTailLogNormal(
            mu=_num(_take(d, "mu", context), f"{context}.mu"),
            sigma=_num(_take(d, "sigma", context), f"{context}.sigma"),
            cap=_int(_take(d, "cap", context), f"{context}.cap"),
        )
    elif kind == "mixture":
        comps_raw = _take(d, "components", context)
        weights_raw = _take(d, "weights", context)
        if not isinstance(comps_raw, list) or not isinstance(weights_raw, list):
            raise ConfigError(f"{context}.components and .weights must be lists")
        comps = tuple(_parse_dist(c, f"{context}.components[{i}]")
                      for i, c in enumerate(comps_raw))
        weights = tuple(_num(w, f"{context}.weights[{i}]")
                        for i, w in enumerate(weights_raw))
        dist = Mixture(comps, weights)
    else:
        raise ConfigError(f"{context}.kind must be short_normal, "
                          f"longtail_lognormal or mixture, got {kind!r}")
    _reject_unknown(d, context)
    dist.validate(context)
    return dist


def _parse_arrival(raw: Any, context: str):
    d = _require_mapping(raw, context)
    kind = _take(d, "kind", context)
    if kind == "poisson":
        arrival = PoissonArrivals(rate=_num(_take(d, "rate", context), f"{context}.rate"))
    elif kind == "fixed_interval":
        arrival = FixedIntervalArrivals(gap=_num(_take(d, "gap", context), f"{context}.gap"))
    else:
        raise ConfigError(f"{context}.kind must be poisson or fixed_interval, got {kind!r}")
    _reject_unknown(d, context)
    arrival.validate(context)
    return arrival


def _parse_horizon(raw: Any, context: str) -> Horizon:
    d = _require_mapping(raw, context)
    seconds = _num(d.pop("seconds"), f"{context}.seconds") if "seconds" in d else None
    requests = _int(d.pop("requests"), f"{context}.requests") if "requests" in d else None
    _reject_unknown(d, context)
    horizon = Horizon(seconds=seconds, requests=requests)
    horizon.validate()
    return horizon


@dataclass
class WorkloadSection:
    spec: WorkloadSpec | None
    trace_path: str | None
    output_dist: LengthDist | None  # fills missing outputs of a trace replay


def _parse_workload(raw: Any, seed: int, base_dir: Path) -> WorkloadSection:
    d = _require_mapping(raw, "workload")
    if "trace" in d:
        trace_path = d.pop("trace")
        if not isinstance(trace_path, str):
            raise ConfigError("workload.trace must be a path string")
        output_dist = (_parse_dist(d.pop("output_dist"), "workload.output_dist")
                       if "output_dist" in d else None)
        _reject_unknown(d, "workload")
        resolved = str((base_dir / trace_path).resolve())
        return WorkloadSection(None, resolved, output_dist)
    spec = WorkloadSpec(
        arrival=_parse_arrival(_take(d, "arrival", "workload"), "workload.arrival"),
        length_dist=_parse_dist(_take(d, "length_dist", "workload"), "workload.length_dist"),
        output_dist=_parse_dist(_take(d, "output_dist", "workload"), "workload.output_dist"),
        horizon=_parse_horizon(_take(d, "horizon", "workload"), "workload.horizon"),
        online_fraction=_num(_take(d, "online_fraction", "workload", required=False,
                                   default=0.5), "workload.online_fraction"),
        seed=seed,
    )
    _reject_unknown(d, "workload")
    spec.validate()
    return WorkloadSection(spec, None, None)


def _parse_model(raw: Any) -> ModelConfig:
    if isinstance(raw, str):
        if raw not in MODEL_PRESETS:
            raise ConfigError(f"unknown model preset {raw!r} "
                              f"(available: {', '.join(sorted(MODEL_PRESETS))})")
        return MODEL_PRESETS[raw]
    d = _require_mapping(raw, "model")
    model = ModelConfig(
        layers=_int(_take(d, "layers", "model"), "model.layers"),
        heads=_int(_take(d, "heads", "model"), "model.heads"),
        head_dim=_int(_take(d, "head_dim", "model"), "model.head_dim"),
        bytes_per_elem=_int(_take(d, "bytes_per_elem", "model"), "model.bytes_per_elem"),
        max_seq_len=_int(_take(d, "max_seq_len", "model"), "model.max_seq_len"),
    )
    _reject_unknown(d, "model")
    return model


def _parse_gpu(raw: Any) -> GpuConfig:
    d = _require_mapping(raw, "cluster.gpu")

    def mem(name: str) -> int:
        gib_key, byte_key = f"{name}_gib", f"{name}_bytes"
        if (gib_key in d) == (byte_key in d):
            raise ConfigError(f"cluster.gpu needs exactly one of {gib_key}/{byte_key}")
        if gib_key in d:
            return int(_num(d.pop(gib_key), f"cluster.gpu.{gib_key}") * GIB)
        return _int(d.pop(byte_key), f"cluster.gpu.{byte_key}")

    total = mem("total_mem")
    model_mem = mem("model_mem")
    reserve = _num(_take(d, "reserve_fraction", "cluster.gpu", required=False,
                         default=0.10), "cluster.gpu.reserve_fraction")
    _reject_unknown(d, "cluster.gpu")
    return GpuConfig(total_mem=total, model_mem=model_mem, reserve_fraction=reserve)


def _parse_cluster(raw: Any) -> ClusterConfig:
    d = _require_mapping(raw, "cluster")
    cluster = ClusterConfig(
        prefill_workers=_int(_take(d, "prefill_workers", "cluster"), "cluster.prefill_workers"),
        decode_workers=_int(_take(d, "decode_workers", "cluster"), "cluster.decode_workers"),
        gpu=_parse_gpu(_take(d, "gpu", "cluster")),
    )
    _reject_unknown(d, "cluster")
    cluster.validate()
    return cluster


def _parse_cost(raw: Any) -> CostModel:
    if raw is None:
        return CostModel()
    d = _require_mapping(raw, "cost")
    defaults = CostModel()
    kwargs = {}
    for name in ("prefill_base", "prefill_per_token", "decode_step_base",
                 "decode_per_kv_byte", "transfer_bandwidth", "transfer_latency"):
        if name in d:
            kwargs[name] = _num(d.pop(name), f"cost.{name}")
    _reject_unknown(d, "cost")
    cost = replace(defaults, **kwargs)
    cost.validate()
    return cost


def _parse_slo(raw: Any) -> SloConfig:
    if raw is None:
        return SloConfig()
    d = _require_mapping(raw, "slo")
    values: dict[str, float | None] = {}
    for name in ("ttft", "e2e"):
        v = d.pop(name, None)
        if v is not None:
            v = _num(v, f"slo.{name}")
            if v <= 0:
                raise ConfigError(f"slo.{name} must be > 0")
        values[name] = v
    _reject_unknown(d, "slo")
    return SloConfig(ttft=values["ttft"], e2e=values["e2e"])


_OFFLINE_POLICIES = {
    "sjf": DispatchPolicy.SJF,
    "ljf": DispatchPolicy.LJF,
    # fcfs is accepted so the bucketing-disabled reduction is expressible
    "fcfs": DispatchPolicy.FCFS,
}


@dataclass
class Scenario:
    workload: WorkloadSection
    model: ModelConfig
    cluster: ClusterConfig
    cost: CostModel
    policy: PolicyKind
    offline_policy: DispatchPolicy
    accounting: MemoryAccounting
    slo: SloConfig
    tick_interval: float
    seed: int
    split_threshold: float
    resume_mode: str

    def build_trace(self) -> Trace:
        """Materialise the request stream (deterministic for the seed)."""
        if self.workload.spec is not None:
            return gen_synthetic(self.workload.spec)
        trace = load_trace_path(self.workload.trace_path)
        missing = any(r.output_len is None for r in trace)
        if missing:
            if self.workload.output_dist is None:
                raise ConfigError(
                    "trace omits output_tokens; workload.output_dist is required")
            fill_missing_outputs(trace, self.workload.output_dist,
                                 np.random.default_rng(self.seed))
        return trace

    def simulator(self, trace: Trace | None = None,
                  event_log: IO[str] | None = None) -> Simulator:
        return Simulator(
            trace if trace is not None else self.build_trace(),
            model=self.model, cluster=self.cluster, cost=self.cost,
            policy=self.policy, offline_policy=self.offline_policy,
            accounting=self.accounting, slo=self.slo,
            tick_interval=self.tick_interval,
            split_threshold=self.split_threshold,
            resume_mode=self.resume_mode, event_log=event_log)

    def run(self, event_log: IO[str] | None = None) -> MetricsReport:
        return self.simulator(event_log=event_log).run()

    def with_seed(self, seed: int) -> "Scenario":
        workload = self.workload
        if workload.spec is not None:
            workload = WorkloadSection(replace(workload.spec, seed=seed),
                                       None, None)
        return replace(self, seed=seed, workload=workload)

    def with_load(self, load_rps: float) -> "Scenario":
        if self.workload.spec is None:
            raise ConfigError("load sweeps need a generative workload, not a trace")
        arrival = self.workload.spec.arrival
        if isinstance(arrival, PoissonArrivals):
            arrival = PoissonArrivals(rate=load_rps)
        elif isinstance(arrival, FixedIntervalArrivals):
            arrival = FixedIntervalArrivals(gap=1.0 / load_rps)
        else:
            raise ConfigError("load sweeps need poisson or fixed_interval arrivals")
        spec = replace(self.workload.spec, arrival=arrival)
        return replace(self, workload=WorkloadSection(spec, None, None))

    def derived_quantities(self) -> dict:
        safe = safe_memory(self.cluster.gpu)
        budget = token_budget(self.model, self.cluster.gpu)
        if self.workload.spec is not None:
            mean_len = self.workload.spec.length_dist.nominal_mean()
        else:
            trace = load_trace_path(self.workload.trace_path)
            mean_len = (sum(r.input_len for r in trace) / len(trace)) if len(trace) else None
        n_max = max(1, int(budget // max(1.0, mean_len))) if mean_len else None
        return {
            "policy": policy_label(self.policy),
            "safe_memory_bytes": safe,
            "token_budget": budget,
            "kv_bytes_per_token": self.model.kv_bytes_per_token,
            "nominal_mean_input_len": mean_len,
            "initial_n_max": n_max,
        }


def scenario_from_dict(raw: Any, base_dir: Path = Path(".")) -> Scenario:
    d = _require_mapping(raw, "scenario")
    seed = _int(_take(d, "seed", "scenario"), "seed")
    workload = _parse_workload(_take(d, "workload", "scenario"), seed, base_dir)
    model = _parse_model(_take(d, "model", "scenario"))
    cluster = _parse_cluster(_take(d, "cluster", "scenario"))
    cost = _parse_cost(d.pop("cost", None))
    policy_text = _take(d, "policy", "scenario", required=False, default="bucketserve")
    if not isinstance(policy_text, str):
        raise ConfigError("policy must be a string")
    policy = parse_policy(policy_text)
    offline_raw = _take(d, "offline_policy", "scenario", required=False, default="sjf")
    if offline_raw not in _OFFLINE_POLICIES:
        raise ConfigError(f"offline_policy must be one of "
                          f"{sorted(_OFFLINE_POLICIES)}, got {offline_raw!r}")
    online_raw = _take(d, "online_policy", "scenario", required=False,
                       default="earliest_arrival")
    if online_raw != "earliest_arrival":
        raise ConfigError("online_policy is fixed to earliest_arrival")
    accounting_raw = _take(d, "memory_accounting", "scenario", required=False,
                           default="padded")
    try:
        accounting = MemoryAccounting(accounting_raw)
    except ValueError:
        raise ConfigError(f"memory_accounting must be padded or exact, "
                          f"got {accounting_raw!r}") from None
    slo = _parse_slo(d.pop("slo", None))
    tick = _num(_take(d, "tick_interval", "scenario", required=False, default=0.05),
                "tick_interval")
    if tick <= 0:
        raise ConfigError("tick_interval must be > 0")
    split_threshold = _num(_take(d, "split_threshold", "scenario", required=False,
                                 default=0.5), "split_threshold")
    if not 0.0 < split_threshold <= 1.0:
        raise ConfigError("split_threshold must be in (0, 1]")
    resume_mode = _take(d, "resume_mode", "scenario", required=False, default="retain")
    if resume_mode not in ("retain", "recompute"):
        raise ConfigError("resume_mode must be retain or recompute")
    _reject_unknown(d, "scenario")
    return Scenario(
        workload=workload, model=model, cluster=cluster, cost=cost,
        policy=policy, offline_policy=_OFFLINE_POLICIES[offline_raw],
        accounting=accounting, slo=slo, tick_interval=tick, seed=seed,
        split_threshold=split_threshold, resume_mode=resume_mode)


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read scenario file {path}: {exc}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from None
    return scenario_from_dict(raw, base_dir=path.parent)
