"""Command-line entry point: run, sweep, gen-trace, validate.

Exit codes: 0 success, 2 configuration error, 3 internal invariant breach.
Machine-format output is deterministic for a fixed scenario; wall-clock
measurements only appear in the table format.
"""

from __future__ import annotations

import argparse
import statistics
import sys
from pathlib import Path

from .config import Scenario, load_scenario
from .errors import ConfigError, SimulationError
from .metrics import SweepRow, emit_report, goodput_at, sweep_to_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INTERNAL = 3


def _write_output(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _apply_seed_override(scenario: Scenario, seed: int | None) -> Scenario:
    if seed is None:
        return scenario
    return scenario.with_seed(seed)


def cmd_run(args: argparse.Namespace) -> int:
    scenario = _apply_seed_override(load_scenario(args.scenario), args.seed)
    log_stream = None
    try:
        if args.log_events:
            log_stream = open(args.log_events, "w", encoding="utf-8")
        report = scenario.run(event_log=log_stream)
    finally:
        if log_stream is not None:
            log_stream.close()
    _write_output(emit_report(report, args.format), args.out)
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    scenario = _apply_seed_override(load_scenario(args.scenario), args.seed)
    derived = scenario.derived_quantities()
    width = max(len(k) for k in derived)
    for key, value in derived.items():
        print(f"{key:<{width}}  {value}")
    return EXIT_OK


def cmd_gen_trace(args: argparse.Namespace) -> int:
    from .workload import save_trace_path

    scenario = _apply_seed_override(load_scenario(args.scenario), args.seed)
    if scenario.workload.spec is None:
        raise ConfigError("gen-trace needs a generative workload section, not a trace path")
    trace = scenario.build_trace()
    save_trace_path(trace, args.out)
    print(f"wrote {len(trace)} requests to {args.out}")
    return EXIT_OK


def _parse_loads(text: str) -> list[float]:
    loads = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            loads.append(float(part))
        except ValueError:
            raise ConfigError(f"--loads entries must be numbers, got {part!r}") from None
    if not loads:
        raise ConfigError("--loads must contain at least one load point")
    if any(l <= 0 for l in loads):
        raise ConfigError("--loads entries must be > 0")
    return loads


def cmd_sweep(args: argparse.Namespace) -> int:
    scenario = _apply_seed_override(load_scenario(args.scenario), args.seed)
    loads = _parse_loads(args.loads)
    if args.repeats < 1:
        raise ConfigError("--repeats must be >= 1")
    rows: list[SweepRow] = []
    curve: list[tuple[float, float]] = []
    try:
        for load in loads:
            point = scenario.with_load(load)
            server_rps, attain, tokens = [], [], []
            for rep in range(args.repeats):
                report = point.with_seed(scenario.seed + rep).run()
                server_rps.append(report.server_rps)
                tokens.append(report.tokens_per_s)
                if report.slo_attainment is not None:
                    attain.append(report.slo_attainment)

            def agg(values):
                if not values:
                    return None, None
                mean = sum(values) / len(values)
                std = statistics.stdev(values) if len(values) > 1 else 0.0
                return mean, std

            rps_mean, rps_std = agg(server_rps)
            att_mean, att_std = agg(attain)
            tok_mean, tok_std = agg(tokens)
            rows.append(SweepRow(
                load_rps=load,
                server_rps=rps_mean or 0.0,
                slo_attainment=att_mean,
                tokens_per_s=tok_mean or 0.0,
                server_rps_std=rps_std,
                slo_attainment_std=att_std,
                tokens_per_s_std=tok_std,
                repeats=args.repeats,
            ))
            if att_mean is not None:
                curve.append((load, att_mean))
    except Exception:
        # a failed point aborts the sweep; completed rows are preserved
        if rows:
            _write_output(sweep_to_csv(rows), args.out)
        raise
    _write_output(sweep_to_csv(rows), args.out)
    summary_stream = sys.stdout if args.out is not None else sys.stderr
    if len(curve) >= 2:
        result = goodput_at(0.8, curve)
        print(f"goodput_rps@0.80 = {result.rps:.6g} ({result.flag})",
              file=summary_stream)
    else:
        print("goodput_rps@0.80 unavailable (need >= 2 load points with "
              "SLO-bearing online traffic)", file=summary_stream)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bucketsim",
        description="Discrete-event simulator for bucket-based dynamic "
                    "batching in disaggregated LLM serving.")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one scenario and emit a report")
    run_p.add_argument("scenario")
    run_p.add_argument("--out", default=None, help="write output to a file")
    run_p.add_argument("--format", choices=("json", "table"), default="json")
    run_p.add_argument("--log-events", default=None,
                       help="write a JSON-lines event log to this path")
    run_p.add_argument("--seed", type=int, default=None,
                       help="override the scenario seed")
    run_p.set_defaults(func=cmd_run)

    sweep_p = sub.add_parser("sweep", help="run an RPS load sweep, emit CSV")
    sweep_p.add_argument("scenario")
    sweep_p.add_argument("--loads", required=True,
                         help="comma-separated client RPS values, e.g. 2,4,8")
    sweep_p.add_argument("--repeats", type=int, default=1)
    sweep_p.add_argument("--out", default=None)
    sweep_p.add_argument("--seed", type=int, default=None)
    sweep_p.set_defaults(func=cmd_sweep)

    gen_p = sub.add_parser("gen-trace", help="materialise the workload as a trace file")
    gen_p.add_argument("scenario")
    gen_p.add_argument("--out", required=True,
                       help="output path; .csv or .jsonl picks the format")
    gen_p.add_argument("--seed", type=int, default=None)
    gen_p.set_defaults(func=cmd_gen_trace)

    val_p = sub.add_parser("validate", help="parse a scenario and print derived quantities")
    val_p.add_argument("scenario")
    val_p.add_argument("--seed", type=int, default=None)
    val_p.set_defaults(func=cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
