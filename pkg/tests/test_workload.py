"""Workload generation and trace ingestion tests."""

import io
import math

import numpy as np
import pytest

from bucketsim.errors import ConfigError, TraceFormatError
from bucketsim.workload import (FixedIntervalArrivals, Horizon,
                                LongTailLogNormal, Mixture, PoissonArrivals,
                                Request, ShortNormal, TaskClass, Trace,
                                TraceFormat, WorkloadSpec, gen_synthetic,
                                load_trace, sample_output_len, save_trace)


def _spec(**overrides):
    base = dict(
        arrival=FixedIntervalArrivals(gap=1.0),
        length_dist=ShortNormal(83, 40, cap=4096),
        output_dist=ShortNormal(64, 0),
        horizon=Horizon(requests=5),
        online_fraction=0.5,
        seed=1,
    )
    base.update(overrides)
    return WorkloadSpec(**base)


def test_short_normal_sample_mean():
    spec = _spec(length_dist=ShortNormal(83, 40, cap=4096),
                 horizon=Horizon(requests=1000))
    trace = gen_synthetic(spec)
    mean = sum(r.input_len for r in trace) / len(trace)
    assert abs(mean - 83) <= 5  # statistical bound at fixed seed


def test_fixed_interval_arrivals():
    trace = gen_synthetic(_spec(horizon=Horizon(requests=5)))
    assert [r.arrival_time for r in trace] == [0.0, 1.0, 2.0, 3.0, 4.0]


def test_lognormal_cap_clamps_everything():
    spec = _spec(length_dist=LongTailLogNormal(mu=10.6, sigma=1.0, cap=4096),
                 horizon=Horizon(requests=10_000))
    trace = gen_synthetic(spec)
    assert max(r.input_len for r in trace) <= 4096
    assert min(r.input_len for r in trace) >= 1


def test_generation_deterministic_byte_identical():
    def render(seed):
        buf = io.StringIO()
        save_trace(gen_synthetic(_spec(arrival=PoissonArrivals(7.0),
                                       horizon=Horizon(requests=200),
                                       seed=seed)),
                   buf, TraceFormat.CSV)
        return buf.getvalue().encode()

    assert render(9) == render(9)
    assert render(9) != render(10)


def test_poisson_count_statistical_bound():
    rate, horizon = 20.0, 30.0  # rate * horizon = 600 >= 100
    spec = _spec(arrival=PoissonArrivals(rate=rate),
                 horizon=Horizon(seconds=horizon), seed=3)
    trace = gen_synthetic(spec)
    expected = rate * horizon
    assert abs(len(trace) - expected) <= 4 * math.sqrt(expected)
    arrivals = [r.arrival_time for r in trace]
    assert arrivals == sorted(arrivals)


def test_online_fraction_extremes():
    all_online = gen_synthetic(_spec(online_fraction=1.0, horizon=Horizon(requests=50)))
    assert all(r.task_class is TaskClass.ONLINE for r in all_online)
    all_offline = gen_synthetic(_spec(online_fraction=0.0, horizon=Horizon(requests=50)))
    assert all(r.task_class is TaskClass.OFFLINE for r in all_offline)


def test_mixture_weights_validation():
    bad = Mixture((ShortNormal(10, 1), ShortNormal(100, 1)), (0.5, 0.6))
    with pytest.raises(ConfigError, match="weights"):
        bad.validate()


def test_invalid_distribution_parameter_names_field():
    with pytest.raises(ConfigError, match="length_dist.mean"):
        ShortNormal(-1, 5).validate()
    with pytest.raises(ConfigError, match="sigma"):
        LongTailLogNormal(4, 0, cap=100).validate()


def test_sample_output_len_degenerate_constants():
    rng = np.random.default_rng(0)
    assert sample_output_len(ShortNormal(1, 0), rng) == 1
    assert sample_output_len(ShortNormal(64, 0), rng) == 64


def test_sample_output_len_lognormal_median():
    rng = np.random.default_rng(12)
    dist = LongTailLogNormal(mu=4.0, sigma=1.0, cap=10_000_000)
    samples = [sample_output_len(dist, rng) for _ in range(10_000)]
    median = float(np.median(samples))
    assert abs(median - math.exp(4)) <= 0.10 * math.exp(4)


def test_sample_output_len_always_positive():
    rng = np.random.default_rng(13)
    dist = ShortNormal(2, 50)  # heavy mass below zero before clamping
    assert all(sample_output_len(dist, rng) >= 1 for _ in range(1000))


# ---- trace ingestion -------------------------------------------------------


def test_load_csv_single_line():
    trace = load_trace(io.StringIO("0.5,128,32,online\n"), TraceFormat.CSV)
    assert len(trace) == 1
    r = trace.requests[0]
    assert (r.arrival_time, r.input_len, r.output_len) == (0.5, 128, 32)
    assert r.task_class is TaskClass.ONLINE


def test_load_csv_sorts_by_arrival():
    text = "2.0,10,5,online\n1.0,20,5,offline\n"
    trace = load_trace(io.StringIO(text), TraceFormat.CSV)
    assert [r.arrival_time for r in trace] == [1.0, 2.0]
    assert [r.id for r in trace] == [1, 0]  # ids follow file order


def test_load_csv_parse_error_cites_line():
    with pytest.raises(TraceFormatError, match="line 1") as exc:
        load_trace(io.StringIO("x,128,32,online\n"), TraceFormat.CSV)
    assert exc.value.line == 1


def test_load_csv_error_line_number_past_header():
    text = "arrival_s,input_tokens,output_tokens,class\n1.0,10,5,online\n2.0,bad,5,online\n"
    with pytest.raises(TraceFormatError, match="line 3"):
        load_trace(io.StringIO(text), TraceFormat.CSV)


def test_load_csv_empty_stream():
    assert len(load_trace(io.StringIO(""), TraceFormat.CSV)) == 0


def test_load_csv_missing_output_tokens():
    trace = load_trace(io.StringIO("0.0,128,,offline\n"), TraceFormat.CSV)
    assert trace.requests[0].output_len is None


def test_load_csv_rejects_bad_class():
    with pytest.raises(TraceFormatError, match="class"):
        load_trace(io.StringIO("0.0,128,32,urgent\n"), TraceFormat.CSV)


def test_load_jsonl_roundtrip_fields():
    line = '{"arrival_s": 1.25, "input_tokens": 64, "output_tokens": 8, "class": "offline"}\n'
    trace = load_trace(io.StringIO(line), TraceFormat.JSONL)
    r = trace.requests[0]
    assert (r.arrival_time, r.input_len, r.output_len, r.task_class) == \
        (1.25, 64, 8, TaskClass.OFFLINE)


def test_load_jsonl_rejects_unknown_key():
    line = '{"arrival_s": 1.0, "input_tokens": 64, "class": "online", "oops": 1}\n'
    with pytest.raises(TraceFormatError, match="oops"):
        load_trace(io.StringIO(line), TraceFormat.JSONL)


def test_load_jsonl_invalid_json_cites_line():
    with pytest.raises(TraceFormatError, match="line 2"):
        load_trace(io.StringIO('{"arrival_s": 1.0, "input_tokens": 2, "class": "online"}\n{oops\n'),
                   TraceFormat.JSONL)


@pytest.mark.parametrize("fmt", [TraceFormat.CSV, TraceFormat.JSONL])
def test_save_load_roundtrip(fmt):
    trace = gen_synthetic(_spec(arrival=PoissonArrivals(5.0),
                                horizon=Horizon(requests=100), seed=21))
    buf = io.StringIO()
    save_trace(trace, buf, fmt)
    buf.seek(0)
    loaded = load_trace(buf, fmt)
    assert [(r.id, r.arrival_time, r.input_len, r.output_len, r.task_class)
            for r in trace] == \
           [(r.id, r.arrival_time, r.input_len, r.output_len, r.task_class)
            for r in loaded]


def test_trace_validation_rejects_duplicates():
    trace = Trace([Request(1, 0.0, 10, 5, TaskClass.ONLINE),
                   Request(1, 1.0, 10, 5, TaskClass.ONLINE)])
    with pytest.raises(ConfigError, match="duplicate"):
        trace.validate()


def test_horizon_validation():
    with pytest.raises(ConfigError):
        Horizon().validate()
    with pytest.raises(ConfigError):
        Horizon(seconds=5, requests=5).validate()


def test_gen_rejects_trace_arrival():
    from bucketsim.workload import TraceReplay
    with pytest.raises(ConfigError, match="gen_synthetic"):
        gen_synthetic(_spec(arrival=TraceReplay("x.csv")))
