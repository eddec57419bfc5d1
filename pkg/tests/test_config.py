"""Scenario parsing: strict keys, presets, unit conversions, overrides."""

import pytest

from bucketsim.baselines import ContinuousNoBucketPolicy, StaticBatchPolicy
from bucketsim.batch_controller import DispatchPolicy, MemoryAccounting
from bucketsim.config import scenario_from_dict
from bucketsim.errors import ConfigError
from bucketsim.workload import FixedIntervalArrivals, PoissonArrivals

GIB = 2**30


def _base(**overrides):
    d = {
        "seed": 3,
        "workload": {
            "arrival": {"kind": "poisson", "rate": 5.0},
            "horizon": {"requests": 10},
            "length_dist": {"kind": "short_normal", "mean": 80, "sd": 20},
            "output_dist": {"kind": "short_normal", "mean": 16, "sd": 4},
        },
        "model": "llama2-13b-like",
        "cluster": {
            "prefill_workers": 1,
            "decode_workers": 1,
            "gpu": {"total_mem_gib": 40, "model_mem_gib": 26},
        },
    }
    d.update(overrides)
    return d


def test_minimal_scenario_defaults():
    scn = scenario_from_dict(_base())
    assert scn.accounting is MemoryAccounting.PADDED
    assert scn.offline_policy is DispatchPolicy.SJF
    assert scn.tick_interval == 0.05
    assert scn.split_threshold == 0.5
    assert scn.slo.ttft is None
    assert scn.workload.spec.online_fraction == 0.5


def test_model_preset_and_inline_agree():
    preset = scenario_from_dict(_base()).model
    inline = scenario_from_dict(_base(model={
        "layers": 40, "heads": 40, "head_dim": 128,
        "bytes_per_elem": 2, "max_seq_len": 4096})).model
    assert preset == inline


def test_unknown_model_preset_lists_options():
    with pytest.raises(ConfigError, match="llama2-13b-like"):
        scenario_from_dict(_base(model="gpt5-like"))


def test_gpu_accepts_bytes_or_gib_exclusively():
    d = _base()
    d["cluster"]["gpu"] = {"total_mem_bytes": 40 * GIB, "model_mem_gib": 26}
    scn = scenario_from_dict(d)
    assert scn.cluster.gpu.total_mem == 40 * GIB
    d = _base()
    d["cluster"]["gpu"] = {"total_mem_bytes": 1, "total_mem_gib": 1,
                           "model_mem_gib": 0}
    with pytest.raises(ConfigError, match="total_mem"):
        scenario_from_dict(d)


def test_unknown_key_in_nested_section():
    d = _base()
    d["cluster"]["gpu"]["overclock"] = True
    with pytest.raises(ConfigError, match="overclock"):
        scenario_from_dict(d)


def test_policy_parsing_through_scenario():
    assert isinstance(scenario_from_dict(_base(policy="static:4")).policy,
                      StaticBatchPolicy)
    assert isinstance(scenario_from_dict(_base(policy="continuous")).policy,
                      ContinuousNoBucketPolicy)
    with pytest.raises(ConfigError, match="policy"):
        scenario_from_dict(_base(policy="greedy"))


def test_online_policy_is_fixed():
    assert scenario_from_dict(_base(online_policy="earliest_arrival"))
    with pytest.raises(ConfigError, match="earliest_arrival"):
        scenario_from_dict(_base(online_policy="sjf"))


def test_offline_policy_accepts_fcfs():
    scn = scenario_from_dict(_base(offline_policy="fcfs"))
    assert scn.offline_policy is DispatchPolicy.FCFS


def test_bad_memory_accounting():
    with pytest.raises(ConfigError, match="memory_accounting"):
        scenario_from_dict(_base(memory_accounting="lazy"))


def test_slo_must_be_positive():
    with pytest.raises(ConfigError, match="slo.ttft"):
        scenario_from_dict(_base(slo={"ttft": -1}))


def test_tick_interval_positive():
    with pytest.raises(ConfigError, match="tick_interval"):
        scenario_from_dict(_base(tick_interval=0))


def test_numeric_strings_accepted():
    # YAML 1.1 hands exponent literals over as strings
    d = _base(cost={"transfer_bandwidth": "300.0e9"})
    assert scenario_from_dict(d).cost.transfer_bandwidth == 300.0e9


def test_with_load_overrides_poisson_rate():
    scn = scenario_from_dict(_base()).with_load(12.0)
    assert scn.workload.spec.arrival == PoissonArrivals(12.0)


def test_with_load_overrides_fixed_interval_gap():
    d = _base()
    d["workload"]["arrival"] = {"kind": "fixed_interval", "gap": 1.0}
    scn = scenario_from_dict(d).with_load(4.0)
    assert scn.workload.spec.arrival == FixedIntervalArrivals(0.25)


def test_with_seed_rewrites_workload_seed():
    scn = scenario_from_dict(_base()).with_seed(99)
    assert scn.seed == 99
    assert scn.workload.spec.seed == 99


def test_derived_quantities_reference():
    derived = scenario_from_dict(_base()).derived_quantities()
    assert derived["safe_memory_bytes"] == 13_529_146_982
    assert derived["token_budget"] == 13_529_146_982 // 819_200
    assert derived["kv_bytes_per_token"] == 819_200


def test_mixture_weights_must_sum_to_one():
    d = _base()
    d["workload"]["length_dist"] = {
        "kind": "mixture",
        "components": [{"kind": "short_normal", "mean": 50, "sd": 5},
                       {"kind": "short_normal", "mean": 500, "sd": 50}],
        "weights": [0.5, 0.6],
    }
    with pytest.raises(ConfigError, match="weights"):
        scenario_from_dict(d)
