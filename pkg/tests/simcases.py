"""Shared scenario builders for the test suite."""

from bucketsim.memory_model import MODEL_PRESETS, GpuConfig
from bucketsim.pd_sim import ClusterConfig, CostModel
from bucketsim.workload import (Horizon, LongTailLogNormal, Mixture,
                                PoissonArrivals, ShortNormal, WorkloadSpec,
                                gen_synthetic)

GIB = 2**30

STANDARD_MODEL = MODEL_PRESETS["llama2-13b-like"]
STANDARD_GPU = GpuConfig(total_mem=40 * GIB, model_mem=26 * GIB, reserve_fraction=0.10)
STANDARD_CLUSTER = ClusterConfig(prefill_workers=1, decode_workers=2, gpu=STANDARD_GPU)
STANDARD_COST = CostModel(prefill_base=0.004, prefill_per_token=2e-5,
                          decode_step_base=0.002, decode_per_kv_byte=1e-12,
                          transfer_bandwidth=300e9, transfer_latency=2e-4)

MIXED_LENGTHS = Mixture(
    components=(ShortNormal(83, 40, cap=4095), LongTailLogNormal(7.0, 0.8, cap=4095)),
    weights=(0.7, 0.3),
)


def mixed_spec(rate: float = 40.0, requests: int | None = 1200,
               seconds: float | None = None, seed: int = 42,
               out_mean: float = 64, out_sd: float = 20,
               online_fraction: float = 0.5) -> WorkloadSpec:
    horizon = Horizon(requests=requests) if seconds is None else Horizon(seconds=seconds)
    return WorkloadSpec(
        arrival=PoissonArrivals(rate=rate),
        length_dist=MIXED_LENGTHS,
        output_dist=ShortNormal(out_mean, out_sd),
        horizon=horizon,
        online_fraction=online_fraction,
        seed=seed,
    )


def mixed_trace(**kwargs):
    return gen_synthetic(mixed_spec(**kwargs))
