"""Baseline policy proxies: static fixed-size batching and FCFS continuous."""

from collections import deque

import pytest

from bucketsim.baselines import (StaticBatchScheduler, parse_policy,
                                 policy_label, schedule_continuous_nobucket,
                                 BucketServePolicy, ContinuousNoBucketPolicy,
                                 StaticBatchPolicy)
from bucketsim.batch_controller import MemoryAccounting
from bucketsim.bucket_manager import Bucket
from bucketsim.errors import ConfigError
from bucketsim.memory_model import GpuConfig, ModelConfig
from bucketsim.workload import Request, TaskClass

UNIT_MODEL = ModelConfig(layers=1, heads=1, head_dim=1, bytes_per_elem=2,
                         max_seq_len=100_000)


def _gpu_with_budget(tokens: int) -> GpuConfig:
    return GpuConfig(total_mem=tokens * UNIT_MODEL.kv_bytes_per_token,
                     model_mem=0, reserve_fraction=0.0)


def _req(rid, length, arrival=None, cls=TaskClass.OFFLINE):
    return Request(rid, float(rid) if arrival is None else arrival, length, 10, cls)


def test_parse_policy_variants():
    assert parse_policy("bucketserve") == BucketServePolicy()
    assert parse_policy("continuous") == ContinuousNoBucketPolicy()
    assert parse_policy("static:8") == StaticBatchPolicy(8)
    with pytest.raises(ConfigError):
        parse_policy("static:x")
    with pytest.raises(ConfigError):
        parse_policy("dynamic")


def test_policy_labels_mark_proxies():
    assert policy_label(BucketServePolicy()) == "bucketserve"
    assert policy_label(StaticBatchPolicy(4)) == "static-proxy:4"
    assert policy_label(ContinuousNoBucketPolicy()) == "continuous-proxy"


def test_static_takes_first_n_in_arrival_order():
    sched = StaticBatchScheduler(UNIT_MODEL, _gpu_with_budget(100_000), fixed_n=4)
    for i in range(10):
        sched.enqueue(_req(i, 100))
    plan = sched.schedule(now=0.0, flush=False)
    assert plan.request_ids == (0, 1, 2, 3)
    assert len(sched.queue) == 6


def test_static_waits_for_fill_until_flush():
    sched = StaticBatchScheduler(UNIT_MODEL, _gpu_with_budget(100_000), fixed_n=4)
    for i in range(3):
        sched.enqueue(_req(i, 100))
    assert sched.schedule(now=0.0, flush=False) is None
    plan = sched.schedule(now=0.0, flush=True)
    assert plan.request_ids == (0, 1, 2)


def test_static_halves_on_memory_overflow():
    # 4 requests at max 1000 tokens padded = 4000 > budget 2500 -> halve to 2
    sched = StaticBatchScheduler(UNIT_MODEL, _gpu_with_budget(2500), fixed_n=4)
    for i, s in enumerate([1000, 400, 900, 100]):
        sched.enqueue(_req(i, s))
    plan = sched.schedule(now=0.0, flush=False)
    assert plan.request_ids == (0, 1)
    assert plan.footprint == 2 * 1000 * UNIT_MODEL.kv_bytes_per_token
    assert sched.halvings == 1


def test_static_rejects_single_oversized_head():
    sched = StaticBatchScheduler(UNIT_MODEL, _gpu_with_budget(500), fixed_n=2)
    sched.enqueue(_req(0, 5000))
    sched.enqueue(_req(1, 100))
    plan = sched.schedule(now=0.0, flush=True)
    assert plan.request_ids == (1,)
    assert [r.request.id for r in sched.rejections] == [0]


def test_continuous_is_fcfs_up_to_token_budget():
    reqs = deque(_req(i, s) for i, s in enumerate([500, 2000, 100, 100]))
    bucket = Bucket(0, 100_000, reqs)
    plan = schedule_continuous_nobucket(bucket, UNIT_MODEL, _gpu_with_budget(2650),
                                        accounting=MemoryAccounting.EXACT)
    assert plan.request_ids == (0, 1, 2)  # strict arrival order, 2600 <= 2650 < 2700


def test_continuous_head_of_line_blocking_under_padded():
    # long head forces padded charging; shorts behind it cannot ride along
    reqs = deque(_req(i, s) for i, s in enumerate([2000, 100, 100, 100]))
    bucket = Bucket(0, 100_000, reqs)
    plan = schedule_continuous_nobucket(bucket, UNIT_MODEL, _gpu_with_budget(3000),
                                        accounting=MemoryAccounting.PADDED)
    # 1 x 2000 fits; 2 x 2000 padded = 4000 > 3000, so the shorts wait
    assert plan.request_ids == (0,)
    assert [r.id for r in bucket.requests] == [1, 2, 3]
