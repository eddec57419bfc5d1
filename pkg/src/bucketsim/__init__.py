"""bucketsim: discrete-event simulator for bucket-based dynamic batching
in disaggregated LLM serving."""

from .baselines import (BucketServePolicy, ContinuousNoBucketPolicy,
                        StaticBatchPolicy, StaticBatchScheduler, parse_policy,
                        policy_label, schedule_continuous_nobucket)
from .batch_controller import (BatchController, BatchPlan, DispatchPolicy,
                               MemoryAccounting, order_requests)
from .bucket_manager import (Bucket, BucketSet, BoundaryFit, PartitionViolation,
                             StructuralChange, optimal_boundary_oracle)
from .config import Scenario, load_scenario, scenario_from_dict
from .errors import ConfigError, SimulationError, TraceFormatError
from .memory_model import (MODEL_PRESETS, GpuConfig, LengthHistogram,
                           ModelConfig, expected_waste, kv_footprint_exact,
                           kv_footprint_padded, max_safe_batch, safe_memory,
                           token_budget, waste_ratio)
from .metrics import (GoodputResult, MetricsCollector, MetricsReport,
                      MonitorSnapshot, RequestOutcome, SloConfig, emit_report,
                      goodput_at, slo_attainment, sweep_to_csv)
from .pd_sim import (ClusterConfig, CostModel, EventKind, Simulator,
                     prefill_time, run, transfer_time, utilization_proxy)
from .workload import (FixedIntervalArrivals, Horizon, LongTailLogNormal,
                       Mixture, PoissonArrivals, Request, ShortNormal,
                       TaskClass, Trace, TraceFormat, WorkloadSpec,
                       gen_synthetic, load_trace, load_trace_path,
                       sample_output_len, save_trace, save_trace_path)

__version__ = "0.1.0"
