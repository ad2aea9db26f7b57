"""Simulator and analysis toolkit for prefix-reuse LLM serving policies."""

from .analytics import (
    AnalyticsDomainError,
    KneeReport,
    PolicyParams,
    QueueParams,
    SweepPoint,
    admission_wait,
    calibrate_prefill_rate,
    crossover,
    knee_report,
    mean_service,
    reuse_gap_to_full,
    service_gap,
    service_ratio,
    stability_expansion,
)
from .engine import (
    RequestMetrics,
    RunMetrics,
    SimConfig,
    SimResult,
    SimulationError,
    WaveRecord,
    effective_prefill_rate,
    percentile,
    run_simulation,
)
from .experiment import (
    ExperimentSpec,
    ExperimentSpecError,
    SimSpec,
    WorkloadSpec,
    compare,
    execute_run,
    read_results_csv,
    run_experiment,
)
from .kvcache import (
    Anchor,
    CacheConfig,
    CacheError,
    CachePolicy,
    CapacityError,
    NodeKind,
    RadixCache,
    ReleaseError,
)
from .scheduler import (
    DispatchBatch,
    PriorityWeights,
    SchedulerConfig,
    SegmentCounters,
    bucket_score,
    count_segments,
    front_align,
    make_signature,
    schedule_round,
    segment_priority,
)
from .workload import (
    Request,
    SegmentCatalog,
    Trace,
    TraceFormatError,
    WorkloadConfig,
    WorkloadConfigError,
    generate_trace,
    load_trace,
    sample_request,
    save_trace,
    serialize_tokens,
    zipf_sample,
    zipf_sample_many,
)

__version__ = "0.1.0"

__all__ = [
    "AnalyticsDomainError",
    "Anchor",
    "CacheConfig",
    "CacheError",
    "CachePolicy",
    "CapacityError",
    "DispatchBatch",
    "ExperimentSpec",
    "ExperimentSpecError",
    "KneeReport",
    "NodeKind",
    "PolicyParams",
    "PriorityWeights",
    "QueueParams",
    "RadixCache",
    "ReleaseError",
    "Request",
    "RequestMetrics",
    "RunMetrics",
    "SchedulerConfig",
    "SegmentCatalog",
    "SegmentCounters",
    "SimConfig",
    "SimResult",
    "SimSpec",
    "SimulationError",
    "SweepPoint",
    "Trace",
    "TraceFormatError",
    "WaveRecord",
    "WorkloadConfig",
    "WorkloadConfigError",
    "WorkloadSpec",
    "admission_wait",
    "bucket_score",
    "calibrate_prefill_rate",
    "compare",
    "count_segments",
    "crossover",
    "effective_prefill_rate",
    "execute_run",
    "front_align",
    "generate_trace",
    "knee_report",
    "load_trace",
    "make_signature",
    "mean_service",
    "percentile",
    "read_results_csv",
    "reuse_gap_to_full",
    "run_experiment",
    "run_simulation",
    "sample_request",
    "save_trace",
    "schedule_round",
    "segment_priority",
    "serialize_tokens",
    "service_gap",
    "service_ratio",
    "stability_expansion",
    "zipf_sample",
    "zipf_sample_many",
]
