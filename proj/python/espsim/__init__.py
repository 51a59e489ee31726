"""Iteration-level simulator for elastic LLM serving clusters."""

from ._core import (
    ConfigError,
    CostCoefficients,
    DecodeCoefficients,
    Event,
    EventLog,
    InfeasiblePlanError,
    LatencyStats,
    MetricsParams,
    MetricsReport,
    ModelConfig,
    PolicyConfig,
    ProfileSample,
    RunOutput,
    Sib,
    SimConfig,
    SimError,
    StrategyKey,
    StrategyRecord,
    TraceParseError,
    TraceRecord,
    UnknownStrategyError,
    compute_metrics,
    gen_trace,
    kv_bytes_per_token,
    load_config,
    load_trace,
    p90_goodput,
    parse_policy,
    percentile,
    policy_to_string,
    run_simulation,
    save_trace,
    unloaded_latency_ms,
)

__all__ = [
    "ConfigError",
    "CostCoefficients",
    "DecodeCoefficients",
    "Event",
    "EventLog",
    "InfeasiblePlanError",
    "LatencyStats",
    "MetricsParams",
    "MetricsReport",
    "ModelConfig",
    "PolicyConfig",
    "ProfileSample",
    "RunOutput",
    "Sib",
    "SimConfig",
    "SimError",
    "StrategyKey",
    "StrategyRecord",
    "TraceParseError",
    "TraceRecord",
    "UnknownStrategyError",
    "compute_metrics",
    "gen_trace",
    "kv_bytes_per_token",
    "load_config",
    "load_trace",
    "p90_goodput",
    "parse_policy",
    "percentile",
    "policy_to_string",
    "run_simulation",
    "save_trace",
    "unloaded_latency_ms",
]

__version__ = "0.1.0"
