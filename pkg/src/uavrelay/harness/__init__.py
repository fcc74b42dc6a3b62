from .config import (
    ExperimentConfig,
    POLICIES,
    RunDefaults,
    TRAINABLE_POLICIES,
    config_hash,
    load_config,
    resolve_r_bar,
)
from .baselines import HEURISTIC_POLICIES, LocationObservation, location_only_variant
from .oracle import OracleResult, exhaustive_oracle
from .runners import (
    EvalSummary,
    TraceArtifacts,
    TrainArtifacts,
    rollout_policy,
    run_eval,
    run_oracle,
    run_trace,
    run_train,
)

__all__ = [
    "ExperimentConfig", "POLICIES", "RunDefaults", "TRAINABLE_POLICIES",
    "config_hash", "load_config", "resolve_r_bar",
    "HEURISTIC_POLICIES", "LocationObservation", "location_only_variant",
    "OracleResult", "exhaustive_oracle",
    "EvalSummary", "TraceArtifacts", "TrainArtifacts", "rollout_policy",
    "run_eval", "run_oracle", "run_trace", "run_train",
]
