"""Request/response models for the HTTP API.

The embedded `config` is the same document the config files hold, validated
by the same models (unknown keys rejected).
"""
from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, ConfigDict, Field

from ..harness.config import ExperimentConfig


class TrainRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: ExperimentConfig
    seed: int = 0
    episodes: int = Field(default=500, ge=1)
    out_dir: str = "runs"
    policy: str = "vqmix"


class TrainResponse(BaseModel):
    csv_path: str
    checkpoint_path: str
    episodes: int
    r_bar: float
    config_hash: str
    final_epsilon: float
    final_block_ratio: float
    final_throughput_bits: float


class EvalRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: ExperimentConfig
    policy: str = "vqmix"
    seeds: list[int] = [0]
    checkpoint: Optional[str] = None
    episodes_per_seed: int = Field(default=10, ge=1)
    out_csv: Optional[str] = None


class SeedMetrics(BaseModel):
    seed: int
    episodes: int
    block_ratio: float
    throughput_bits: float
    mean_return: float


class EvalResponse(BaseModel):
    policy: str
    seeds: list[int]
    per_seed: list[SeedMetrics]
    block_ratio_mean: float
    block_ratio_ci95: float
    throughput_mean: float
    throughput_ci95: float
    degenerate_ci: bool
    csv_path: Optional[str] = None


class OracleRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: ExperimentConfig
    horizon: int = Field(ge=1)


class JointAction(BaseModel):
    a_m: int
    a_u: int


class OracleResponse(BaseModel):
    optimal_return: float
    actions: list[JointAction]
    enumerated: int
    horizon: int


class TraceRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: ExperimentConfig
    policy: str = "greedy_los"
    seed: int = 0
    out_path: str = "trace.csv"
    checkpoint: Optional[str] = None


class TraceResponse(BaseModel):
    csv_path: str
    slots: int
    block_ratio: float
    throughput_bits: float
    episode_return: float


class HealthResponse(BaseModel):
    status: str
    version: str
