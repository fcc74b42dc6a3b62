"""Experiment configuration: file schema, hashing, baseline calibration.

One YAML (or JSON) document configures a run. Unknown keys are rejected
everywhere. The config hash covers every field that affects network shapes or
environment dynamics, so checkpoints refuse to load under an incompatible
config.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Optional

import yaml
from pydantic import BaseModel, ConfigDict

from ..env import EnvConfig, HandoverEnv, PerceptionConfig, RadioConfig, RewardSpec
from ..rng import child_rng, child_seed
from ..traffic import ScenarioConfig
from ..vqmix import TrainConfig
from ..env import ActionPair

POLICIES = ("vqmix", "location_only", "always_direct", "always_relay", "greedy_los")
TRAINABLE_POLICIES = ("vqmix", "location_only")


class RunDefaults(BaseModel):
    """Optional `run:` section; CLI flags override these."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    policy: str = "vqmix"
    episodes: int = 500
    seeds: tuple[int, ...] = (0,)
    out_dir: str = "runs"
    eval_episodes: int = 10
    horizon: Optional[int] = None


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    scenario: ScenarioConfig = ScenarioConfig()
    radio: RadioConfig = RadioConfig()
    perception: PerceptionConfig = PerceptionConfig()
    reward: RewardSpec = RewardSpec()
    train: TrainConfig = TrainConfig()
    run: RunDefaults = RunDefaults()

    def env_config(self) -> EnvConfig:
        return EnvConfig(scenario=self.scenario, radio=self.radio,
                         perception=self.perception, reward=self.reward)


def load_config(path: str) -> ExperimentConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ValueError(f"config file {path} must hold a mapping")
    return ExperimentConfig.model_validate(raw)


def config_hash(cfg: ExperimentConfig, policy: str) -> bytes:
    """sha256 over the canonical compatibility-relevant config plus policy."""
    payload = {
        "scenario": cfg.scenario.model_dump(mode="json"),
        "radio": cfg.radio.model_dump(mode="json"),
        "perception": cfg.perception.model_dump(mode="json"),
        "reward": cfg.reward.model_dump(mode="json"),
        "train": cfg.train.model_dump(mode="json"),
        "policy": policy,
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf8")
    return hashlib.sha256(blob).digest()


def resolve_r_bar(cfg: ExperimentConfig) -> ExperimentConfig:
    """Fill in the reward baseline if unset: mean R_m over random-policy
    warm-up episodes.

    The warm-up seeds derive from the scenario seed alone, so the resolved
    value is a pure function of the config and training/eval agree on it.
    """
    if cfg.reward.r_bar is not None:
        return cfg
    warm = cfg.env_config().model_copy(
        update={"reward": cfg.reward.model_copy(update={"r_bar": 0.0})})
    env = HandoverEnv(warm)
    total = 0.0
    count = 0
    for i in range(cfg.reward.r_bar_episodes):
        rng = child_rng(cfg.scenario.seed, "r-bar-warmup", i)
        env.reset(child_seed(cfg.scenario.seed, "r-bar-episode", i))
        while not env.done:
            a = ActionPair(a_m=int(rng.integers(2)), a_u=int(rng.integers(5)))
            _, _, _, _, rec = env.step(a)
            total += rec.r_m
            count += 1
    r_bar = total / max(count, 1)
    reward = cfg.reward.model_copy(update={"r_bar": float(r_bar)})
    return cfg.model_copy(update={"reward": reward})


def dump_config(cfg: ExperimentConfig, path: str) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=True))
