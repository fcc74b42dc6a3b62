"""Train / eval / oracle / trace entry points shared by the CLI and the service."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from ..env import HandoverEnv, SlotRecord, metrics, write_trace_csv
from ..nnkit import load_arrays, save_arrays
from ..rng import child_seed
from ..vqmix import VqmixLearner
from .baselines import HEURISTIC_POLICIES
from .config import (
    ExperimentConfig,
    TRAINABLE_POLICIES,
    config_hash,
    dump_config,
    resolve_r_bar,
)
from .oracle import OracleResult, exhaustive_oracle

TRAIN_CSV_COLUMNS = ("episode", "env_steps", "epsilon", "loss_mean", "return",
                     "block_ratio", "throughput_bits")
EVAL_CSV_COLUMNS = ("seed", "episodes", "block_ratio", "throughput_bits", "mean_return")


def _fmt(x: float) -> str:
    return repr(float(x))


def _variant(policy: str) -> str:
    return "vision" if policy == "vqmix" else "location"


@dataclass
class TrainArtifacts:
    csv_path: str
    checkpoint_path: str
    episodes: int
    r_bar: float
    config_hash: str
    final_epsilon: float
    final_block_ratio: float
    final_throughput_bits: float


def run_train(cfg: ExperimentConfig, seed: int, episodes: int, out_dir: str,
              policy: str = "vqmix") -> TrainArtifacts:
    """Train a learner for `episodes` episodes under one root seed.

    Writes metrics.csv (one row per episode) plus checkpoints into out_dir.
    Fully deterministic in (cfg, seed, episodes, policy).
    """
    if policy not in TRAINABLE_POLICIES:
        raise ValueError(f"policy {policy!r} is not trainable")
    if episodes < 1:
        raise ValueError("episode budget must be positive")
    cfg = resolve_r_bar(cfg)
    chash = config_hash(cfg, policy)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, str(out / f"config_{policy}_seed{seed}.yaml"))

    env = HandoverEnv(cfg.env_config())
    learner = VqmixLearner(cfg.env_config(), cfg.train, _variant(policy), seed)

    csv_path = out / f"train_{policy}_seed{seed}.csv"
    ckpt_path = out / f"ckpt_{policy}_seed{seed}.bin"
    last: dict[str, float] = {}
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAIN_CSV_COLUMNS)
        for ep in range(episodes):
            eps_at_start = learner.epsilon
            ep_seed = child_seed(seed, "episode", ep)
            records, _ = learner.run_episode(env, ep_seed, explore=True, store=True)
            loss = learner.maybe_train()
            m = metrics(records, cfg.scenario.delta_t)
            ret = float(sum(r.reward for r in records))
            writer.writerow([
                ep, learner.env_steps, _fmt(eps_at_start),
                _fmt(loss) if loss is not None else "nan",
                _fmt(ret), _fmt(m["block_ratio"]), _fmt(m["throughput_bits"]),
            ])
            last = {"epsilon": eps_at_start, **m}
            if (cfg.train.checkpoint_interval > 0
                    and (ep + 1) % cfg.train.checkpoint_interval == 0):
                save_arrays(str(out / f"ckpt_{policy}_seed{seed}_ep{ep + 1}.bin"),
                            chash, learner.checkpoint_arrays())
    save_arrays(str(ckpt_path), chash, learner.checkpoint_arrays())
    return TrainArtifacts(
        csv_path=str(csv_path), checkpoint_path=str(ckpt_path), episodes=episodes,
        r_bar=float(cfg.reward.r_bar), config_hash=chash.hex(),
        final_epsilon=float(last.get("epsilon", math.nan)),
        final_block_ratio=float(last.get("block_ratio", math.nan)),
        final_throughput_bits=float(last.get("throughput_bits", math.nan)),
    )


def _load_learner(cfg: ExperimentConfig, policy: str, checkpoint: str,
                  seed: int) -> VqmixLearner:
    expected = config_hash(cfg, policy)
    found, arrays = load_arrays(checkpoint)
    if found != expected:
        raise ValueError("checkpoint/config hash mismatch: the checkpoint was "
                         "trained under a different configuration or policy")
    learner = VqmixLearner(cfg.env_config(), cfg.train, _variant(policy), seed)
    learner.load_checkpoint_arrays(arrays)
    return learner


def rollout_policy(cfg: ExperimentConfig, policy: str, seed: int,
                   checkpoint: Optional[str] = None,
                   episode_seed: Optional[int] = None) -> list[SlotRecord]:
    """One greedy/deterministic episode under the named policy."""
    cfg = resolve_r_bar(cfg)
    env = HandoverEnv(cfg.env_config())
    ep_seed = episode_seed if episode_seed is not None else child_seed(seed, "eval-episode", 0)
    if policy in TRAINABLE_POLICIES:
        if checkpoint is None:
            raise ValueError(f"policy {policy!r} needs a checkpoint")
        learner = _load_learner(cfg, policy, checkpoint, seed)
        records, _ = learner.run_episode(env, ep_seed, explore=False, store=False)
        return records
    if policy not in HEURISTIC_POLICIES:
        raise ValueError(f"unknown policy {policy!r}")
    pol = HEURISTIC_POLICIES[policy]()
    env.reset(ep_seed)
    pol.reset(env, seed)
    records = []
    while not env.done:
        action = pol.act(env)
        _, _, _, _, rec = env.step(action)
        records.append(rec)
    return records


@dataclass
class EvalSummary:
    policy: str
    seeds: tuple[int, ...]
    per_seed: list[dict]
    block_ratio_mean: float
    block_ratio_ci: float
    throughput_mean: float
    throughput_ci: float
    csv_path: Optional[str] = None
    degenerate_ci: bool = False


def _ci95(values: np.ndarray) -> tuple[float, float, bool]:
    """Half-width of the 95% CI on the mean: Student-t for <=10 samples."""
    n = len(values)
    mean = float(values.mean())
    if n < 2:
        return mean, 0.0, True
    sem = float(values.std(ddof=1)) / math.sqrt(n)
    q = stats.t.ppf(0.975, n - 1) if n <= 10 else stats.norm.ppf(0.975)
    return mean, float(q * sem), False


def run_eval(cfg: ExperimentConfig, policy: str, seeds: Sequence[int],
             checkpoint: Optional[str] = None, episodes_per_seed: int = 10,
             out_csv: Optional[str] = None) -> EvalSummary:
    """Greedy evaluation across seeds: per-seed means and 95% CIs over seeds."""
    cfg = resolve_r_bar(cfg)
    per_seed = []
    for seed in seeds:
        env = HandoverEnv(cfg.env_config())
        learner = None
        if policy in TRAINABLE_POLICIES:
            if checkpoint is None:
                raise ValueError(f"policy {policy!r} needs a checkpoint")
            learner = _load_learner(cfg, policy, checkpoint, seed)
        brs, tps, rets = [], [], []
        for i in range(episodes_per_seed):
            ep_seed = child_seed(seed, "eval-episode", i)
            if learner is not None:
                records, _ = learner.run_episode(env, ep_seed, explore=False, store=False)
            else:
                records = rollout_policy(cfg, policy, seed, episode_seed=ep_seed)
            m = metrics(records, cfg.scenario.delta_t)
            brs.append(m["block_ratio"])
            tps.append(m["throughput_bits"])
            rets.append(float(sum(r.reward for r in records)))
        per_seed.append({
            "seed": seed, "episodes": episodes_per_seed,
            "block_ratio": float(np.mean(brs)),
            "throughput_bits": float(np.mean(tps)),
            "mean_return": float(np.mean(rets)),
        })
    br = np.array([r["block_ratio"] for r in per_seed])
    tp = np.array([r["throughput_bits"] for r in per_seed])
    br_mean, br_ci, degen = _ci95(br)
    tp_mean, tp_ci, _ = _ci95(tp)
    summary = EvalSummary(
        policy=policy, seeds=tuple(seeds), per_seed=per_seed,
        block_ratio_mean=br_mean, block_ratio_ci=br_ci,
        throughput_mean=tp_mean, throughput_ci=tp_ci,
        degenerate_ci=degen,
    )
    if out_csv:
        Path(out_csv).parent.mkdir(parents=True, exist_ok=True)
        with open(out_csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(EVAL_CSV_COLUMNS)
            for row in per_seed:
                w.writerow([row["seed"], row["episodes"], _fmt(row["block_ratio"]),
                            _fmt(row["throughput_bits"]), _fmt(row["mean_return"])])
        summary.csv_path = out_csv
    return summary


def run_oracle(cfg: ExperimentConfig, horizon: int) -> OracleResult:
    cfg = resolve_r_bar(cfg)
    return exhaustive_oracle(cfg.env_config(), horizon)


@dataclass
class TraceArtifacts:
    csv_path: str
    slots: int
    block_ratio: float
    throughput_bits: float
    episode_return: float


def run_trace(cfg: ExperimentConfig, policy: str, seed: int, out_path: str,
              checkpoint: Optional[str] = None) -> TraceArtifacts:
    """Roll one episode and dump the per-slot trace CSV."""
    records = rollout_policy(resolve_r_bar(cfg), policy, seed, checkpoint=checkpoint)
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    write_trace_csv(records, out_path)
    m = metrics(records, cfg.scenario.delta_t)
    return TraceArtifacts(
        csv_path=out_path, slots=len(records),
        block_ratio=m["block_ratio"], throughput_bits=m["throughput_bits"],
        episode_return=float(sum(r.reward for r in records)),
    )
