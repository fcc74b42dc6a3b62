"""Exhaustive enumeration of joint action sequences on a deterministic scenario.

Traffic here must be fully scripted (no Poisson arrivals, no detection noise),
so the world evolves independently of the actions and the per-slot reward is a
function of (slot, post-move UAV cell, link choice). Those rewards are
tabulated once by replaying the environment dynamics, then every one of the
(2*5)^H joint sequences is enumerated level by level. Joint action index
j in 0..9 decodes as a_m = j // 5, a_u = j % 5.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..env import ActionPair, EnvConfig, UAV_ACTION_COUNT, UAV_DIRECTIONS, slot_reward
from ..traffic import advance, episode_length, spawn_scenario

MAX_SEQUENCES = 10_000_000
JOINT_ACTIONS = 2 * UAV_ACTION_COUNT


@dataclass(frozen=True)
class OracleResult:
    optimal_return: float
    actions: tuple[ActionPair, ...]
    enumerated: int
    horizon: int


def decode_joint(j: int) -> ActionPair:
    return ActionPair(a_m=j // UAV_ACTION_COUNT, a_u=j % UAV_ACTION_COUNT)


def _require_deterministic(cfg: EnvConfig) -> None:
    if cfg.scenario.spawn_rate > 0:
        raise ValueError("oracle needs a scripted scenario (spawn_rate must be 0)")
    if cfg.perception.noise.active:
        raise ValueError("oracle needs detection noise disabled")
    if cfg.reward.r_bar is None:
        raise ValueError("oracle needs a resolved reward baseline")


def exhaustive_oracle(cfg: EnvConfig, horizon: int) -> OracleResult:
    """Maximum episode return over every joint action sequence of length
    min(horizon, episode length), with its argmax sequence."""
    _require_deterministic(cfg)
    road = cfg.scenario.road
    t_slots = min(horizon, episode_length(cfg.scenario))
    if t_slots < 1:
        raise ValueError("empty horizon")
    n_seq = JOINT_ACTIONS ** t_slots
    if n_seq > MAX_SEQUENCES:
        raise ValueError(f"horizon {t_slots} enumerates {n_seq} sequences (cap {MAX_SEQUENCES})")

    rows, cols = road.grid_rows, road.grid_cols
    n_cells = rows * cols
    cell_xy = np.array([[road.grid_x(c), road.grid_y(r)]
                        for r in range(rows) for c in range(cols)])

    # Clamped movement table: cell x action -> cell (moves off the lattice hover).
    next_cell = np.zeros((n_cells, UAV_ACTION_COUNT), dtype=np.int64)
    for idx in range(n_cells):
        r, c = divmod(idx, cols)
        for a, (dx, dy) in enumerate(UAV_DIRECTIONS):
            nc, nr = c + dx, r + dy
            if 0 <= nr < rows and 0 <= nc < cols:
                next_cell[idx, a] = nr * cols + nc
            else:
                next_cell[idx, a] = idx

    # Reward table r[t, cell, a_m] from the action-independent traffic roll.
    traffic = spawn_scenario(cfg.scenario)
    rtab = np.zeros((t_slots, n_cells, 2))
    for t in range(t_slots):
        traffic = advance(cfg.scenario, traffic)
        packed = traffic.packed()
        for idx in range(n_cells):
            for a_m in (0, 1):
                rew, _, _ = slot_reward(cfg.radio, cfg.reward, packed, traffic.ms,
                                        cell_xy[idx], a_m)
                rtab[t, idx, a_m] = rew

    start = int(np.argmin(np.abs(cell_xy[:, 0]) + np.abs(cell_xy[:, 1])))
    if abs(cell_xy[start][0]) > 1e-9 or abs(cell_xy[start][1]) > 1e-9:
        raise ValueError("UAV start (0,0) is not on the lattice")

    returns = np.zeros(1)
    cells = np.full(1, start, dtype=np.int64)
    a_m_of_j = np.arange(JOINT_ACTIONS) // UAV_ACTION_COUNT
    a_u_of_j = np.arange(JOINT_ACTIONS) % UAV_ACTION_COUNT
    for t in range(t_slots):
        cells = next_cell[cells[:, None], a_u_of_j[None, :]].reshape(-1)
        rewards = rtab[t, cells, np.tile(a_m_of_j, returns.shape[0])]
        returns = (returns[:, None] + rewards.reshape(-1, JOINT_ACTIONS)).reshape(-1)

    best = int(np.argmax(returns))
    digits = []
    rem = best
    for _ in range(t_slots):
        digits.append(rem % JOINT_ACTIONS)
        rem //= JOINT_ACTIONS
    actions = tuple(decode_joint(j) for j in reversed(digits))
    return OracleResult(optimal_return=float(returns[best]), actions=actions,
                        enumerated=int(returns.size), horizon=t_slots)
