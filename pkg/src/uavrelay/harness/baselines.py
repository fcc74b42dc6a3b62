"""Non-learning reference policies and the location-only observation reduction."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..env import ActionPair, HandoverEnv, Observation, UAV_DIRECTIONS
from ..perception import GridSpec, occupancy_map
from ..traffic import TrafficState

HOVER = 4  # index of (0, 0) in UAV_DIRECTIONS


class AlwaysDirect:
    """Direct link every slot, UAV hovers."""

    def reset(self, env: HandoverEnv, seed: int) -> None:
        pass

    def act(self, env: HandoverEnv) -> ActionPair:
        return ActionPair(a_m=0, a_u=HOVER)


class AlwaysRelay:
    """Relay link every slot, UAV hovers at its start cell."""

    def reset(self, env: HandoverEnv, seed: int) -> None:
        pass

    def act(self, env: HandoverEnv) -> ActionPair:
        return ActionPair(a_m=1, a_u=HOVER)


class GreedyLos:
    """Geometry-aware heuristic: relay only when the direct LOS is blocked and
    the relay chain is clear; the UAV flies toward the MS position projected
    onto its permitted lattice (x first, then y)."""

    def reset(self, env: HandoverEnv, seed: int) -> None:
        pass

    def act(self, env: HandoverEnv) -> ActionPair:
        blk = env.probe_blockage()
        a_m = 1 if (blk["direct"] and not blk["relay"]) else 0
        target = np.clip(env.ms_xy(), env.lower, env.upper)
        delta = target - env.uav_xy()
        pitch = env.pitch
        if delta[0] > pitch / 2:
            a_u = UAV_DIRECTIONS.index((1, 0))
        elif delta[0] < -pitch / 2:
            a_u = UAV_DIRECTIONS.index((-1, 0))
        elif delta[1] > pitch / 2:
            a_u = UAV_DIRECTIONS.index((0, 1))
        elif delta[1] < -pitch / 2:
            a_u = UAV_DIRECTIONS.index((0, -1))
        else:
            a_u = HOVER
        return ActionPair(a_m=a_m, a_u=a_u)


HEURISTIC_POLICIES = {
    "always_direct": AlwaysDirect,
    "always_relay": AlwaysRelay,
    "greedy_los": GreedyLos,
}


@dataclass(frozen=True)
class LocationObservation:
    """The ablated observation: coordinates only, no visual size channels."""

    ms_pos: np.ndarray        # (2,)
    occupancy: np.ndarray     # (2, rows, cols), binary vehicle centers
    uav_pos: np.ndarray       # (2,)


def location_only_variant(obs: Observation, traffic: TrafficState,
                          grid: GridSpec) -> LocationObservation:
    """Reduce a full observation to location information.

    The MS keeps only its own coordinates; the UAV sees a binary
    center-occupancy grid instead of the Gaussian size map. Vehicle sizes are
    invisible by construction.
    """
    return LocationObservation(
        ms_pos=obs.ms_pos.copy(),
        occupancy=occupancy_map(traffic, grid),
        uav_pos=obs.uav_pos.copy(),
    )
