"""Procedural road traffic and the mobile-station trajectory.

A straight two-direction road: lanes on the +y half carry +x traffic, lanes
on the -y half carry -x traffic. Vehicles arrive per lane as a Poisson
process, hold a desired speed, never change lanes, and brake only to keep a
minimum gap behind their leader. The MS drives its configured speed profile
in the outermost +x lane, which is excluded from spawning so the profile is
never violated.

State is a value: `advance` returns a new TrafficState and carries the
generator state along, so (seed, config) fully determines an episode.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from .geom import PackedBoxes, Vec3, VehicleBox, VType, wrap_angle

MS_ID = 0


class RoadSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    length: float = 85.0
    width: float = 15.0
    lane_count: int = 4
    grid_rows: int = 3            # UAV waypoint lattice across the road
    grid_cols: int = 35
    grid_pitch: float = 2.5

    @model_validator(mode="after")
    def _check(self) -> "RoadSpec":
        if self.length <= 0 or self.width <= 0:
            raise ValueError("road dimensions must be positive")
        if self.lane_count < 2 or self.lane_count % 2 != 0:
            raise ValueError("lane_count must be an even integer >= 2")
        if self.grid_rows < 1 or self.grid_cols < 2 or self.grid_pitch <= 0:
            raise ValueError("invalid UAV grid")
        return self

    @property
    def lane_width(self) -> float:
        return self.width / self.lane_count

    def lane_center_y(self, lane: int) -> float:
        """Lane 0 is the southernmost (-x traffic); centers south to north."""
        return -self.width / 2.0 + (lane + 0.5) * self.lane_width

    def lane_heading(self, lane: int) -> float:
        """+x on the northern half, -x on the southern half."""
        return 0.0 if self.lane_center_y(lane) > 0.0 else math.pi

    @property
    def ms_lane(self) -> int:
        return self.lane_count - 1  # outermost +x lane

    # UAV waypoint lattice: columns along x starting at 0, rows centered on y=0.
    def grid_x(self, col: int) -> float:
        return col * self.grid_pitch

    def grid_y(self, row: int) -> float:
        return (row - (self.grid_rows - 1) / 2.0) * self.grid_pitch

    @property
    def uav_lower_bound(self) -> tuple[float, float]:
        return (0.0, self.grid_y(0))

    @property
    def uav_upper_bound(self) -> tuple[float, float]:
        return (self.grid_x(self.grid_cols - 1), self.grid_y(self.grid_rows - 1))


# §V-A vehicle catalogue: length, width, height in meters.
DEFAULT_DIMS: dict[str, tuple[float, float, float]] = {
    "car": (3.71, 1.79, 1.55),
    "van": (5.20, 2.61, 2.47),
    "bus": (11.08, 3.25, 3.33),
}


class ScriptedVehicle(BaseModel):
    """Deterministic actor for scripted scenarios (oracle / tests)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    vtype: str
    x: float
    y: float
    speed: float = 0.0
    heading_deg: float = 0.0


class ScenarioConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    seed: int = 0
    road: RoadSpec = RoadSpec()
    spawn_rate: float = 0.25              # vehicles per second per spawning lane
    type_mix: dict[str, float] = {"car": 0.5, "van": 0.3, "bus": 0.2}
    speed_ranges: dict[str, tuple[float, float]] = {
        "car": (8.0, 14.0),
        "van": (7.0, 12.0),
        "bus": (6.0, 10.0),
    }
    dims: dict[str, tuple[float, float, float]] = dict(DEFAULT_DIMS)
    delta_t: float = 0.05
    ms_speed: float = 8.5
    min_gap: float = 2.0
    prefill_s: float = 10.0
    scripted: tuple[ScriptedVehicle, ...] = ()

    @model_validator(mode="after")
    def _check(self) -> "ScenarioConfig":
        if self.delta_t <= 0:
            raise ValueError("delta_t must be positive")
        if self.ms_speed <= 0:
            raise ValueError("ms_speed must be positive")
        if self.spawn_rate < 0:
            raise ValueError("spawn_rate must be nonnegative")
        if not self.type_mix:
            raise ValueError("type_mix must not be empty")
        total = sum(self.type_mix.values())
        if not math.isclose(total, 1.0, rel_tol=0, abs_tol=1e-9):
            raise ValueError("type_mix probabilities must sum to 1")
        for name in self.type_mix:
            if name not in self.dims or name not in self.speed_ranges:
                raise ValueError(f"missing dims/speeds for type {name!r}")
            if any(v <= 0 for v in self.dims[name]):
                raise ValueError("vehicle dims must be positive")
        return self


@dataclass(frozen=True)
class TrafficState:
    t: int
    vehicles: tuple[VehicleBox, ...]    # everything except the MS
    ms: VehicleBox
    rng_state: dict
    next_id: int
    spawn_count: int                    # vehicles spawned since scenario start
    pending: tuple[int, ...] = ()       # queued arrivals per spawning lane

    def all_boxes(self) -> tuple[VehicleBox, ...]:
        return self.vehicles + (self.ms,)

    def packed(self) -> PackedBoxes:
        return PackedBoxes.from_boxes(self.all_boxes())


def _make_box(vid: int, vtype: str, x: float, y: float, yaw: float,
              dims: tuple[float, float, float], speed: float) -> VehicleBox:
    l, w, h = dims
    return VehicleBox(
        id=vid,
        vtype=VType(vtype) if vtype in ("car", "van", "bus") else VType.MS,
        center=Vec3(x, y, h / 2.0),
        yaw=yaw,
        length=l,
        width=w,
        height=h,
        speed=speed,
    )


def _ms_box(cfg: ScenarioConfig, x: float) -> VehicleBox:
    road = cfg.road
    dims = cfg.dims["car"]  # the MS is car type
    return VehicleBox(
        id=MS_ID,
        vtype=VType.MS,
        center=Vec3(x, road.lane_center_y(road.ms_lane), dims[2] / 2.0),
        yaw=0.0,
        length=dims[0],
        width=dims[1],
        height=dims[2],
        speed=cfg.ms_speed,
    )


def _rng_from_state(state: dict) -> np.random.Generator:
    bg = np.random.PCG64()
    bg.state = state
    return np.random.Generator(bg)


def _spawning_lanes(cfg: ScenarioConfig) -> list[int]:
    return [la for la in range(cfg.road.lane_count) if la != cfg.road.ms_lane]


def _sorted_lane(vehicles: list[VehicleBox], lane_y: float, heading: float,
                 eps: float = 1e-6) -> list[VehicleBox]:
    same = [
        v for v in vehicles
        if abs(v.center.y - lane_y) < eps and abs(wrap_angle(v.yaw - heading)) < 1e-9
    ]
    return sorted(same, key=lambda v: v.center.x)


def _gap_ok(candidate: VehicleBox, others: list[VehicleBox], min_gap: float) -> bool:
    for o in others:
        if abs(o.center.y - candidate.center.y) > (o.width + candidate.width) / 2.0:
            continue
        gap = abs(o.center.x - candidate.center.x) - (o.length + candidate.length) / 2.0
        if gap < min_gap:
            return False
    return True


def _try_spawn(cfg: ScenarioConfig, rng: np.random.Generator, lane: int,
               vehicles: list[VehicleBox], ms: VehicleBox, next_id: int) -> Optional[VehicleBox]:
    road = cfg.road
    names = sorted(cfg.type_mix)
    probs = np.array([cfg.type_mix[n] for n in names])
    vtype = str(names[rng.choice(len(names), p=probs / probs.sum())])
    lo, hi = cfg.speed_ranges[vtype]
    speed = float(rng.uniform(lo, hi))
    heading = road.lane_heading(lane)
    x0 = 0.0 if heading == 0.0 else road.length
    box = _make_box(next_id, vtype, x0, road.lane_center_y(lane), heading, cfg.dims[vtype], speed)
    if not _gap_ok(box, vehicles + [ms], cfg.min_gap):
        return None
    return box


def _step_vehicles(cfg: ScenarioConfig, vehicles: list[VehicleBox], dt: float) -> list[VehicleBox]:
    road = cfg.road
    out: list[VehicleBox] = []
    in_lane: set[int] = set()
    for lane in range(road.lane_count):
        lane_y = road.lane_center_y(lane)
        forward = road.lane_heading(lane) == 0.0
        lane_vs = _sorted_lane(vehicles, lane_y, road.lane_heading(lane))
        in_lane.update(v.id for v in lane_vs)
        # Leader-first order so each follower clamps against its leader's new position.
        ordered = list(reversed(lane_vs)) if forward else lane_vs
        leader: Optional[VehicleBox] = None
        sgn = 1.0 if forward else -1.0
        for v in ordered:
            new_x = v.center.x + sgn * v.speed * dt
            if leader is not None:
                limit = leader.center.x - sgn * ((leader.length + v.length) / 2.0 + cfg.min_gap)
                new_x = min(new_x, limit) if forward else max(new_x, limit)
            nb = replace(v, center=Vec3(new_x, v.center.y, v.center.z))
            leader = nb
            margin = nb.length / 2.0
            if -margin <= nb.center.x <= road.length + margin:
                out.append(nb)
    # Scripted actors off the lane grid move freely along their heading.
    for v in vehicles:
        if v.id in in_lane:
            continue
        nb = replace(v, center=Vec3(v.center.x + math.cos(v.yaw) * v.speed * dt,
                                    v.center.y + math.sin(v.yaw) * v.speed * dt,
                                    v.center.z))
        margin = nb.length / 2.0
        if -margin <= nb.center.x <= road.length + margin:
            out.append(nb)
    return out


def spawn_scenario(cfg: ScenarioConfig) -> TrafficState:
    """Initial traffic state: MS at the road start plus a pre-rolled stream.

    Deterministic in (cfg, cfg.seed). `prefill_s` seconds of arrivals are
    simulated before slot 0 so the road is not empty at episode start;
    spawn_count excludes that warm-up.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed) & 0xFFFFFFFFFFFFFFFF, 0x7261666663]))
    ms = _ms_box(cfg, 0.0)
    vehicles: list[VehicleBox] = []
    next_id = MS_ID + 1
    for sv in cfg.scripted:
        if sv.vtype not in cfg.dims:
            raise ValueError(f"scripted vehicle type {sv.vtype!r} not in dims")
        vehicles.append(_make_box(next_id, sv.vtype, sv.x, sv.y,
                                  math.radians(sv.heading_deg), cfg.dims[sv.vtype], sv.speed))
        next_id += 1

    state = TrafficState(t=0, vehicles=tuple(vehicles), ms=ms,
                         rng_state=rng.bit_generator.state, next_id=next_id, spawn_count=0,
                         pending=tuple(0 for _ in _spawning_lanes(cfg)))
    if cfg.spawn_rate > 0 and cfg.prefill_s > 0:
        steps = int(round(cfg.prefill_s / cfg.delta_t))
        for _ in range(steps):
            state = advance(cfg, state, hold_ms=True)
        state = replace(state, t=0, ms=ms, spawn_count=0)
    return state


def advance(cfg: ScenarioConfig, state: TrafficState, hold_ms: bool = False) -> TrafficState:
    """One slot of kinematics: move vehicles (gap rule), despawn, Poisson
    arrivals, and advance the MS along its speed profile.

    Arrivals queue per lane when the entrance is occupied and release as soon
    as the gap rule allows (one per lane per slot), so the long-run spawn
    count follows the Poisson arrival process rather than a thinned version.
    """
    dt = cfg.delta_t
    rng = _rng_from_state(state.rng_state)
    vehicles = _step_vehicles(cfg, list(state.vehicles), dt)

    ms_x = state.ms.center.x if hold_ms else state.ms.center.x + cfg.ms_speed * dt
    ms = replace(state.ms, center=Vec3(ms_x, state.ms.center.y, state.ms.center.z))

    next_id = state.next_id
    spawned = state.spawn_count
    pending = list(state.pending)
    if cfg.spawn_rate > 0:
        lanes = _spawning_lanes(cfg)
        if len(pending) != len(lanes):
            pending = [0] * len(lanes)
        for i in range(len(lanes)):
            pending[i] += int(rng.poisson(cfg.spawn_rate * dt))
        for i, lane in enumerate(lanes):
            if pending[i] == 0:
                continue
            box = _try_spawn(cfg, rng, lane, vehicles, ms, next_id)
            if box is not None:
                vehicles.append(box)
                next_id += 1
                spawned += 1
                pending[i] -= 1

    return TrafficState(
        t=state.t + 1,
        vehicles=tuple(vehicles),
        ms=ms,
        rng_state=rng.bit_generator.state,
        next_id=next_id,
        spawn_count=spawned,
        pending=tuple(pending),
    )


def episode_length(cfg: ScenarioConfig) -> int:
    """Slots until the MS center passes the road end (x >= length)."""
    remaining = cfg.road.length
    if remaining <= 0:
        return 0
    return int(math.ceil(remaining / (cfg.ms_speed * cfg.delta_t) - 1e-9))
