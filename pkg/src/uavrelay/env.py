"""Sequential decision environment: link selection plus UAV waypoint control.

Per slot the MS picks the direct or relayed link and the UAV picks one of
five unit moves on its waypoint lattice. A step moves the UAV (clamped to the
permitted region), advances traffic, evaluates the three link channels, and
pays reward proportional to the selected capacity minus a baseline and a
relay usage cost.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from . import perception
from .channel import (
    LinkBudget,
    OfdmSpec,
    RadioScene,
    capacity,
    link_response,
    relay_capacity,
    system_capacity,
)
from .geom import CAMERA_ORDER, Intrinsics, PackedBoxes, Vec3, VehicleBox, VType, count_blockers
from .perception import Detection, GridSpec, NoiseModel, SizeBounds
from .rng import child_rng
from .traffic import ScenarioConfig, TrafficState, advance, episode_length, spawn_scenario

# UAV unit moves, fixed index order: left, right, forward, backward, hover.
UAV_DIRECTIONS: tuple[tuple[int, int], ...] = ((-1, 0), (1, 0), (0, 1), (0, -1), (0, 0))
UAV_ACTION_COUNT = len(UAV_DIRECTIONS)
MS_ACTION_COUNT = 2

VTYPE_INDEX = {VType.MS: 0, VType.CAR: 1, VType.VAN: 2, VType.BUS: 3}
_VTYPE_FROM_INDEX = {v: k for k, v in VTYPE_INDEX.items()}


@dataclass(frozen=True)
class ActionPair:
    a_m: int   # 0 direct, 1 relay
    a_u: int   # index into UAV_DIRECTIONS

    def __post_init__(self) -> None:
        if self.a_m not in (0, 1):
            raise ValueError("a_m must be 0 or 1")
        if not (0 <= self.a_u < UAV_ACTION_COUNT):
            raise ValueError("a_u out of range")


class ImageSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    width: int = 64
    height: int = 64
    hfov_deg: float = 90.0

    def intrinsics(self) -> Intrinsics:
        return Intrinsics(width=self.width, height=self.height, hfov_deg=self.hfov_deg)


class PerceptionConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    image: ImageSpec = ImageSpec()
    bounds: SizeBounds = SizeBounds()
    grid: GridSpec = GridSpec()
    noise: NoiseModel = NoiseModel()


class RadioConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    ofdm: OfdmSpec = OfdmSpec()
    scene: RadioScene = RadioScene()
    bs_power_w: float = 1.0
    uav_power_w: float = 0.1
    noise_w_per_hz: float = 1e-17
    bs_pos: tuple[float, float, float] = (0.0, -7.5, 3.0)
    uav_alt: float = 10.0
    ms_antenna: str = "roof"  # antenna sits at the MS roof center


class RewardSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kappa: float = 1e-8            # reward per bit/s
    relay_cost: float = 1e7        # bits/s equivalent charged while relaying
    r_bar: Optional[float] = None  # fixed per-scenario baseline, resolved before training
    r_bar_episodes: int = 50       # random-policy warm-up episodes used to resolve it

    @model_validator(mode="after")
    def _check(self) -> "RewardSpec":
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if self.relay_cost < 0:
            raise ValueError("relay_cost must be nonnegative")
        return self


class EnvConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    scenario: ScenarioConfig = ScenarioConfig()
    radio: RadioConfig = RadioConfig()
    perception: PerceptionConfig = PerceptionConfig()
    reward: RewardSpec = RewardSpec()


@dataclass(frozen=True)
class Observation:
    ms_map: np.ndarray    # (12, H, W) size-encoded camera stack
    ms_pos: np.ndarray    # (2,) MS road coordinates
    uav_map: np.ndarray   # (4, rows, cols) Gaussian map
    uav_pos: np.ndarray   # (2,) UAV road coordinates


@dataclass(frozen=True)
class GlobalState:
    g_map: np.ndarray     # shared with Observation.uav_map
    uav_pos: np.ndarray


@dataclass(frozen=True)
class SlotSnapshot:
    """Compact per-slot record sufficient to rebuild both observation maps."""

    vehicles: np.ndarray  # (n, 8): [type_idx, x, y, z, yaw, l, w, h]
    ms: np.ndarray        # (6,): [x, y, yaw, l, w, h]
    uav_pos: np.ndarray   # (2,)
    detections: np.ndarray  # (m, 27) packed per-camera boxes


@dataclass(frozen=True)
class SlotRecord:
    t: int
    obs: Observation
    state: GlobalState
    actions: ActionPair
    reward: float
    r_m: float
    r_bm: float
    r_bum: float
    r_bu: float
    r_um: float
    blocked: bool
    done: bool


def pack_vehicles(state: TrafficState) -> tuple[np.ndarray, np.ndarray]:
    veh = np.array(
        [
            [VTYPE_INDEX[v.vtype], v.center.x, v.center.y, v.center.z, v.yaw,
             v.length, v.width, v.height]
            for v in state.vehicles
        ],
        dtype=np.float64,
    ).reshape(-1, 8)
    ms = state.ms
    ms_row = np.array([ms.center.x, ms.center.y, ms.yaw, ms.length, ms.width, ms.height])
    return veh, ms_row


def unpack_traffic(veh: np.ndarray, ms_row: np.ndarray) -> TrafficState:
    """Rebuild a minimal TrafficState (kinematic fields only) from packed rows."""
    vehicles = tuple(
        VehicleBox(
            id=i + 1,
            vtype=_VTYPE_FROM_INDEX[int(r[0])],
            center=Vec3(r[1], r[2], r[3]),
            yaw=float(r[4]),
            length=float(r[5]),
            width=float(r[6]),
            height=float(r[7]),
        )
        for i, r in enumerate(veh)
    )
    ms = VehicleBox(
        id=0, vtype=VType.MS,
        center=Vec3(ms_row[0], ms_row[1], ms_row[5] / 2.0),
        yaw=float(ms_row[2]),
        length=float(ms_row[3]), width=float(ms_row[4]), height=float(ms_row[5]),
    )
    return TrafficState(t=0, vehicles=vehicles, ms=ms, rng_state={}, next_id=len(vehicles) + 1,
                        spawn_count=0)


def pack_detections(dets: Sequence[Detection]) -> np.ndarray:
    rows = np.zeros((len(dets), 3 + 6 * len(CAMERA_ORDER)), dtype=np.float64)
    for i, d in enumerate(dets):
        rows[i, 0:3] = d.dims
        for ci, view in enumerate(CAMERA_ORDER):
            base = 3 + 6 * ci
            if view in d.bboxes:
                rows[i, base] = 1.0
                rows[i, base + 1:base + 5] = d.bboxes[view]
                rows[i, base + 5] = d.depths[view]
    return rows


def unpack_detections(rows: np.ndarray) -> list[Detection]:
    dets = []
    for r in rows:
        bboxes = {}
        depths = {}
        for ci, view in enumerate(CAMERA_ORDER):
            base = 3 + 6 * ci
            if r[base] > 0.5:
                bboxes[view] = tuple(float(v) for v in r[base + 1:base + 5])
                depths[view] = float(r[base + 5])
        dets.append(Detection(
            vtype=VType.CAR,  # class is irrelevant to the size encoding
            center_ms=(0.0, 0.0, 0.0),
            yaw=0.0,
            dims=(float(r[0]), float(r[1]), float(r[2])),
            bboxes=bboxes,
            depths=depths,
        ))
    return dets


class HandoverEnv:
    """One episode at a time; `reset(seed)` rebuilds traffic deterministically."""

    def __init__(self, cfg: EnvConfig):
        self.cfg = cfg
        road = cfg.scenario.road
        self.horizon = episode_length(cfg.scenario)
        self.pitch = road.grid_pitch
        self.lower = np.array(road.uav_lower_bound)
        self.upper = np.array(road.uav_upper_bound)
        self.start = np.array([0.0, 0.0])
        on_lattice = (
            np.all(self.lower - 1e-9 <= self.start) and np.all(self.start <= self.upper + 1e-9)
            and abs((self.start[0] - self.lower[0]) % self.pitch) < 1e-9
            and abs((self.start[1] - self.lower[1]) % self.pitch) < 1e-9
        )
        if not on_lattice:
            raise ValueError("UAV start (0,0) must be a lattice point inside the permitted region")
        if cfg.reward.r_bar is None:
            raise ValueError("reward.r_bar is unresolved; calibrate it before building the env")
        self._intr = cfg.perception.image.intrinsics()
        self._bs = Vec3(*cfg.radio.bs_pos)
        self._traffic: Optional[TrafficState] = None
        self._wu: Optional[np.ndarray] = None
        self._t = 0
        self._done = True
        self._noise_rng: Optional[np.random.Generator] = None
        self._snapshot: Optional[SlotSnapshot] = None

    # -- episode control -------------------------------------------------

    def reset(self, seed: int) -> tuple[Observation, GlobalState]:
        scen = self.cfg.scenario.model_copy(update={"seed": int(seed)})
        self._traffic = spawn_scenario(scen)
        self._wu = self.start.copy()
        self._t = 0
        self._done = self.horizon == 0
        self._noise_rng = child_rng(seed, "detection-noise")
        obs, state = self._observe()
        return obs, state

    def step(self, actions: ActionPair) -> tuple[Observation, GlobalState, float, bool, SlotRecord]:
        if self._done or self._traffic is None:
            raise RuntimeError("step() on a finished episode; call reset() first")
        t = self._t

        move = np.array(UAV_DIRECTIONS[actions.a_u], dtype=float) * self.pitch
        target = self._wu + move
        if np.all(target >= self.lower - 1e-9) and np.all(target <= self.upper + 1e-9):
            self._wu = target

        self._traffic = advance(self.cfg.scenario, self._traffic)
        self._t = t + 1
        self._done = self._t >= self.horizon

        packed = self._traffic.packed()
        r_bm, r_bu, r_um, blk = self._link_capacities(packed)
        r_bum = relay_capacity(r_bu, r_um)
        r_m = system_capacity(actions.a_m, r_bum, r_bm)
        rs = self.cfg.reward
        reward = rs.kappa * (r_m - rs.r_bar - actions.a_m * rs.relay_cost)
        blocked = blk["relay"] if actions.a_m == 1 else blk["direct"]

        obs, state = self._observe()
        assert np.all(self._wu >= self.lower - 1e-9) and np.all(self._wu <= self.upper + 1e-9)
        rec = SlotRecord(
            t=t, obs=obs, state=state, actions=actions, reward=float(reward),
            r_m=r_m, r_bm=r_bm, r_bum=r_bum, r_bu=r_bu, r_um=r_um,
            blocked=blocked, done=self._done,
        )
        return obs, state, float(reward), self._done, rec

    # -- views -------------------------------------------------------------

    @property
    def t(self) -> int:
        return self._t

    @property
    def done(self) -> bool:
        return self._done

    @property
    def traffic(self) -> TrafficState:
        assert self._traffic is not None
        return self._traffic

    def uav_xy(self) -> np.ndarray:
        return self._wu.copy()

    def ms_xy(self) -> np.ndarray:
        ms = self.traffic.ms
        return np.array([ms.center.x, ms.center.y])

    @property
    def snapshot(self) -> SlotSnapshot:
        assert self._snapshot is not None
        return self._snapshot

    def probe_blockage(self) -> dict[str, bool]:
        """Geometric LOS status of the current (pre-step) configuration."""
        packed = self.traffic.packed()
        bs, uav, ant = self._bs, self._uav_point(), self._ms_antenna()
        direct = count_blockers(bs, ant, packed) > 0
        bs_uav = count_blockers(bs, uav, packed) > 0
        uav_ms = count_blockers(uav, ant, packed) > 0
        return {"direct": direct, "bs_uav": bs_uav, "uav_ms": uav_ms,
                "relay": bs_uav or uav_ms}

    # -- internals ---------------------------------------------------------

    def _uav_point(self) -> Vec3:
        return Vec3(float(self._wu[0]), float(self._wu[1]), self.cfg.radio.uav_alt)

    def _ms_antenna(self) -> Vec3:
        ms = self.traffic.ms
        return Vec3(ms.center.x, ms.center.y, ms.roof_z)

    def _link_capacities(self, packed: PackedBoxes) -> tuple[float, float, float, dict[str, bool]]:
        return evaluate_links(self.cfg.radio, packed, self.traffic.ms, self._wu)

    def _observe(self) -> tuple[Observation, GlobalState]:
        pc = self.cfg.perception
        dets = perception.synthesize_detections(self.traffic, self._intr, pc.noise,
                                                self._noise_rng)
        f_map = perception.encode_size_channels(dets, pc.bounds, self._intr)
        g_map = perception.gaussian_map(self.traffic, pc.grid)
        wu = self._wu.copy()
        obs = Observation(ms_map=f_map, ms_pos=self.ms_xy(), uav_map=g_map, uav_pos=wu)
        state = GlobalState(g_map=g_map, uav_pos=wu)
        veh, ms_row = pack_vehicles(self.traffic)
        self._snapshot = SlotSnapshot(vehicles=veh, ms=ms_row, uav_pos=wu,
                                      detections=pack_detections(dets))
        return obs, state


def evaluate_links(radio: RadioConfig, packed: PackedBoxes, ms: VehicleBox,
                   wu: np.ndarray) -> tuple[float, float, float, dict[str, bool]]:
    """Capacities of the three links and the LOS status of each, for the given
    vehicle layout and UAV planar position. Pure; shared with the oracle."""
    bs = Vec3(*radio.bs_pos)
    uav = Vec3(float(wu[0]), float(wu[1]), radio.uav_alt)
    ant = Vec3(ms.center.x, ms.center.y, ms.roof_z)
    bs_budget = LinkBudget(power_w=radio.bs_power_w, noise_w_per_hz=radio.noise_w_per_hz)
    uav_budget = LinkBudget(power_w=radio.uav_power_w, noise_w_per_hz=radio.noise_w_per_hz)
    h_bm = link_response(bs, ant, packed, radio.scene, radio.ofdm)
    h_bu = link_response(bs, uav, packed, radio.scene, radio.ofdm)
    h_um = link_response(uav, ant, packed, radio.scene, radio.ofdm)
    r_bm = capacity(h_bm, bs_budget, radio.ofdm)
    r_bu = capacity(h_bu, bs_budget, radio.ofdm)
    r_um = capacity(h_um, uav_budget, radio.ofdm)
    blk = {
        "direct": count_blockers(bs, ant, packed) > 0,
        "bs_uav": count_blockers(bs, uav, packed) > 0,
        "uav_ms": count_blockers(uav, ant, packed) > 0,
    }
    blk["relay"] = blk["bs_uav"] or blk["uav_ms"]
    return r_bm, r_bu, r_um, blk


def slot_reward(radio: RadioConfig, reward: RewardSpec, packed: PackedBoxes,
                ms: VehicleBox, wu: np.ndarray, a_m: int) -> tuple[float, float, bool]:
    """(reward, R_m, blocked) for a post-move layout; mirrors one env step."""
    r_bm, r_bu, r_um, blk = evaluate_links(radio, packed, ms, wu)
    r_bum = relay_capacity(r_bu, r_um)
    r_m = system_capacity(a_m, r_bum, r_bm)
    rew = reward.kappa * (r_m - reward.r_bar - a_m * reward.relay_cost)
    return float(rew), r_m, blk["relay"] if a_m == 1 else blk["direct"]


# --- episode summaries --------------------------------------------------------

def episode_return(records: Sequence[SlotRecord], delta_t: float,
                   relay_cost: float) -> tuple[float, float]:
    """(sum of rewards, throughput-objective value sum_t (R_m - a_m C) dt).

    With the reward r = kappa (R_m - r_bar - a_m C), the two satisfy
    return == kappa * (objective / dt - T * r_bar) exactly.
    """
    ret = float(sum(r.reward for r in records))
    objective = float(sum((r.r_m - r.actions.a_m * relay_cost) * delta_t for r in records))
    return ret, objective


def metrics(records: Sequence[SlotRecord], delta_t: float) -> dict[str, float]:
    """Block ratio (selected-link LOS blocked) and throughput in bits."""
    if not records:
        return {"block_ratio": 0.0, "throughput_bits": 0.0}
    blocked = sum(1 for r in records if r.blocked)
    throughput = sum(r.r_m * delta_t for r in records)
    return {"block_ratio": blocked / len(records), "throughput_bits": float(throughput)}


def build_channel_cache(cfg: EnvConfig, path: str) -> dict[str, np.ndarray]:
    """Precompute per-slot responses for every link and UAV lattice cell.

    Mirrors the offline ray-tracing workflow: one (cells, slots, K) table per
    link keyed by a hash of the scenario, written with channel.write_channel_cache.
    Only meaningful for deterministic traffic (the hash covers the seed).
    """
    from .channel import scenario_hash, write_channel_cache

    scen = cfg.scenario
    road = scen.road
    slots = episode_length(scen)
    radio = cfg.radio
    cells = [(road.grid_x(c), road.grid_y(r))
             for r in range(road.grid_rows) for c in range(road.grid_cols)]
    k = radio.ofdm.subcarriers
    tables = {
        "bs_ms": np.zeros((1, slots, k), dtype=complex),
        "bs_uav": np.zeros((len(cells), slots, k), dtype=complex),
        "uav_ms": np.zeros((len(cells), slots, k), dtype=complex),
    }
    bs = Vec3(*radio.bs_pos)
    traffic = spawn_scenario(scen)
    for t in range(slots):
        traffic = advance(scen, traffic)
        packed = traffic.packed()
        ms = traffic.ms
        ant = Vec3(ms.center.x, ms.center.y, ms.roof_z)
        tables["bs_ms"][0, t] = link_response(bs, ant, packed, radio.scene, radio.ofdm).h
        for i, (x, y) in enumerate(cells):
            uav = Vec3(x, y, radio.uav_alt)
            tables["bs_uav"][i, t] = link_response(bs, uav, packed, radio.scene,
                                                   radio.ofdm).h
            tables["uav_ms"][i, t] = link_response(uav, ant, packed, radio.scene,
                                                   radio.ofdm).h
    scen_hash = scenario_hash(cfg.model_dump_json().encode("utf8"))
    write_channel_cache(path, scen_hash, radio.ofdm, tables)
    return tables


TRACE_COLUMNS = ("t", "w_u_x", "w_u_y", "a_m", "a_u", "R_bm", "R_bu", "R_um", "R_m",
                 "blocked", "reward")


def write_trace_csv(records: Sequence[SlotRecord], path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for r in records:
            w.writerow([
                r.t,
                repr(float(r.state.uav_pos[0])), repr(float(r.state.uav_pos[1])),
                r.actions.a_m, r.actions.a_u,
                repr(r.r_bm), repr(r.r_bu), repr(r.r_um), repr(r.r_m),
                int(r.blocked), repr(r.reward),
            ])
