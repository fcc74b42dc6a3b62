"""Few-path propagation model and OFDM channel/capacity computations.

A ray tracer is out of scope; links get at most four deterministic paths:
line-of-sight (attenuated per intersecting vehicle), a ground bounce, and one
bounce off each roadside wall plane. The frequency response is the standard
cyclic-prefix-windowed tap sum over those paths, and capacities are
per-subcarrier Shannon sums.
"""
from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass
from enum import Enum
from typing import Literal, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict

from .geom import PackedBoxes, Vec3, VehicleBox, count_blockers_batch

SPEED_OF_LIGHT = 299792458.0


class PathKind(str, Enum):
    LOS = "los"
    GROUND_REFLECTION = "ground_reflection"
    WALL_REFLECTION = "wall_reflection"
    BLOCKED_LOS = "blocked_los"


@dataclass(frozen=True)
class Path:
    gain: complex          # complex amplitude (free-space magnitude x reflection coeffs)
    delay: float           # absolute propagation delay, seconds
    kind: PathKind

    def __post_init__(self) -> None:
        if self.delay < 0:
            raise ValueError("negative path delay")


class OfdmSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    subcarriers: int = 16                  # K
    subcarrier_hz: float = 6.25e6          # B_k
    cp_len: int = 4                        # N, tap window length in samples
    carrier_hz: float = 28e9
    pulse: Literal["sinc", "raised_cosine"] = "sinc"
    rc_beta: float = 0.25

    @property
    def sample_interval(self) -> float:
        """T_s = 1 / (K * B_k)."""
        return 1.0 / (self.subcarriers * self.subcarrier_hz)

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz


class LinkBudget(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    power_w: float = 1.0          # per-subcarrier transmit power
    noise_w_per_hz: float = 1e-17

    def __init__(self, **data) -> None:
        super().__init__(**data)
        if self.power_w <= 0 or self.noise_w_per_hz <= 0:
            raise ValueError("power and noise density must be positive")


class RadioScene(BaseModel):
    """Static propagation geometry: wall planes, bounce coefficients,
    per-vehicle blockage penalty."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    wall_y: tuple[float, float] = (-7.5, 7.5)
    ground_coeff: float = -0.7
    wall_coeff: float = 0.6
    blockage_loss_db: float = 20.0
    enable_ground: bool = True
    enable_walls: bool = True


def _pulse(ofdm: OfdmSpec, t: np.ndarray) -> np.ndarray:
    x = t / ofdm.sample_interval
    if ofdm.pulse == "sinc":
        return np.sinc(x)
    beta = ofdm.rc_beta
    denom = 1.0 - (2.0 * beta * x) ** 2
    # L'Hopital value at the raised-cosine singularity |x| = 1/(2 beta).
    sing = np.isclose(denom, 0.0, atol=1e-12)
    safe = np.where(sing, 1.0, denom)
    out = np.sinc(x) * np.cos(np.pi * beta * x) / safe
    return np.where(sing, (np.pi / 4.0) * np.sinc(1.0 / (2.0 * beta)), out)


def _free_space_path(total_len: float, coeff: complex, ofdm: OfdmSpec, kind: PathKind) -> Path:
    lam = ofdm.wavelength
    amp = lam / (4.0 * math.pi * total_len)
    phase = -2.0 * math.pi * total_len / lam
    return Path(gain=coeff * amp * complex(math.cos(phase), math.sin(phase)),
                delay=total_len / SPEED_OF_LIGHT, kind=kind)


def enumerate_paths(
    tx: Vec3,
    rx: Vec3,
    boxes: Sequence[VehicleBox] | PackedBoxes,
    scene: RadioScene,
    ofdm: OfdmSpec,
) -> list[Path]:
    """Up to four paths for the tx-rx link in the current vehicle layout.

    LOS is always present; each vehicle cuboid crossing it costs
    `blockage_loss_db` of amplitude. Reflected paths (ground plane z=0 and the
    two vertical wall planes) use the image method and are dropped entirely
    when any leg of the bounce chain is blocked or the geometry is invalid
    (endpoint on or behind the mirror plane).
    """
    if (tx.x, tx.y, tx.z) == (rx.x, rx.y, rx.z):
        raise ValueError("tx and rx coincide")
    packed = boxes if isinstance(boxes, PackedBoxes) else PackedBoxes.from_boxes(boxes)
    p_tx = np.array([tx.x, tx.y, tx.z])
    p_rx = np.array([rx.x, rx.y, rx.z])

    # Candidate geometry first, then one batched blockage query over all legs.
    # Antenna endpoints keep the own-body exemption; bounce points do not.
    seg_a = [p_tx]
    seg_b = [p_rx]
    exempt_a = [True]
    exempt_b = [True]
    candidates: list[tuple[float, complex, PathKind, int, int]] = []  # (len, coeff, kind, leg0, leg1)

    def add_bounce(bounce: np.ndarray, total: float, coeff: float, kind: PathKind) -> None:
        i = len(seg_a)
        seg_a.extend([p_tx, bounce])
        seg_b.extend([bounce, p_rx])
        exempt_a.extend([True, False])
        exempt_b.extend([False, True])
        candidates.append((total, coeff, kind, i, i + 1))

    if scene.enable_ground and tx.z > 0.0 and rx.z > 0.0:
        total = math.dist((tx.x, tx.y, -tx.z), (rx.x, rx.y, rx.z))
        t = tx.z / (tx.z + rx.z)  # image-line parameter where z crosses 0
        bounce = p_tx + t * (p_rx - p_tx)
        bounce[2] = 0.0
        add_bounce(bounce, total, scene.ground_coeff, PathKind.GROUND_REFLECTION)

    if scene.enable_walls:
        for wall in scene.wall_y:
            st, sr = tx.y - wall, rx.y - wall
            if st * sr <= 0.0 or abs(st) < 1e-9:
                continue  # endpoints must sit strictly on the same side
            total = math.dist((tx.x, 2.0 * wall - tx.y, tx.z), (rx.x, rx.y, rx.z))
            t = abs(st) / (abs(st) + abs(sr))
            bounce = p_tx + t * (p_rx - p_tx)
            bounce[1] = wall
            add_bounce(bounce, total, scene.wall_coeff, PathKind.WALL_REFLECTION)

    counts = count_blockers_batch(np.array(seg_a), np.array(seg_b), packed,
                                  np.array(exempt_a), np.array(exempt_b))

    d = tx.distance_to(rx)
    n_blk = int(counts[0])
    los = _free_space_path(d, 1.0, ofdm, PathKind.LOS if n_blk == 0 else PathKind.BLOCKED_LOS)
    if n_blk > 0:
        atten = 10.0 ** (-scene.blockage_loss_db * n_blk / 20.0)
        los = Path(gain=los.gain * atten, delay=los.delay, kind=PathKind.BLOCKED_LOS)
    paths = [los]
    for total, coeff, kind, i, j in candidates:
        if counts[i] == 0 and counts[j] == 0:
            paths.append(_free_space_path(total, coeff, ofdm, kind))
    return paths


def align_first_arrival(paths: Sequence[Path]) -> list[Path]:
    """Re-reference delays to the earliest arrival (receiver timing sync).

    Keeps the strongest taps inside the short cyclic-prefix window so the
    response tracks the free-space law instead of the absolute flight time.
    """
    if not paths:
        return []
    t0 = min(p.delay for p in paths)
    return [Path(gain=p.gain, delay=p.delay - t0, kind=p.kind) for p in paths]


@dataclass(frozen=True)
class ChannelResponse:
    h: np.ndarray  # (K,) complex per-subcarrier response

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.h.real)) or not np.all(np.isfinite(self.h.imag)):
            raise ValueError("non-finite channel response")

    @property
    def power(self) -> np.ndarray:
        return np.abs(self.h) ** 2


def channel_response(paths: Sequence[Path], ofdm: OfdmSpec) -> ChannelResponse:
    """Per-subcarrier response H_k = sum_n sum_l a_l e^{-j2pi k n / K} d(n T_s - tau_l)."""
    k = np.arange(ofdm.subcarriers)
    if not paths:
        return ChannelResponse(h=np.zeros(ofdm.subcarriers, dtype=complex))
    n = np.arange(ofdm.cp_len)
    gains = np.array([p.gain for p in paths], dtype=complex)
    delays = np.array([p.delay for p in paths], dtype=float)
    taps = _pulse(ofdm, n[:, None] * ofdm.sample_interval - delays[None, :]) @ gains  # (N,)
    phase = np.exp(-2j * np.pi * np.outer(k, n) / ofdm.subcarriers)  # (K, N)
    return ChannelResponse(h=phase @ taps)


def capacity(resp: ChannelResponse, lb: LinkBudget, ofdm: OfdmSpec) -> float:
    """Shannon capacity in bits/s: B_k * sum_k log2(1 + P |H_k|^2 / (n0 B_k))."""
    snr = lb.power_w * resp.power / (lb.noise_w_per_hz * ofdm.subcarrier_hz)
    return float(ofdm.subcarrier_hz * np.sum(np.log2(1.0 + snr)))


def relay_capacity(r_bu: float, r_um: float) -> float:
    """Two-hop decode-and-forward bottleneck."""
    if r_bu < 0 or r_um < 0:
        raise ValueError("capacities must be nonnegative")
    return min(r_bu, r_um)


def system_capacity(a_m: int, r_bum: float, r_bm: float) -> float:
    """Selected-link capacity: relay when a_m=1, direct when a_m=0."""
    if a_m not in (0, 1):
        raise ValueError("a_m must be 0 or 1")
    return a_m * r_bum + (1 - a_m) * r_bm


def link_response(
    tx: Vec3,
    rx: Vec3,
    boxes: Sequence[VehicleBox] | PackedBoxes,
    scene: RadioScene,
    ofdm: OfdmSpec,
) -> ChannelResponse:
    """Full pipeline: enumerate paths, sync to first arrival, evaluate H."""
    return channel_response(align_first_arrival(enumerate_paths(tx, rx, boxes, scene, ofdm)), ofdm)


# --- channel cache file ------------------------------------------------------
# Layout (little-endian):
#   magic   "UVRCACH1"                       8 bytes
#   scenario hash                            32 bytes (sha256)
#   ofdm json length, ofdm json (utf-8)      u32 + bytes
#   n_links u32, then per link:
#     name length u16 + utf-8 name
#     n_cells u32, n_slots u32, K u32
#     complex128 array, C order (cell, slot, k)

_CACHE_MAGIC = b"UVRCACH1"


def scenario_hash(payload: bytes) -> bytes:
    return hashlib.sha256(payload).digest()


def write_channel_cache(
    path: str,
    scen_hash: bytes,
    ofdm: OfdmSpec,
    tables: dict[str, np.ndarray],
) -> None:
    """Persist per-(link, grid cell, slot) responses keyed to a scenario hash."""
    if len(scen_hash) != 32:
        raise ValueError("scenario hash must be 32 bytes")
    blob = bytearray()
    blob += _CACHE_MAGIC
    blob += scen_hash
    meta = ofdm.model_dump_json().encode("utf8")
    blob += struct.pack("<I", len(meta)) + meta
    blob += struct.pack("<I", len(tables))
    for name, arr in tables.items():
        a = np.ascontiguousarray(arr, dtype=np.complex128)
        if a.ndim != 3:
            raise ValueError("cache tables must be (cells, slots, K)")
        nm = name.encode("utf8")
        blob += struct.pack("<H", len(nm)) + nm
        blob += struct.pack("<III", a.shape[0], a.shape[1], a.shape[2])
        blob += a.tobytes(order="C")
    with open(path, "wb") as f:
        f.write(bytes(blob))


def read_channel_cache(path: str) -> tuple[bytes, OfdmSpec, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != _CACHE_MAGIC:
        raise ValueError("not a channel cache file")
    off = 8
    scen_hash = data[off:off + 32]
    off += 32
    (meta_len,) = struct.unpack_from("<I", data, off)
    off += 4
    ofdm = OfdmSpec.model_validate_json(data[off:off + meta_len].decode("utf8"))
    off += meta_len
    (n_links,) = struct.unpack_from("<I", data, off)
    off += 4
    tables: dict[str, np.ndarray] = {}
    for _ in range(n_links):
        (name_len,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off:off + name_len].decode("utf8")
        off += name_len
        cells, slots, k = struct.unpack_from("<III", data, off)
        off += 12
        count = cells * slots * k
        arr = np.frombuffer(data, dtype=np.complex128, count=count, offset=off).reshape(cells, slots, k)
        off += count * 16
        tables[name] = arr.copy()
    return scen_hash, ofdm, tables
