"""Synthesized detections and the two observation encodings.

The onboard detector is replaced by simulator ground truth with an optional
noise model. Two map encodings are produced from it:

* a stacked 4-view size map: inside each detection's pixel bbox the three
  color channels are overwritten with the negated, max-normalized vehicle
  length/width/height (background stays 0, nearer vehicles win overlaps);
* a top-down Gaussian map over the road plane, one channel per actor class,
  each vehicle contributing an axis-aligned 2D Gaussian whose sigmas are its
  length and width.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path as FsPath
from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from .geom import (
    CAMERA_ORDER,
    CameraView,
    Intrinsics,
    PackedBoxes,
    Vec3,
    VehicleBox,
    VType,
    camera_rig,
    corners_from_packed,
    project_corners_to_camera,
)
from .traffic import TrafficState

G_CHANNELS = ("ms", "car", "van", "bus")


class SizeBounds(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    length_max: float = 11.08
    width_max: float = 3.25
    height_max: float = 3.33

    @model_validator(mode="after")
    def _check(self) -> "SizeBounds":
        if min(self.length_max, self.width_max, self.height_max) <= 0:
            raise ValueError("size bounds must be positive")
        return self


class GridSpec(BaseModel):
    """Top-down map lattice over the road plane; row 0 is the southern edge."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    rows: int = 15
    cols: int = 85
    pitch: float = 1.0
    origin_x: float = 0.0
    origin_y: float = -7.5

    @model_validator(mode="after")
    def _check(self) -> "GridSpec":
        if self.rows < 1 or self.cols < 1 or self.pitch <= 0:
            raise ValueError("invalid grid")
        return self

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        xs = self.origin_x + (np.arange(self.cols) + 0.5) * self.pitch
        ys = self.origin_y + (np.arange(self.rows) + 0.5) * self.pitch
        return xs, ys


class NoiseModel(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    center_sigma: float = 0.0
    dims_sigma: float = 0.0
    miss_prob: float = 0.0

    @property
    def active(self) -> bool:
        return self.center_sigma > 0 or self.dims_sigma > 0 or self.miss_prob > 0


@dataclass(frozen=True)
class Detection:
    vtype: VType
    center_ms: tuple[float, float, float]   # MS frame (x fwd, y left, z up)
    yaw: float                              # relative to MS heading
    dims: tuple[float, float, float]        # (l, w, h)
    bboxes: dict[CameraView, tuple[float, float, float, float]]
    depths: dict[CameraView, float]         # center depth per view, for z-order

    def __post_init__(self) -> None:
        if min(self.dims) <= 0:
            raise ValueError("detection dims must be positive")


def _ms_frame(ms: VehicleBox, p: Vec3) -> tuple[float, float, float]:
    c, s = math.cos(-ms.yaw), math.sin(-ms.yaw)
    dx, dy = p.x - ms.center.x, p.y - ms.center.y
    return (c * dx - s * dy, s * dx + c * dy, p.z - ms.center.z)


def synthesize_detections(
    state: TrafficState,
    intr: Intrinsics,
    noise: Optional[NoiseModel] = None,
    rng: Optional[np.random.Generator] = None,
) -> list[Detection]:
    """Ground-truth 3D boxes for every vehicle visible in at least one view.

    Optional zero-mean Gaussian noise perturbs centers and dims, and each
    vehicle is dropped independently with `miss_prob`.
    """
    noise = noise or NoiseModel()
    if noise.active and rng is None:
        raise ValueError("noise model requires an rng")
    ms = state.ms
    rig = camera_rig(ms.center, ms.yaw, ms.roof_z)

    boxes: list[VehicleBox] = []
    for v in state.vehicles:
        if noise.miss_prob > 0 and rng.random() < noise.miss_prob:
            continue
        if noise.active:
            dl, dw, dh = (rng.normal(0.0, noise.dims_sigma, size=3) if noise.dims_sigma > 0
                          else np.zeros(3))
            cx, cy, cz = (rng.normal(0.0, noise.center_sigma, size=3) if noise.center_sigma > 0
                          else np.zeros(3))
            v = VehicleBox(
                id=v.id, vtype=v.vtype,
                center=Vec3(v.center.x + cx, v.center.y + cy, v.center.z + cz),
                yaw=v.yaw,
                length=max(v.length + dl, 0.3),
                width=max(v.width + dw, 0.3),
                height=max(v.height + dh, 0.3),
                speed=v.speed,
            )
        boxes.append(v)
    if not boxes:
        return []

    packed = PackedBoxes.from_boxes(boxes)
    corners = corners_from_packed(packed)
    per_view = {}
    depth_per_view = {}
    for view in CAMERA_ORDER:
        cam = rig[view]
        per_view[view] = project_corners_to_camera(corners, cam, intr)
        _, _, fwd = cam.basis()
        depth_per_view[view] = (packed.center - cam.position.as_array()[None, :]) @ fwd

    dets: list[Detection] = []
    for i, box in enumerate(boxes):
        bboxes = {v: per_view[v][i] for v in CAMERA_ORDER if per_view[v][i] is not None}
        if not bboxes:
            continue
        depths = {v: float(depth_per_view[v][i]) for v in bboxes}
        dets.append(Detection(
            vtype=box.vtype,
            center_ms=_ms_frame(ms, box.center),
            yaw=box.yaw - ms.yaw,
            dims=(box.length, box.width, box.height),
            bboxes=bboxes,
            depths=depths,
        ))
    return dets


def encode_size_channels(
    dets: Sequence[Detection],
    bounds: SizeBounds,
    intr: Intrinsics,
    dtype=np.float32,
) -> np.ndarray:
    """12-channel stacked size map, (4 views x 3 size channels, H, W).

    Pixels inside a detection's bbox take (-255 l/L_max, -255 w/W_max,
    -255 h/H_max); overlaps resolve by depth, painter-style (far first).
    """
    f = np.zeros((12, intr.height, intr.width), dtype=dtype)
    for ci, view in enumerate(CAMERA_ORDER):
        with_view = [d for d in dets if view in d.bboxes]
        for det in sorted(with_view, key=lambda d: -d.depths[view]):
            l, w, h = det.dims
            if l > bounds.length_max + 1e-9 or w > bounds.width_max + 1e-9 or h > bounds.height_max + 1e-9:
                raise ValueError("detection dims exceed configured size bounds")
            u0, v0, u1, v1 = det.bboxes[view]
            c0, c1 = int(math.floor(u0)), int(math.ceil(u1))
            r0, r1 = int(math.floor(v0)), int(math.ceil(v1))
            c0, c1 = max(c0, 0), min(c1, intr.width)
            r0, r1 = max(r0, 0), min(r1, intr.height)
            if c1 <= c0 or r1 <= r0:
                continue
            f[3 * ci + 0, r0:r1, c0:c1] = -255.0 * l / bounds.length_max
            f[3 * ci + 1, r0:r1, c0:c1] = -255.0 * w / bounds.width_max
            f[3 * ci + 2, r0:r1, c0:c1] = -255.0 * h / bounds.height_max
    return f


def gaussian_map_from_rows(channels: np.ndarray, xs_c: np.ndarray, ys_c: np.ndarray,
                           lengths: np.ndarray, widths: np.ndarray, grid: GridSpec,
                           dtype=np.float32) -> np.ndarray:
    """Gaussian map from parallel per-actor arrays (channel index, x, y, l, w)."""
    xs, ys = grid.cell_centers()
    g = np.zeros((len(G_CHANNELS), grid.rows, grid.cols), dtype=np.float64)
    norm = math.sqrt(2.0 * math.pi)
    for ch, cx, cy, s1, s2 in zip(channels, xs_c, ys_c, lengths, widths):
        fx = np.exp(-0.5 * ((xs - cx) / s1) ** 2) / (norm * s1)
        fy = np.exp(-0.5 * ((ys - cy) / s2) ** 2) / (norm * s2)
        g[int(ch)] += np.outer(fy, fx)
    return g.astype(dtype)


def _actor_rows(state: TrafficState) -> tuple[np.ndarray, ...]:
    boxes = state.all_boxes()
    ch = np.array([0 if b.vtype == VType.MS else G_CHANNELS.index(b.vtype.value)
                   for b in boxes])
    xs = np.array([b.center.x for b in boxes])
    ys = np.array([b.center.y for b in boxes])
    ls = np.array([b.length for b in boxes])
    ws = np.array([b.width for b in boxes])
    return ch, xs, ys, ls, ws


def gaussian_map(state: TrafficState, grid: GridSpec, dtype=np.float32) -> np.ndarray:
    """4-channel top-down map (ms, cars, vans, buses), shape (4, rows, cols).

    Each actor adds an axis-aligned bivariate Gaussian evaluated at cell
    centers, sigma_x = its length, sigma_y = its width (orientation ignored;
    lane traffic is axis-aligned).
    """
    return gaussian_map_from_rows(*_actor_rows(state), grid, dtype=dtype)


def occupancy_map_from_rows(is_ms: np.ndarray, xs_c: np.ndarray, ys_c: np.ndarray,
                            grid: GridSpec, dtype=np.float32) -> np.ndarray:
    occ = np.zeros((2, grid.rows, grid.cols), dtype=dtype)
    cols = np.floor((xs_c - grid.origin_x) / grid.pitch).astype(int)
    rows = np.floor((ys_c - grid.origin_y) / grid.pitch).astype(int)
    ok = (rows >= 0) & (rows < grid.rows) & (cols >= 0) & (cols < grid.cols)
    occ[np.where(is_ms, 0, 1)[ok], rows[ok], cols[ok]] = 1.0
    return occ


def occupancy_map(state: TrafficState, grid: GridSpec, dtype=np.float32) -> np.ndarray:
    """Binary center-occupancy map, (2, rows, cols): channel 0 MS, channel 1
    every other vehicle. No size or type information."""
    ch, xs, ys, _, _ = _actor_rows(state)
    return occupancy_map_from_rows(ch == 0, xs, ys, grid, dtype=dtype)


# --- debug export ------------------------------------------------------------

def dump_map_csv(arr: np.ndarray, out_dir: str, stem: str) -> list[str]:
    """One CSV per channel of a (C, H, W) map."""
    out = FsPath(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for c in range(arr.shape[0]):
        p = out / f"{stem}_ch{c}.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            for row in arr[c]:
                w.writerow([repr(float(v)) for v in row])
        written.append(str(p))
    return written


def dump_map_pgm(arr: np.ndarray, out_dir: str, stem: str) -> list[str]:
    """One binary PGM (portable graymap) per channel, min-max scaled to 0..255."""
    out = FsPath(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for c in range(arr.shape[0]):
        ch = np.asarray(arr[c], dtype=np.float64)
        lo, hi = float(ch.min()), float(ch.max())
        scale = 255.0 / (hi - lo) if hi > lo else 0.0
        img = ((ch - lo) * scale).round().astype(np.uint8)
        p = out / f"{stem}_ch{c}.pgm"
        with open(p, "wb") as fh:
            fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
            fh.write(img.tobytes())
        written.append(str(p))
    return written
