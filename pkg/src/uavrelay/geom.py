"""Vector/cuboid primitives, segment-cuboid blockage tests, pinhole projection.

Vehicles are oriented cuboids (yaw about z only). Link blockage is a
segment-against-cuboid intersection; camera views are ideal pinholes rigidly
mounted on the mobile station. Everything here is a pure function over
immutable values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

_EPS = 1e-12


class VType(str, Enum):
    CAR = "car"
    VAN = "van"
    BUS = "bus"
    MS = "ms"


@dataclass(frozen=True)
class Vec3:
    x: float
    y: float
    z: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.z)):
            raise ValueError("Vec3 components must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    def distance_to(self, other: "Vec3") -> float:
        return math.dist((self.x, self.y, self.z), (other.x, other.y, other.z))


def wrap_angle(a: float) -> float:
    """Wrap to [-pi, pi)."""
    return (a + math.pi) % (2.0 * math.pi) - math.pi


@dataclass(frozen=True)
class VehicleBox:
    """Oriented cuboid: `center` is the volumetric center, yaw about +z."""

    id: int
    vtype: VType
    center: Vec3
    yaw: float
    length: float
    width: float
    height: float
    speed: float = 0.0

    def __post_init__(self) -> None:
        if self.length <= 0 or self.width <= 0 or self.height <= 0:
            raise ValueError("box dimensions must be positive")
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    @property
    def roof_z(self) -> float:
        return self.center.z + self.height / 2.0

    def to_local(self, p: Vec3) -> np.ndarray:
        """World point -> box frame (inverse yaw about z, origin at center)."""
        c, s = math.cos(-self.yaw), math.sin(-self.yaw)
        dx, dy, dz = p.x - self.center.x, p.y - self.center.y, p.z - self.center.z
        return np.array([c * dx - s * dy, s * dx + c * dy, dz])

    def contains(self, p: Vec3, eps: float = 0.0) -> bool:
        """Closed-cuboid membership (boundary counts)."""
        local = self.to_local(p)
        half = np.array([self.length, self.width, self.height]) / 2.0
        return bool(np.all(np.abs(local) <= half + eps))


@dataclass(frozen=True)
class Segment3:
    a: Vec3
    b: Vec3

    def __post_init__(self) -> None:
        if (self.a.x, self.a.y, self.a.z) == (self.b.x, self.b.y, self.b.z):
            raise ValueError("degenerate segment")


def segment_intersects_box(seg: Segment3, box: VehicleBox) -> bool:
    """True iff the segment meets the closed cuboid (boundary contact counts).

    The segment is transformed into the box frame and clipped against the
    three axis slabs; the cuboid is hit iff the surviving parameter interval
    inside [0, 1] is nonempty.
    """
    p0 = box.to_local(seg.a)
    p1 = box.to_local(seg.b)
    d = p1 - p0
    half = np.array([box.length, box.width, box.height]) / 2.0

    t_lo, t_hi = 0.0, 1.0
    for i in range(3):
        if abs(d[i]) < _EPS:
            if abs(p0[i]) > half[i]:
                return False
            continue
        inv = 1.0 / d[i]
        t0 = (-half[i] - p0[i]) * inv
        t1 = (half[i] - p0[i]) * inv
        if t0 > t1:
            t0, t1 = t1, t0
        t_lo = max(t_lo, t0)
        t_hi = min(t_hi, t1)
        if t_lo > t_hi:
            return False
    return True


@dataclass
class PackedBoxes:
    """Struct-of-arrays cuboid view for vectorized blockage tests."""

    ids: np.ndarray          # (n,) int
    center: np.ndarray       # (n, 3)
    cos_yaw: np.ndarray      # (n,)
    sin_yaw: np.ndarray      # (n,)
    half: np.ndarray         # (n, 3) half-extents

    @classmethod
    def from_boxes(cls, boxes: Sequence[VehicleBox]) -> "PackedBoxes":
        n = len(boxes)
        ids = np.fromiter((b.id for b in boxes), dtype=np.int64, count=n)
        center = np.array([[b.center.x, b.center.y, b.center.z] for b in boxes], dtype=float)
        yaw = np.fromiter((b.yaw for b in boxes), dtype=float, count=n)
        half = np.array([[b.length, b.width, b.height] for b in boxes], dtype=float) / 2.0
        if n == 0:
            center = center.reshape(0, 3)
            half = half.reshape(0, 3)
        return cls(ids=ids, center=center, cos_yaw=np.cos(yaw), sin_yaw=np.sin(yaw), half=half)

    @property
    def size(self) -> int:
        return len(self.ids)

    def _to_local_batch(self, p: np.ndarray) -> np.ndarray:
        """(S, 3) world points -> (S, n, 3) box-frame coordinates."""
        d = p[:, None, :] - self.center[None, :, :]
        out = np.empty(d.shape)
        out[..., 0] = self.cos_yaw * d[..., 0] + self.sin_yaw * d[..., 1]
        out[..., 1] = -self.sin_yaw * d[..., 0] + self.cos_yaw * d[..., 1]
        out[..., 2] = d[..., 2]
        return out

    def contains_mask(self, p: Vec3, eps: float = 0.0) -> np.ndarray:
        local = self._to_local_batch(np.array([[p.x, p.y, p.z]]))[0]
        return np.all(np.abs(local) <= self.half + eps, axis=1)

    def hit_mask_batch(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Slab test of S segments against every box: a, b are (S, 3); (S, n) bool."""
        if self.size == 0:
            return np.zeros((a.shape[0], 0), dtype=bool)
        p0 = self._to_local_batch(a)
        p1 = self._to_local_batch(b)
        d = p1 - p0

        parallel = np.abs(d) < _EPS
        safe_d = np.where(parallel, 1.0, d)
        half = self.half[None, :, :]
        t0 = (-half - p0) / safe_d
        t1 = (half - p0) / safe_d
        lo = np.minimum(t0, t1)
        hi = np.maximum(t0, t1)
        # Parallel axes constrain nothing if inside the slab, reject if outside.
        inside = np.abs(p0) <= half
        lo = np.where(parallel, np.where(inside, 0.0, np.inf), lo)
        hi = np.where(parallel, np.where(inside, 1.0, -np.inf), hi)
        t_lo = np.maximum(lo.max(axis=2), 0.0)
        t_hi = np.minimum(hi.min(axis=2), 1.0)
        return t_lo <= t_hi

    def hit_mask(self, a: Vec3, b: Vec3) -> np.ndarray:
        return self.hit_mask_batch(np.array([[a.x, a.y, a.z]]), np.array([[b.x, b.y, b.z]]))[0]


def count_blockers_batch(a: np.ndarray, b: np.ndarray, packed: PackedBoxes,
                         exempt_a: Optional[np.ndarray] = None,
                         exempt_b: Optional[np.ndarray] = None) -> np.ndarray:
    """Per-segment count of cuboids crossed.

    A cuboid containing an endpoint is exempt for that segment (own-body
    rule for mounted antennas) unless the corresponding flag disables the
    exemption, as for reflection bounce points lying on a vehicle surface.
    """
    if packed.size == 0:
        return np.zeros(a.shape[0], dtype=np.int64)
    hit = packed.hit_mask_batch(a, b)
    pts = np.concatenate([a, b], axis=0)
    local = packed._to_local_batch(pts)
    inside = np.all(np.abs(local) <= packed.half[None, :, :], axis=2)
    s = a.shape[0]
    exempt_a = np.ones(s, dtype=bool) if exempt_a is None else exempt_a
    exempt_b = np.ones(s, dtype=bool) if exempt_b is None else exempt_b
    endpoint = (inside[:s] & exempt_a[:, None]) | (inside[s:] & exempt_b[:, None])
    return np.sum(hit & ~endpoint, axis=1)


def count_blockers(a: Vec3, b: Vec3, packed: PackedBoxes) -> int:
    """Number of cuboids the open link a-b passes through.

    Cuboids containing either endpoint are excluded: an antenna mounted on a
    vehicle is not blocked by its own body.
    """
    if packed.size == 0:
        return 0
    return int(count_blockers_batch(
        np.array([[a.x, a.y, a.z]]), np.array([[b.x, b.y, b.z]]), packed)[0])


def is_los(tx: Vec3, rx: Vec3, boxes: Sequence[VehicleBox]) -> bool:
    """Line-of-sight check: no cuboid (other than one holding an endpoint)
    intersects the tx-rx segment."""
    if (tx.x, tx.y, tx.z) == (rx.x, rx.y, rx.z):
        raise ValueError("tx and rx coincide")
    packed = boxes if isinstance(boxes, PackedBoxes) else PackedBoxes.from_boxes(boxes)
    return count_blockers(tx, rx, packed) == 0


# --- pinhole cameras -------------------------------------------------------

class CameraView(str, Enum):
    FRONT = "front"
    BACK = "back"
    LEFT = "left"
    RIGHT = "right"


CAMERA_ORDER = (CameraView.FRONT, CameraView.BACK, CameraView.LEFT, CameraView.RIGHT)

_VIEW_YAW_OFFSET = {
    CameraView.FRONT: 0.0,
    CameraView.BACK: math.pi,
    CameraView.LEFT: math.pi / 2.0,
    CameraView.RIGHT: -math.pi / 2.0,
}


@dataclass(frozen=True)
class Intrinsics:
    """Square-pixel pinhole; principal point at the image center."""

    width: int = 64
    height: int = 64
    hfov_deg: float = 90.0

    @property
    def fx(self) -> float:
        return (self.width / 2.0) / math.tan(math.radians(self.hfov_deg) / 2.0)

    @property
    def fy(self) -> float:
        return self.fx

    @property
    def cx(self) -> float:
        return self.width / 2.0

    @property
    def cy(self) -> float:
        return self.height / 2.0


@dataclass(frozen=True)
class CameraPose:
    """Horizontal-axis camera: position plus yaw of the optical axis."""

    position: Vec3
    yaw: float

    def basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(right, down, forward) unit vectors in world coordinates."""
        f = np.array([math.cos(self.yaw), math.sin(self.yaw), 0.0])
        r = np.array([math.sin(self.yaw), -math.cos(self.yaw), 0.0])
        d = np.array([0.0, 0.0, -1.0])
        return r, d, f


def camera_rig(ms_center: Vec3, ms_yaw: float, roof_z: float) -> dict[CameraView, CameraPose]:
    """Four cameras at the MS roof center, one per side, axes horizontal."""
    pos = Vec3(ms_center.x, ms_center.y, roof_z)
    return {
        view: CameraPose(position=pos, yaw=wrap_angle(ms_yaw + off))
        for view, off in _VIEW_YAW_OFFSET.items()
    }


_CORNER_SIGNS = np.array(
    [[-1, -1, -1], [1, -1, -1], [1, 1, -1], [-1, 1, -1],
     [-1, -1, 1], [1, -1, 1], [1, 1, 1], [-1, 1, 1]], dtype=float)


def corners_from_packed(packed: PackedBoxes) -> np.ndarray:
    """World-space cuboid corners for every packed box, (n, 8, 3)."""
    local = _CORNER_SIGNS[None, :, :] * packed.half[:, None, :]  # (n, 8, 3)
    c = packed.cos_yaw[:, None]
    s = packed.sin_yaw[:, None]
    out = np.empty_like(local)
    out[..., 0] = c * local[..., 0] - s * local[..., 1]
    out[..., 1] = s * local[..., 0] + c * local[..., 1]
    out[..., 2] = local[..., 2]
    return out + packed.center[:, None, :]


def _box_corners(box: VehicleBox) -> np.ndarray:
    return corners_from_packed(PackedBoxes.from_boxes([box]))[0]

# Cuboid edges as corner-index pairs, used to clip boxes straddling the
# image plane.
_BOX_EDGES = (
    (0, 1), (1, 2), (2, 3), (3, 0),
    (4, 5), (5, 6), (6, 7), (7, 4),
    (0, 4), (1, 5), (2, 6), (3, 7),
)

_NEAR = 1e-6


def _bbox_from_camera_points(pts: np.ndarray, intr: Intrinsics
                             ) -> Optional[tuple[float, float, float, float]]:
    """pts: (m, 3) camera-frame points with z >= near; clipped pixel bbox."""
    zc = np.maximum(pts[:, 2], _NEAR)
    u = intr.cx + intr.fx * pts[:, 0] / zc
    v = intr.cy + intr.fy * pts[:, 1] / zc
    u0, u1 = max(float(u.min()), 0.0), min(float(u.max()), float(intr.width))
    v0, v1 = max(float(v.min()), 0.0), min(float(v.max()), float(intr.height))
    if u1 - u0 <= 0.0 or v1 - v0 <= 0.0:
        return None
    return (u0, v0, u1, v1)


def _clip_straddling(pts: np.ndarray) -> np.ndarray:
    """Corners in front of the near plane plus edge/near-plane intersections."""
    z = pts[:, 2]
    keep = [pts[z >= _NEAR]]
    for i, j in _BOX_EDGES:
        zi, zj = z[i], z[j]
        if (zi < _NEAR) != (zj < _NEAR):
            t = (_NEAR - zi) / (zj - zi)
            keep.append((pts[i] + t * (pts[j] - pts[i]))[None, :])
    return np.concatenate(keep, axis=0)


def project_corners_to_camera(
    corners: np.ndarray, cam: CameraPose, intr: Intrinsics
) -> list[Optional[tuple[float, float, float, float]]]:
    """Pixel bboxes for many cuboids at once; corners is (n, 8, 3) world space.

    Fully-behind boxes give None; boxes straddling the near plane fall back to
    per-edge clipping.
    """
    r, d, f = cam.basis()
    rel = corners - cam.position.as_array()[None, None, :]
    pts = rel @ np.stack([r, d, f], axis=1)  # (n, 8, 3) camera frame
    z = pts[..., 2]
    front = z >= _NEAR
    n_front = front.sum(axis=1)

    out: list[Optional[tuple[float, float, float, float]]] = [None] * corners.shape[0]
    all_front = np.nonzero(n_front == 8)[0]
    if all_front.size:
        sub = pts[all_front]
        zc = np.maximum(sub[..., 2], _NEAR)
        u = intr.cx + intr.fx * sub[..., 0] / zc
        v = intr.cy + intr.fy * sub[..., 1] / zc
        u0 = np.maximum(u.min(axis=1), 0.0)
        u1 = np.minimum(u.max(axis=1), float(intr.width))
        v0 = np.maximum(v.min(axis=1), 0.0)
        v1 = np.minimum(v.max(axis=1), float(intr.height))
        ok = (u1 - u0 > 0.0) & (v1 - v0 > 0.0)
        for idx, i in enumerate(all_front):
            if ok[idx]:
                out[i] = (float(u0[idx]), float(v0[idx]), float(u1[idx]), float(v1[idx]))
    for i in np.nonzero((n_front > 0) & (n_front < 8))[0]:
        out[i] = _bbox_from_camera_points(_clip_straddling(pts[i]), intr)
    return out


def project_to_camera(
    box: VehicleBox, cam: CameraPose, intr: Intrinsics
) -> Optional[tuple[float, float, float, float]]:
    """Axis-aligned pixel bbox (u0, v0, u1, v1) of the projected cuboid.

    Corners behind the image plane are replaced by the intersections of the
    cuboid's edges with the near plane. Returns None when nothing lies in
    front of the camera or the bbox clips to an empty rectangle.
    """
    return project_corners_to_camera(_box_corners(box)[None, :, :], cam, intr)[0]
