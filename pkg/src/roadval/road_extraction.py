"""Road-surface extraction from the low, ground-intersecting lidar rings.

For each ring the seed is where the predicted vehicle trajectory (a circle
through the footprint origin, tangent to +x) crosses the ring's ground
circle.  From the nearest measured point the ring is walked outward in
both azimuth directions until consecutive points form a segment steeper
than the smoothness threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import DomainError, NoSeedError
from .geometry import RigidTransform, quat_rotate
from .scan_processing import CorrectedScan

DEFAULT_RINGS = (0, 1, 2, 3, 4, 5)
DEFAULT_ANGLE_THRESHOLD_DEG = 10.0
DEFAULT_SEED_MATCH_MAX_M = 0.5
DEFAULT_ELEVATIONS_DEG = tuple(float(e) for e in range(-15, 16, 2))
DEFAULT_WHEELBASE = 1.9
DEFAULT_TRACK_WIDTH = 1.2


@dataclass(frozen=True)
class RingModel:
    """Ground circle of one beam: centre ``(center_offset, 0)``, radius ``radius``."""

    ring: int
    center_offset: float
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise DomainError(f"ring {self.ring}: radius must be positive")


@dataclass(frozen=True)
class TrajectoryArc:
    """Predicted path; ``radius`` is signed (positive turns left), ``None`` is straight."""

    radius: float | None = None

    @property
    def straight(self) -> bool:
        return self.radius is None

    @classmethod
    def straight_line(cls) -> "TrajectoryArc":
        return cls(None)


@dataclass(eq=False)
class RoadPointSet:
    timestamp: int
    points: np.ndarray
    ring: np.ndarray
    boundaries: dict[int, tuple[int, int]] = field(default_factory=dict)  # ring -> (left, right) indices
    seeds: dict[int, int] = field(default_factory=dict)
    diagnostics: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def empty(cls, timestamp: int, diagnostics: Sequence[str] = ()) -> "RoadPointSet":
        return cls(timestamp, np.zeros((0, 3)), np.zeros(0, dtype=np.int64), diagnostics=list(diagnostics))


# --------------------------------------------------------------------------- trajectory


def trajectory_arc(alpha: float, wheelbase: float = DEFAULT_WHEELBASE, track_width: float = DEFAULT_TRACK_WIDTH) -> TrajectoryArc:
    """Turning circle ``R = H / tan(alpha) - W / 2``, mirrored for negative ``alpha``."""
    if not (wheelbase > 0 and track_width > 0):
        raise DomainError("wheelbase and track width must be positive")
    if not abs(alpha) < math.pi / 2:
        raise DomainError(f"steering angle {alpha!r} outside (-pi/2, pi/2)")
    if alpha == 0.0:
        return TrajectoryArc(None)
    r = wheelbase / math.tan(abs(alpha)) - track_width / 2.0
    if r < track_width / 2.0:
        raise DomainError(f"steering angle {alpha!r} gives radius {r!r} below half the track width")
    return TrajectoryArc(math.copysign(r, alpha))


def steering_from_motion(
    motion: RigidTransform,
    wheelbase: float = DEFAULT_WHEELBASE,
    track_width: float = DEFAULT_TRACK_WIDTH,
    min_yaw: float = 1e-6,
) -> float:
    """Steering angle whose :func:`trajectory_arc` matches a planar motion.

    ``motion`` is the pose at the end of an interval seen from its start.
    The circle through both positions tangent to the start heading has
    radius ``chord / (2 sin(yaw / 2))``.
    """
    yaw = motion.rotation.yaw()
    chord = math.hypot(motion.translation[0], motion.translation[1])
    if abs(yaw) < min_yaw or chord < 1e-9:
        return 0.0
    rho = chord / (2.0 * math.sin(abs(yaw) / 2.0))
    return math.copysign(math.atan(wheelbase / (rho + track_width / 2.0)), yaw)


# --------------------------------------------------------------------------- seed


def _circle_intersections(c1, r1, c2, r2):
    dx, dy = c2[0] - c1[0], c2[1] - c1[1]
    dist = math.hypot(dx, dy)
    a = (r1 * r1 - r2 * r2 + dist * dist) / (2.0 * dist)
    h2 = (r1 - a) * (r1 + a)
    h = math.sqrt(max(h2, 0.0))
    ux, uy = dx / dist, dy / dist
    mx, my = c1[0] + a * ux, c1[1] + a * uy
    pts = [(mx - h * uy, my + h * ux), (mx + h * uy, my - h * ux)]
    return [_polish(p, c1, r1, c2, r2) for p in pts]


def _polish(p, c1, r1, c2, r2, iters: int = 2):
    """Newton steps on both circle equations."""
    x, y = p
    for _ in range(iters):
        ax, ay = x - c1[0], y - c1[1]
        bx, by = x - c2[0], y - c2[1]
        f1 = ax * ax + ay * ay - r1 * r1
        f2 = bx * bx + by * by - r2 * r2
        det = 2.0 * (ax * by - ay * bx)
        if abs(det) < 1e-12 * (r1 * r2 + 1.0):
            break
        x -= (by * f1 - ay * f2) / det
        y -= (ax * f2 - bx * f1) / det
    return (x, y)


def seed_intersection(arc: TrajectoryArc, ring: RingModel) -> np.ndarray:
    """First crossing of the trajectory with the ring's ground circle (``z = 0``)."""
    d, rn = ring.center_offset, ring.radius
    if arc.straight:
        if rn <= 0:
            raise NoSeedError(f"ring {ring.ring}: no forward crossing")
        return np.array([d + rn, 0.0, 0.0])
    R = arc.radius
    rr = abs(R)
    D = math.hypot(R, d)
    if not (abs(D - rr) < rn < D + rr):
        raise NoSeedError(f"ring {ring.ring}: trajectory circle (R={R:.3f}) does not cross ring circle")
    pts = _circle_intersections((0.0, R), rr, (d, 0.0), rn)

    def travel(p):
        ang = math.atan2(p[1] - R, p[0])
        return (ang + math.pi / 2) % (2 * math.pi) if R > 0 else (math.pi / 2 - ang) % (2 * math.pi)

    ahead = [p for p in pts if p[0] > 0.0]
    if not ahead:
        raise NoSeedError(f"ring {ring.ring}: no crossing ahead of the vehicle")
    x, y = min(ahead, key=travel)
    return np.array([x, y, 0.0])


# --------------------------------------------------------------------------- walking


def smoothness_walk(ring_points: np.ndarray, seed_index: int, angle_threshold: float, trim: bool = False) -> tuple[int, int]:
    """Boundary indices ``(left, right)`` around ``seed_index``.

    Points are azimuth-ordered, so ``left >= seed_index >= right``.  A pair
    is rough when ``atan2(|dz|, hypot(dx, dy))`` exceeds the threshold; the
    walk stops before the first rough pair on each side.  With ``trim`` the
    last point before a rough pair is dropped as well: it is the foot of
    the obstacle and usually already sits on the curb face.  The seed is
    always kept.
    """
    n = len(ring_points)
    if not 0 <= seed_index < n:
        raise DomainError(f"seed index {seed_index} outside ring of {n} points")
    hi, lo = _kernels.smoothness_walk(ring_points, seed_index, angle_threshold)
    hi, lo = int(hi), int(lo)
    if trim:
        if hi + 1 < n and hi > seed_index:
            hi -= 1
        if lo > 0 and lo < seed_index:
            lo += 1
    return hi, lo


def extract_road(
    scan: CorrectedScan,
    arc: TrajectoryArc,
    rings: Sequence[RingModel],
    angle_threshold: float = math.radians(DEFAULT_ANGLE_THRESHOLD_DEG),
    seed_match_max: float = DEFAULT_SEED_MATCH_MAX_M,
    trim: bool = False,
) -> RoadPointSet:
    slices = scan.ring_slices()
    diags: list[str] = []
    chunks, ring_ids = [], []
    boundaries: dict[int, tuple[int, int]] = {}
    seeds: dict[int, int] = {}
    for model in rings:
        s = slices.get(model.ring)
        if s is None:
            diags.append(f"ring {model.ring}: no points")
            continue
        try:
            seed = seed_intersection(arc, model)
        except NoSeedError as exc:
            diags.append(exc.message)
            continue
        pts = scan.xyz[s]
        az = np.arctan2(pts[:, 1], pts[:, 0] - model.center_offset)
        seed_az = math.atan2(seed[1], seed[0] - model.center_offset)
        gap = np.abs((az - seed_az + np.pi) % (2 * np.pi) - np.pi)
        idx = int(np.argmin(gap))
        miss = float(np.linalg.norm(pts[idx] - seed))
        if miss > seed_match_max:
            diags.append(f"ring {model.ring}: nearest point {miss:.3f} m from seed")
            continue
        left, right = smoothness_walk(pts, idx, angle_threshold, trim)
        boundaries[model.ring] = (left, right)
        seeds[model.ring] = idx
        chunks.append(pts[right : left + 1])
        ring_ids.append(np.full(left - right + 1, model.ring, dtype=np.int64))
    if not chunks:
        if not diags:
            diags.append("no rings configured")
        return RoadPointSet.empty(scan.timestamp, diags)
    return RoadPointSet(scan.timestamp, np.concatenate(chunks), np.concatenate(ring_ids), boundaries, seeds, diags)


# --------------------------------------------------------------------------- ring models


def fit_circle(xy: np.ndarray) -> tuple[float, float, float]:
    """Algebraic least-squares circle ``(cx, cy, r)``."""
    x, y = xy[:, 0], xy[:, 1]
    A = np.column_stack((2 * x, 2 * y, np.ones_like(x)))
    b = x * x + y * y
    (cx, cy, c), *_ = np.linalg.lstsq(A, b, rcond=None)
    return float(cx), float(cy), float(math.sqrt(c + cx * cx + cy * cy))


def ring_models_from_mount(
    mount: RigidTransform,
    elevations_deg: Sequence[float] = DEFAULT_ELEVATIONS_DEG,
    rings: Sequence[int] = DEFAULT_RINGS,
    fit_half_angle_deg: float = 45.0,
) -> list[RingModel]:
    """Fit a ground circle to each beam cone's forward intersection with ``z = 0``."""
    phi = np.radians(np.arange(-fit_half_angle_deg, fit_half_angle_deg + 1e-9, 1.0))
    out = []
    for r in rings:
        e = math.radians(elevations_deg[r])
        dirs = np.column_stack((math.cos(e) * np.cos(phi), math.cos(e) * np.sin(phi), np.full_like(phi, math.sin(e))))
        dv = quat_rotate(mount.rotation, dirs)
        oz = mount.translation[2]
        down = dv[:, 2] < -1e-9
        if down.sum() < 3:
            continue
        t = -oz / dv[down, 2]
        hits = mount.translation[None, :2] + t[:, None] * dv[down, :2]
        cx, _, rad = fit_circle(hits)
        out.append(RingModel(r, cx, rad))
    return out


def parse_ring_models(text: str) -> list[RingModel]:
    """``"ring:d:r;ring:d:r"`` to ring models."""
    out = []
    for part in text.split(";"):
        if not part.strip():
            continue
        ring, d, r = part.split(":")
        out.append(RingModel(int(ring), float(d), float(r)))
    return out
