"""Synthetic datasets with exactly known ground truth.

The scene is piecewise planar: a road corridor of half-width ``W/2`` around
a straight or circular centreline, vertical curb risers, a raised sidewalk
beyond them, and optional axis-aligned boxes.  The road surface may carry
a small sinusoidal roughness.  Lidar rays are cast per beam and azimuth at
the vehicle pose of their firing instant, so scans carry real motion
distortion; masks are rendered by casting one ray per pixel corner and
centre from the camera at the scan start instant.

World frame: the vehicle starts at the origin heading +x; ``z`` is up.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .dataset_io import (
    CONDITIONS,
    DEFAULT_CLASSES,
    DEFAULT_ROAD_ID,
    Calibration,
    ClassMap,
    DatasetManifest,
    FrameEntry,
    GpsFix,
    LabelMask,
    LidarScan,
    Pose,
    scan_order,
    write_calibration,
    write_frames,
    write_gps_track,
    write_manifest,
    write_mask,
    write_pose_track,
    write_scan,
)
from .errors import DomainError, SchemaError
from .geometry import CameraModel, Quaternion, RigidTransform, compose, inverse, quat_rotate, rot_y, rot_z
from .road_extraction import DEFAULT_ELEVATIONS_DEG

MISS, ROAD, SIDEWALK, RISER, OBSTACLE = 0, 1, 2, 3, 4
SIDEWALK_ID = 4
OBSTACLE_ID = 8
SKY_ID = 0
EARTH_RADIUS = 6378137.0
GPS_ORIGIN = (-33.888, 151.187)


@dataclass
class Box:
    center: tuple[float, float, float]
    dims: tuple[float, float, float]


@dataclass
class SceneSpec:
    half_width: float = 3.0
    curb_height: float = 0.12
    roughness: float = 0.0
    roughness_wavelength: float = 1.5
    curve_radius: float | None = None  # signed, positive bends left
    obstacles: list[Box] = field(default_factory=list)

    def __post_init__(self):
        if not self.half_width > 0:
            raise DomainError("road half-width must be positive")
        if self.curb_height < 0:
            raise DomainError("curb height must be non-negative")
        if self.curve_radius is not None and abs(self.curve_radius) <= self.half_width:
            raise DomainError("curve radius must exceed the road half-width")
        self.obstacles = [b if isinstance(b, Box) else Box(tuple(b["center"]), tuple(b["dims"])) for b in self.obstacles]


@dataclass
class SensorSpec:
    lidar_height: float = 1.6
    lidar_forward: float = 1.2
    lidar_tilt_deg: float = 7.0
    beam_elevations_deg: tuple[float, ...] = DEFAULT_ELEVATIONS_DEG
    azimuth_step_deg: float = 0.4
    min_range: float = 0.5
    max_range: float = 100.0
    range_jitter: float = 0.0
    camera_forward: float = 2.4
    camera_height: float = 1.4
    camera_tilt_deg: float = 15.0
    hfov_deg: float = 100.0
    vfov_deg: float = 60.0
    image_width: int = 1928
    image_height: int = 1208
    mask_width: int = 640
    mask_height: int = 360
    wheelbase: float = 1.9
    track_width: float = 1.2

    def __post_init__(self):
        self.beam_elevations_deg = tuple(float(e) for e in self.beam_elevations_deg)
        if list(self.beam_elevations_deg) != sorted(self.beam_elevations_deg):
            raise DomainError("beam elevations must be sorted ascending")
        n = 360.0 / self.azimuth_step_deg
        if abs(n - round(n)) > 1e-9:
            raise DomainError("azimuth step must divide 360")

    @property
    def n_azimuth(self) -> int:
        return int(round(360.0 / self.azimuth_step_deg))

    def mount(self) -> RigidTransform:
        """Lidar frame to vehicle footprint."""
        return RigidTransform(rot_y(math.radians(self.lidar_tilt_deg)), [self.lidar_forward, 0.0, self.lidar_height])

    def camera_to_vehicle(self) -> RigidTransform:
        # camera axes (x right, y down, z forward) expressed in the vehicle frame
        base = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
        tilt = rot_y(math.radians(self.camera_tilt_deg)).as_matrix()
        return RigidTransform(Quaternion.from_matrix(tilt @ base), [self.camera_forward, 0.0, self.camera_height])

    def camera_model(self) -> CameraModel:
        """Full-resolution camera with a lidar-to-camera extrinsic."""
        fx = (self.image_width / 2.0) / math.tan(math.radians(self.hfov_deg) / 2.0)
        fy = (self.image_height / 2.0) / math.tan(math.radians(self.vfov_deg) / 2.0)
        ext = compose(inverse(self.camera_to_vehicle()), self.mount())
        return CameraModel(fx, fy, self.image_width / 2.0, self.image_height / 2.0, self.image_width, self.image_height, ext)

    def beam_directions(self) -> np.ndarray:
        """Unit directions ``(n_beams, n_azimuth, 3)`` in the lidar frame, azimuth from -180 deg."""
        e = np.radians(np.array(self.beam_elevations_deg))[:, None]
        phi = np.radians(-180.0 + self.azimuth_step_deg * np.arange(self.n_azimuth))[None, :]
        return np.stack(np.broadcast_arrays(np.cos(e) * np.cos(phi), np.cos(e) * np.sin(phi), np.sin(e)), axis=-1)


@dataclass
class TrajectorySpec:
    speed: float = 5.0
    duration: float = 5.0
    path_radius: float | None = None  # defaults to the road's curve
    lateral_offset: float = 0.0
    scan_rate: float = 10.0
    pose_rate: float = 100.0
    gps_rate: float = 1.0
    gps_outages: list[tuple[float, float]] = field(default_factory=list)
    start_ns: int = 1_000_000_000_000

    def __post_init__(self):
        if self.speed < 0:
            raise DomainError("speed must be non-negative")
        if not self.duration > 0:
            raise DomainError("duration must be positive")
        self.gps_outages = [tuple(o) for o in self.gps_outages]

    @property
    def n_frames(self) -> int:
        return max(1, int(round(self.duration * self.scan_rate)))

    @property
    def period_ns(self) -> int:
        return int(round(1e9 / self.scan_rate))


# --------------------------------------------------------------------------- scene geometry


class Scene:
    def __init__(self, spec: SceneSpec):
        self.spec = spec
        self.hw = spec.half_width
        self.ch = spec.curb_height
        self.R = spec.curve_radius
        self.k = 2.0 * math.pi / spec.roughness_wavelength

    def lateral(self, xy: np.ndarray) -> np.ndarray:
        """Signed distance from the centreline, positive to the left."""
        if self.R is None:
            return xy[..., 1]
        rho = np.hypot(xy[..., 0], xy[..., 1] - self.R)
        return math.copysign(1.0, self.R) * (abs(self.R) - rho)

    def road_height(self, x, y):
        a = self.spec.roughness
        if a == 0.0:
            return np.zeros_like(x)
        return a * np.sin(self.k * x) * np.cos(self.k * y)

    def _road_grad(self, x, y):
        a, k = self.spec.roughness, self.k
        return a * k * np.cos(k * x) * np.cos(k * y), -a * k * np.sin(k * x) * np.sin(k * y)

    def _ground_t(self, o, d, max_steps: int = 400):
        """First crossing of each downward ray with the road surface.

        On a rough road the ray is marched from the height ``+A`` with steps
        ``g / L`` (``L`` bounds the slope of ray height minus surface height),
        which cannot jump past the first crossing; Newton then polishes.
        """
        a = self.spec.roughness
        if a == 0.0:
            return -o[:, 2] / d[:, 2]
        lip = -d[:, 2] + a * self.k * (np.abs(d[:, 0]) + np.abs(d[:, 1]))
        t = np.maximum((a - o[:, 2]) / d[:, 2], 0.0)

        def gap(t, i=slice(None)):
            oi, di = o[i], d[i]
            return oi[:, 2] + t * di[:, 2] - self.road_height(oi[:, 0] + t * di[:, 0], oi[:, 1] + t * di[:, 1])

        def march(t, idx, tol):
            for _ in range(max_steps):
                if len(idx) == 0:
                    break
                ti = t[idx] + gap(t[idx], idx) / lip[idx]
                t[idx] = ti
                idx = idx[gap(ti, idx) > tol]
            return t

        t = march(t, np.flatnonzero(gap(t) > 1e-6), 1e-6)
        traced = t.copy()
        for _ in range(3):
            x = o[:, 0] + t * d[:, 0]
            y = o[:, 1] + t * d[:, 1]
            hx, hy = self._road_grad(x, y)
            slope = d[:, 2] - hx * d[:, 0] - hy * d[:, 1]
            t = t - np.where(slope < 0, gap(t) / slope, 0.0)
        # Newton can slide off near-tangent hits; finish those by marching
        off = np.flatnonzero((np.abs(gap(t)) > 1e-9) | (t < traced))
        if len(off):
            t[off] = traced[off]
            t = march(t, off, 1e-10)
        return t

    def _boundary_t(self, o, d, t_lo, t_hi):
        """First ``t`` in ``[t_lo, t_hi]`` where the ray's ground track meets ``|lateral| = W/2``."""
        best = np.full(len(o), np.inf)
        if self.R is None:
            for side in (self.hw, -self.hw):
                with np.errstate(divide="ignore", invalid="ignore"):
                    t = (side - o[:, 1]) / d[:, 1]
                ok = (t >= t_lo - 1e-12) & (t <= t_hi + 1e-12)
                best = np.where(ok & (t < best), t, best)
        else:
            ox, oy = o[:, 0], o[:, 1] - self.R
            a = d[:, 0] ** 2 + d[:, 1] ** 2
            b = 2.0 * (ox * d[:, 0] + oy * d[:, 1])
            for rho in (abs(self.R) - self.hw, abs(self.R) + self.hw):
                c = ox * ox + oy * oy - rho * rho
                disc = b * b - 4 * a * c
                sq = np.sqrt(np.maximum(disc, 0.0))
                for t in ((-b - sq) / (2 * a), (-b + sq) / (2 * a)):
                    ok = (disc >= 0) & (t >= t_lo - 1e-12) & (t <= t_hi + 1e-12)
                    best = np.where(ok & (t < best), t, best)
        return np.where(np.isfinite(best), np.clip(best, t_lo, t_hi), t_hi)

    def cast(self, o: np.ndarray, d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Ray parameter and surface id of the first hit (``inf``/``MISS`` when none).

        Origins must be above the sidewalk.
        """
        o = np.broadcast_to(np.asarray(o, dtype=float), d.shape)
        n = len(d)
        t_hit = np.full(n, np.inf)
        sid = np.zeros(n, dtype=np.int8)
        down = d[:, 2] < -1e-12
        if down.any():
            od, dd = o[down], d[down]
            t_s = (self.ch - od[:, 2]) / dd[:, 2]
            l_s = self.lateral(od[:, :2] + t_s[:, None] * dd[:, :2])
            t_g = self._ground_t(od, dd)
            l_g = self.lateral(od[:, :2] + t_g[:, None] * dd[:, :2])
            on_side = np.abs(l_s) >= self.hw
            on_road = ~on_side & (np.abs(l_g) <= self.hw)
            t = np.where(on_side, t_s, t_g)
            s = np.where(on_side, SIDEWALK, ROAD).astype(np.int8)
            riser = ~on_side & ~on_road
            if riser.any():
                if self.ch > 0:
                    t[riser] = self._boundary_t(od[riser], dd[riser], t_s[riser], t_g[riser])
                    s[riser] = RISER
                else:
                    t[riser] = t_g[riser]
                    s[riser] = SIDEWALK
            t_hit[down] = t
            sid[down] = s
        for box in self.spec.obstacles:
            c = np.asarray(box.center, dtype=float)
            h = np.asarray(box.dims, dtype=float) / 2.0
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = (c - h - o) / d
                t2 = (c + h - o) / d
            t1 = np.where(np.isnan(t1), -np.inf, t1)
            t2 = np.where(np.isnan(t2), np.inf, t2)
            t_in = np.minimum(t1, t2).max(axis=1)
            t_out = np.maximum(t1, t2).min(axis=1)
            inside_slab = (d == 0) & ((o < c - h) | (o > c + h))
            hit = (t_in <= t_out) & (t_in > 0) & ~inside_slab.any(axis=1) & (t_in < t_hit)
            t_hit[hit] = t_in[hit]
            sid[hit] = OBSTACLE
        return t_hit, sid

    def surface_distance(self, p: np.ndarray) -> np.ndarray:
        """Distance-like residual from each world point to the nearest true surface."""
        p = np.asarray(p, dtype=float).reshape(-1, 3)
        lat = np.abs(self.lateral(p[:, :2]))
        z = p[:, 2]
        road = np.abs(z - self.road_height(p[:, 0], p[:, 1])) + np.maximum(lat - self.hw, 0.0)
        side = np.abs(z - self.ch) + np.maximum(self.hw - lat, 0.0)
        zr = self.road_height(p[:, 0], p[:, 1])
        riser = np.abs(lat - self.hw) + np.maximum(zr - z, 0.0) + np.maximum(z - self.ch, 0.0)
        out = np.minimum(np.minimum(road, side), riser)
        for box in self.spec.obstacles:
            c = np.asarray(box.center, dtype=float)
            h = np.asarray(box.dims, dtype=float) / 2.0
            q = np.abs(p - c) - h
            outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
            inside = np.minimum(q.max(axis=1), 0.0)
            out = np.minimum(out, np.abs(outside + inside))
        return out

    def curb_lines(self, n: int = 31, length: float = 30.0) -> list[list[list[float]]]:
        """World-frame polylines of both curbs over the first ``length`` metres."""
        s = np.linspace(0.0, length, n)
        out = []
        for side in (self.hw, -self.hw):
            if self.R is None:
                pts = np.column_stack((s, np.full(n, side)))
            else:
                th = s / self.R
                r = self.R - side
                pts = np.column_stack((r * np.sin(th), self.R - r * np.cos(th)))
            out.append(pts.round(9).tolist())
        return out


# --------------------------------------------------------------------------- trajectory


class Trajectory:
    def __init__(self, spec: TrajectorySpec, road_radius: float | None):
        self.spec = spec
        self.R = spec.path_radius if spec.path_radius is not None else road_radius
        if self.R is not None and spec.lateral_offset:
            self.R = self.R - spec.lateral_offset

    def state(self, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Position ``(N, 3)`` and yaw ``(N,)`` at times ``t`` seconds after start."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        s = self.spec.speed * t
        off = self.spec.lateral_offset
        if self.R is None:
            yaw = np.zeros_like(s)
            pos = np.column_stack((s, np.full_like(s, off), np.zeros_like(s)))
        else:
            yaw = s / self.R
            pos = np.column_stack((self.R * np.sin(yaw), self.R * (1.0 - np.cos(yaw)) + off, np.zeros_like(s)))
        return pos, yaw

    def pose(self, t: float) -> RigidTransform:
        pos, yaw = self.state(t)
        return RigidTransform(rot_z(float(yaw[0])), pos[0])


def _yaw_matrices(yaw: np.ndarray) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    m = np.zeros((len(yaw), 3, 3))
    m[:, 0, 0], m[:, 0, 1], m[:, 1, 0], m[:, 1, 1], m[:, 2, 2] = c, -s, s, c, 1.0
    return m


# --------------------------------------------------------------------------- simulation


@dataclass(eq=False)
class SimulatedScan:
    scan: LidarScan
    surface: np.ndarray  # surface id per point, same order as scan rows
    world: np.ndarray  # exact world position per point


class Simulation:
    """Lazily generated frames of one synthetic drive."""

    def __init__(self, scene: SceneSpec, sensor: SensorSpec, traj: TrajectorySpec, seed: int = 0):
        self.scene_spec, self.sensor, self.traj_spec, self.seed = scene, sensor, traj, seed
        self.scene = Scene(scene)
        self.traj = Trajectory(traj, scene.curve_radius)
        self.mount = sensor.mount()
        self.camera = sensor.camera_model()
        self.mask_camera = self.camera.scaled(sensor.mask_width, sensor.mask_height)
        self._dirs = sensor.beam_directions()
        self._pix_cache: dict[str, np.ndarray] = {}

    @property
    def n_frames(self) -> int:
        return self.traj_spec.n_frames

    def timestamp(self, k: int) -> int:
        return self.traj_spec.start_ns + k * self.traj_spec.period_ns

    def frame_time(self, k: int) -> float:
        return k * self.traj_spec.period_ns / 1e9

    def vehicle_pose(self, k: int, fraction: float = 0.0) -> RigidTransform:
        return self.traj.pose(self.frame_time(k) + fraction / self.traj_spec.scan_rate)

    def ego(self, k: int) -> RigidTransform:
        """Exact ego transform for :func:`~roadval.scan_processing.correct_motion`."""
        return compose(inverse(self.vehicle_pose(k, 1.0)), self.vehicle_pose(k, 0.0))

    def _rng(self, *keys: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.seed, *keys]))

    def scan(self, k: int) -> SimulatedScan:
        dirs = self._dirs  # (B, A, 3)
        nb, na, _ = dirs.shape
        frac = np.arange(na) / na
        pos, yaw = self.traj.state(self.frame_time(k) + frac / self.traj_spec.scan_rate)
        rv = _yaw_matrices(yaw)  # (A, 3, 3)
        mount_r = self.mount.rotation.as_matrix()
        d_veh = dirs @ mount_r.T  # (B, A, 3)
        d_world = np.einsum("aij,baj->bai", rv, d_veh)
        origin = pos + np.einsum("aij,j->ai", rv, self.mount.translation)  # (A, 3)
        o = np.broadcast_to(origin[None], (nb, na, 3)).reshape(-1, 3)
        dw = d_world.reshape(-1, 3)
        t, sid = self.scene.cast(o, dw)
        rng_t = t.copy()
        if self.sensor.range_jitter > 0:
            rng_t = rng_t + self._rng(1, k).uniform(-self.sensor.range_jitter, self.sensor.range_jitter, size=len(t))
        keep = (sid != MISS) & (t >= self.sensor.min_range) & (t <= self.sensor.max_range)
        ring = np.repeat(np.arange(nb), na)[keep]
        tf = np.tile(frac, nb)[keep]
        xyz = dirs.reshape(-1, 3)[keep] * rng_t[keep, None]
        world = o[keep] + dw[keep] * rng_t[keep, None]
        order = scan_order(xyz, ring)
        scan = LidarScan(self.timestamp(k), xyz[order], ring[order], tf[order])
        return SimulatedScan(scan, sid[keep][order], world[order])

    def _pixel_dirs(self, which: str) -> np.ndarray:
        if which not in self._pix_cache:
            c = self.mask_camera
            if which == "center":
                rows, cols = np.mgrid[0 : c.height, 0 : c.width].astype(float)
            else:
                rows, cols = np.mgrid[0 : c.height + 1, 0 : c.width + 1].astype(float) - 0.5
            d = np.stack(((cols - c.ox) / c.fx, (rows - c.oy) / c.fy, np.ones_like(rows)), axis=-1).reshape(-1, 3)
            self._pix_cache[which] = d / np.linalg.norm(d, axis=1, keepdims=True)
        return self._pix_cache[which]

    def mask(self, k: int, road_id: int = DEFAULT_ROAD_ID) -> LabelMask:
        """Perfect label mask of frame ``k``.

        A pixel is road when its centre or any corner ray reaches the road
        surface, so every road point rounds onto a road pixel.
        """
        c = self.mask_camera
        cam_world = compose(self.vehicle_pose(k), self.sensor.camera_to_vehicle())
        rot = cam_world.rotation.as_matrix()
        o = cam_world.translation
        _, sid_c = self.scene.cast(o, self._pixel_dirs("center") @ rot.T)
        _, sid_k = self.scene.cast(o, self._pixel_dirs("corner") @ rot.T)
        sid_c = sid_c.reshape(c.height, c.width)
        corner_road = (sid_k == ROAD).reshape(c.height + 1, c.width + 1)
        road = (sid_c == ROAD) | corner_road[:-1, :-1] | corner_road[:-1, 1:] | corner_road[1:, :-1] | corner_road[1:, 1:]
        labels = np.full(sid_c.shape, SKY_ID, dtype=np.uint8)
        labels[(sid_c == SIDEWALK) | (sid_c == RISER)] = SIDEWALK_ID
        labels[sid_c == OBSTACLE] = OBSTACLE_ID
        labels[road] = road_id
        return LabelMask(labels)

    def poses(self) -> list[Pose]:
        ts = self.traj_spec
        end_ns = self.timestamp(self.n_frames)  # end of the last scan
        step = int(round(1e9 / ts.pose_rate))
        stamps = np.arange(ts.start_ns, end_ns + step, step, dtype=np.int64)
        pos, yaw = self.traj.state((stamps - ts.start_ns) / 1e9)
        return [Pose(int(s), p, rot_z(float(y))) for s, p, y in zip(stamps, pos, yaw)]

    def gps(self) -> list[GpsFix]:
        ts = self.traj_spec
        end_ns = self.timestamp(self.n_frames)
        step = int(round(1e9 / ts.gps_rate))
        out = []
        lat0, lon0 = GPS_ORIGIN
        for s in range(ts.start_ns, end_ns + step, step):
            t = (s - ts.start_ns) / 1e9
            if any(a <= t <= b for a, b in ts.gps_outages):
                continue
            pos, _ = self.traj.state(t)
            x, y = pos[0, 0], pos[0, 1]
            lat = lat0 + math.degrees(y / EARTH_RADIUS)
            lon = lon0 + math.degrees(x / (EARTH_RADIUS * math.cos(math.radians(lat0))))
            out.append(GpsFix(s, lat, lon))
        return out

    def calibration(self) -> Calibration:
        s = self.sensor
        extra = {
            "beam_elevations_deg": ",".join(repr(e) for e in s.beam_elevations_deg),
            "wheelbase": repr(s.wheelbase),
            "track_width": repr(s.track_width),
            "scan_period_ns": str(self.traj_spec.period_ns),
        }
        return Calibration(self.camera, self.mount, extra)


# --------------------------------------------------------------------------- mask corruption


def corrupt_mask(mask: LabelMask, mode: str, seed: int = 0, road_id: int = DEFAULT_ROAD_ID, flip_to: int = SIDEWALK_ID, **params) -> LabelMask:
    """Turn some road pixels into ``flip_to``.

    Modes: ``uniform_flip`` (``p``), ``shadow_band`` (``rows=(r0, r1)``,
    optional ``cols=(c0, c1)``, ``p`` default 1), ``border_erode`` (``k``).
    Deterministic for a given ``seed``.
    """
    ids = mask.class_ids.copy()
    road = ids == road_id
    rng = np.random.default_rng(seed)
    if mode == "uniform_flip":
        p = float(params.get("p", 0.0))
        if not 0.0 <= p <= 1.0:
            raise DomainError(f"flip probability {p!r} outside [0, 1]")
        flip = road & (rng.random(ids.shape) < p)
    elif mode == "shadow_band":
        p = float(params.get("p", 1.0))
        if not 0.0 <= p <= 1.0:
            raise DomainError(f"flip probability {p!r} outside [0, 1]")
        r0, r1 = params.get("rows", (0, mask.height))
        c0, c1 = params.get("cols", (0, mask.width))
        band = np.zeros(ids.shape, dtype=bool)
        band[int(r0) : int(r1), int(c0) : int(c1)] = True
        flip = road & band & (rng.random(ids.shape) < p if p < 1.0 else True)
    elif mode == "border_erode":
        k = int(params.get("k", 1))
        if k < 0:
            raise DomainError("erosion radius must be non-negative")
        inner = road.copy()
        for _ in range(k):
            pad = np.pad(inner, 1, constant_values=True)
            shrunk = inner.copy()
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    shrunk &= pad[1 + dr : 1 + dr + inner.shape[0], 1 + dc : 1 + dc + inner.shape[1]]
            inner = shrunk
        flip = road & ~inner
    else:
        raise DomainError(f"unknown corruption mode {mode!r}")
    ids[flip] = flip_to
    return LabelMask(ids)


def _applies(entry: dict, k: int) -> bool:
    frames = entry.get("frames")
    if frames is None:
        return True
    start, stop = frames[0], frames[1]
    every = frames[2] if len(frames) > 2 else 1
    return start <= k < stop and (k - start) % every == 0


def apply_corruptions(mask: LabelMask, entries: Sequence[dict], seed: int, k: int, road_id: int) -> LabelMask:
    for j, e in enumerate(entries):
        if not _applies(e, k):
            continue
        params = {key: v for key, v in e.items() if key not in ("mode", "frames")}
        sub = int(np.random.SeedSequence([seed, 2, j, k]).generate_state(1)[0])
        mask = corrupt_mask(mask, e["mode"], sub, road_id=road_id, **params)
    return mask


# --------------------------------------------------------------------------- spec files and writing


@dataclass
class SynthConfig:
    scene: SceneSpec = field(default_factory=SceneSpec)
    sensor: SensorSpec = field(default_factory=SensorSpec)
    trajectory: TrajectorySpec = field(default_factory=TrajectorySpec)
    condition: str = "unspecified"
    dataset_id: str = "synthetic"
    corruption: list[dict] = field(default_factory=list)
    mask_sets: dict[str, list[dict]] = field(default_factory=dict)


def _build(cls, doc, where):
    if doc is None:
        return cls()
    if not isinstance(doc, dict):
        raise SchemaError(f"{where} must be an object")
    known = set(cls.__dataclass_fields__)
    unknown = set(doc) - known
    if unknown:
        raise SchemaError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**doc)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{where}: {exc}") from None


def load_synth_config(path) -> SynthConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise SchemaError("spec file not found", path) from None
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc.msg}", path, exc.lineno) from None
    try:
        return synth_config_from_dict(doc)
    except SchemaError as exc:
        raise SchemaError(exc.message, path) from None


def synth_config_from_dict(doc: dict) -> SynthConfig:
    if not isinstance(doc, dict):
        raise SchemaError("scene spec must be a JSON object")
    unknown = set(doc) - set(SynthConfig.__dataclass_fields__)
    if unknown:
        raise SchemaError(f"unknown keys {sorted(unknown)}")
    cfg = SynthConfig(
        _build(SceneSpec, doc.get("scene"), "scene"),
        _build(SensorSpec, doc.get("sensor"), "sensor"),
        _build(TrajectorySpec, doc.get("trajectory"), "trajectory"),
        doc.get("condition", "unspecified"),
        str(doc.get("dataset_id", "synthetic")),
        list(doc.get("corruption", [])),
        dict(doc.get("mask_sets", {})),
    )
    if cfg.condition not in CONDITIONS:
        raise SchemaError(f"unknown condition {cfg.condition!r}; expected one of {', '.join(CONDITIONS)}")
    for entries in [cfg.corruption, *cfg.mask_sets.values()]:
        for e in entries:
            if not isinstance(e, dict) or e.get("mode") not in ("uniform_flip", "shadow_band", "border_erode"):
                raise SchemaError(f"bad corruption entry {e!r}")
    return cfg


def synth_config_to_dict(cfg: SynthConfig) -> dict:
    return asdict(cfg)


def _rle(flags: np.ndarray) -> list[list[int]]:
    f = np.concatenate(([False], flags.ravel(), [False]))
    d = np.flatnonzero(np.diff(f.astype(np.int8)))
    return [[int(a), int(b - a)] for a, b in zip(d[::2], d[1::2])]


def simulate(cfg: SynthConfig, out_dir, seed: int = 0) -> Path:
    """Write a complete dataset plus ``truth.json`` (kept next to, not inside, the pipeline inputs)."""
    out = Path(out_dir)
    (out / "scans").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(exist_ok=True)
    for name in cfg.mask_sets:
        (out / name).mkdir(exist_ok=True)
    sim = Simulation(cfg.scene, cfg.sensor, cfg.trajectory, seed)
    cmap = ClassMap(DEFAULT_CLASSES, DEFAULT_ROAD_ID)
    write_manifest(DatasetManifest(out, "calib.txt", cmap, cfg.condition, cfg.dataset_id), out)
    write_calibration(sim.calibration(), out / "calib.txt")
    write_pose_track(sim.poses(), out / "poses.csv")
    write_gps_track(sim.gps(), out / "gps.csv")
    frames, truth_frames = [], []
    curbs = sim.scene.curb_lines()
    for k in range(sim.n_frames):
        ts = sim.timestamp(k)
        write_scan(sim.scan(k).scan, out / "scans" / f"{ts}.csv")
        perfect = sim.mask(k, cmap.road_id)
        write_mask(apply_corruptions(perfect, cfg.corruption, seed, k, cmap.road_id), out / "masks" / f"{ts}.pgm")
        for name, entries in cfg.mask_sets.items():
            write_mask(apply_corruptions(perfect, entries, seed, k, cmap.road_id), out / name / f"{ts}.pgm")
        frames.append(FrameEntry(ts, f"scans/{ts}.csv", f"masks/{ts}.pgm"))
        pose = sim.vehicle_pose(k)
        truth_frames.append(
            {
                "timestamp_ns": ts,
                "pose_xy_yaw": [float(pose.translation[0]), float(pose.translation[1]), pose.rotation.yaw()],
                "road_pixels_rle": _rle(perfect.class_ids == cmap.road_id),
            }
        )
    write_frames(frames, out / "frames.csv")
    truth = {"seed": seed, "config": synth_config_to_dict(cfg), "curb_lines_world": curbs, "frames": truth_frames}
    (out / "truth.json").write_text(json.dumps(truth, sort_keys=True) + "\n")
    return out


def iter_frames(sim: Simulation) -> Iterator[int]:
    return iter(range(sim.n_frames))
