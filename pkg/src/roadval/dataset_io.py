"""On-disk dataset layout: scans, pose/GPS tracks, label masks, calibration.

Layout of a dataset directory::

    manifest.json        classes, road id, condition tag, calibration file name
    calib.txt            key=value camera intrinsics/extrinsics and lidar mount
    scans/<ts>.csv       ring,time_fraction,x,y,z
    poses.csv            timestamp_ns,px,py,pz,qw,qx,qy,qz
    gps.csv              timestamp_ns,lat,lon            (optional)
    masks/<ts>.pgm       binary P5, maxval 255
    frames.csv           timestamp_ns,scan,mask
    steering.csv         timestamp_ns,alpha_rad          (optional)

Floats are written with ``repr`` so every value survives a round trip
bit-for-bit.
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DatasetError, DomainError, FormatError, OrderingError, OutOfRangeError, ParseError, SchemaError
from .geometry import CameraModel, Quaternion, RigidTransform, slerp

N_BEAMS = 16
QUAT_RENORM_TOL = 1e-6
CONDITIONS = ("good_quality", "poor_exposure", "direct_sunlight", "unspecified")

SCAN_HEADER = "ring,time_fraction,x,y,z"
POSE_HEADER = "timestamp_ns,px,py,pz,qw,qx,qy,qz"
GPS_HEADER = "timestamp_ns,lat,lon"
FRAMES_HEADER = "timestamp_ns,scan,mask"
STEERING_HEADER = "timestamp_ns,alpha_rad"

# ids follow the 12-category label set; Road is 3
DEFAULT_CLASSES = (
    (0, "Sky"),
    (1, "Building"),
    (2, "Column Pole"),
    (3, "Road"),
    (4, "Undrivable Road"),
    (5, "Vegetation"),
    (6, "Sign Symbol"),
    (7, "Fence"),
    (8, "Vehicle"),
    (9, "Pedestrian"),
    (10, "Rider"),
    (11, "Void"),
)
DEFAULT_ROAD_ID = 3


# --------------------------------------------------------------------------- types


@dataclass(frozen=True)
class LidarPoint:
    position: np.ndarray
    ring: int
    time_fraction: float


@dataclass(eq=False)
class LidarScan:
    """One lidar rotation stored column-wise.

    ``xyz`` is ``(N, 3)``; ``ring`` and ``time_fraction`` are length ``N``.
    Rows are sorted by ring, then by azimuth ``atan2(y, x)``.
    """

    timestamp: int
    xyz: np.ndarray
    ring: np.ndarray
    time_fraction: np.ndarray

    def __post_init__(self):
        self.xyz = np.asarray(self.xyz, dtype=float).reshape(-1, 3)
        self.ring = np.asarray(self.ring, dtype=np.int64).reshape(-1)
        self.time_fraction = np.asarray(self.time_fraction, dtype=float).reshape(-1)
        if not (len(self.xyz) == len(self.ring) == len(self.time_fraction)):
            raise SchemaError("scan columns have different lengths")

    def __len__(self) -> int:
        return len(self.ring)

    @property
    def points(self) -> list[LidarPoint]:
        return [LidarPoint(self.xyz[i].copy(), int(self.ring[i]), float(self.time_fraction[i])) for i in range(len(self))]

    def sorted(self) -> "LidarScan":
        order = scan_order(self.xyz, self.ring)
        return LidarScan(self.timestamp, self.xyz[order], self.ring[order], self.time_fraction[order])

    def ring_slices(self) -> dict[int, slice]:
        return ring_slices(self.ring)


def scan_order(xyz: np.ndarray, ring: np.ndarray) -> np.ndarray:
    az = np.arctan2(xyz[:, 1], xyz[:, 0])
    return np.lexsort((az, ring))


def ring_slices(ring: np.ndarray) -> dict[int, slice]:
    """Contiguous slice for each ring of a ring-sorted point array."""
    out: dict[int, slice] = {}
    if len(ring) == 0:
        return out
    change = np.flatnonzero(np.diff(ring)) + 1
    starts = np.concatenate(([0], change))
    stops = np.concatenate((change, [len(ring)]))
    for a, b in zip(starts, stops):
        out[int(ring[a])] = slice(int(a), int(b))
    return out


@dataclass(frozen=True)
class Pose:
    timestamp: int
    position: np.ndarray
    orientation: Quaternion

    def transform(self) -> RigidTransform:
        """Vehicle-frame to odometry-frame transform."""
        return RigidTransform(self.orientation, self.position)


@dataclass(frozen=True)
class GpsFix:
    timestamp: int
    latitude: float
    longitude: float


@dataclass(eq=False)
class LabelMask:
    class_ids: np.ndarray  # (height, width) uint8

    def __post_init__(self):
        self.class_ids = np.ascontiguousarray(self.class_ids, dtype=np.uint8)
        if self.class_ids.ndim != 2:
            raise SchemaError("mask must be two-dimensional")

    @property
    def width(self) -> int:
        return int(self.class_ids.shape[1])

    @property
    def height(self) -> int:
        return int(self.class_ids.shape[0])

    @classmethod
    def uniform(cls, class_id: int, width: int = 640, height: int = 360) -> "LabelMask":
        return cls(np.full((height, width), class_id, dtype=np.uint8))


@dataclass(frozen=True)
class ClassMap:
    classes: tuple[tuple[int, str], ...] = DEFAULT_CLASSES
    road_id: int = DEFAULT_ROAD_ID

    def __post_init__(self):
        ids = [c for c, _ in self.classes]
        if len(set(ids)) != len(ids):
            raise SchemaError("class ids are not unique")
        if any(not 0 <= c <= 255 for c in ids):
            raise SchemaError("class ids must be bytes")
        if self.road_id not in ids:
            raise SchemaError(f"road id {self.road_id} not among classes")

    def ids(self) -> set[int]:
        return {c for c, _ in self.classes}


@dataclass(eq=False)
class Calibration:
    camera: CameraModel  # extrinsic: lidar frame -> camera frame
    lidar_mount: RigidTransform  # lidar frame -> vehicle footprint
    extra: dict[str, str] = field(default_factory=dict)

    def get_float(self, key: str, default: float) -> float:
        if key not in self.extra:
            return default
        try:
            return float(self.extra[key])
        except ValueError:
            raise SchemaError(f"calibration key {key!r} is not a number") from None

    def get_list(self, key: str, default: Sequence[float] | None = None) -> list[float] | None:
        if key not in self.extra:
            return None if default is None else list(default)
        try:
            return [float(v) for v in self.extra[key].split(",") if v.strip()]
        except ValueError:
            raise SchemaError(f"calibration key {key!r} is not a number list") from None


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    calibration_file: str
    class_map: ClassMap
    condition: str = "unspecified"
    dataset_id: str = ""


@dataclass(frozen=True)
class FrameEntry:
    timestamp: int
    scan: str
    mask: str


# --------------------------------------------------------------------------- csv helpers


def _read_lines(path) -> list[str]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise DatasetError("file not found", path) from None
    except OSError as exc:
        raise DatasetError(f"cannot read file: {exc.strerror}", path) from None
    try:
        text = raw.decode("ascii")
    except UnicodeDecodeError as exc:
        line = raw[: exc.start].count(b"\n") + 1
        raise ParseError("non-ASCII byte", path, line) from None
    return text.splitlines()


def _check_header(lines: list[str], header: str, path) -> None:
    if not lines:
        raise ParseError(f"missing header {header!r}", path, 1)
    if lines[0].strip() != header:
        raise ParseError(f"expected header {header!r}, got {lines[0].strip()!r}", path, 1)


def _rows(lines: list[str], ncols: int, path) -> Iterable[tuple[int, list[str]]]:
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != ncols:
            raise ParseError(f"expected {ncols} fields, got {len(cells)}", path, i)
        yield i, cells


def _float(cell: str, path, line: int, name: str) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise ParseError(f"{name}: cannot parse {cell.strip()!r} as a number", path, line) from None
    if not math.isfinite(v):
        raise SchemaError(f"{name}: non-finite value", path, line)
    return v


def _int(cell: str, path, line: int, name: str) -> int:
    try:
        return int(cell.strip())
    except ValueError:
        raise ParseError(f"{name}: cannot parse {cell.strip()!r} as an integer", path, line) from None


def _timestamp_from_name(path) -> int:
    try:
        return int(Path(path).stem)
    except ValueError:
        return 0


# --------------------------------------------------------------------------- scans


def read_scan(path, timestamp: int | None = None, n_beams: int = N_BEAMS) -> LidarScan:
    """Parse a scan CSV. The timestamp defaults to the integer file stem."""
    lines = _read_lines(path)
    _check_header(lines, SCAN_HEADER, path)
    rings, tfs, xyz = [], [], []
    for ln, cells in _rows(lines, 5, path):
        ring = _int(cells[0], path, ln, "ring")
        if not 0 <= ring < n_beams:
            raise SchemaError(f"ring {ring} outside [0, {n_beams - 1}]", path, ln)
        tf = _float(cells[1], path, ln, "time_fraction")
        if not 0.0 <= tf < 1.0:
            raise SchemaError(f"time_fraction {tf!r} outside [0, 1)", path, ln)
        rings.append(ring)
        tfs.append(tf)
        xyz.append((_float(cells[2], path, ln, "x"), _float(cells[3], path, ln, "y"), _float(cells[4], path, ln, "z")))
    ts = _timestamp_from_name(path) if timestamp is None else timestamp
    scan = LidarScan(ts, np.array(xyz, dtype=float).reshape(-1, 3), np.array(rings, dtype=np.int64), np.array(tfs, dtype=float))
    return scan.sorted()


def write_scan(scan: LidarScan, path) -> None:
    s = scan.sorted()
    out = [SCAN_HEADER]
    for r, tf, (x, y, z) in zip(s.ring.tolist(), s.time_fraction.tolist(), s.xyz.tolist()):
        out.append(f"{r},{tf!r},{x!r},{y!r},{z!r}")
    Path(path).write_text("\n".join(out) + "\n")


# --------------------------------------------------------------------------- tracks


def read_pose_track(path) -> list[Pose]:
    lines = _read_lines(path)
    _check_header(lines, POSE_HEADER, path)
    poses: list[Pose] = []
    for ln, cells in _rows(lines, 8, path):
        ts = _int(cells[0], path, ln, "timestamp_ns")
        vals = [_float(c, path, ln, name) for c, name in zip(cells[1:], POSE_HEADER.split(",")[1:])]
        q = vals[3:]
        n = math.sqrt(sum(c * c for c in q))
        if abs(n - 1.0) > QUAT_RENORM_TOL:
            raise SchemaError(f"quaternion norm {n!r} not within {QUAT_RENORM_TOL} of unit", path, ln)
        if poses and ts <= poses[-1].timestamp:
            raise OrderingError(f"timestamp {ts} not after {poses[-1].timestamp}", path, ln)
        pos = np.array(vals[:3])
        pos.setflags(write=False)
        poses.append(Pose(ts, pos, Quaternion.normalized(*q)))
    return poses


def write_pose_track(poses: Sequence[Pose], path) -> None:
    out = [POSE_HEADER]
    for p in poses:
        px, py, pz = p.position.tolist()
        qw, qx, qy, qz = p.orientation.as_tuple()
        out.append(f"{p.timestamp},{px!r},{py!r},{pz!r},{qw!r},{qx!r},{qy!r},{qz!r}")
    Path(path).write_text("\n".join(out) + "\n")


def read_gps_track(path) -> list[GpsFix]:
    lines = _read_lines(path)
    _check_header(lines, GPS_HEADER, path)
    fixes: list[GpsFix] = []
    for ln, cells in _rows(lines, 3, path):
        ts = _int(cells[0], path, ln, "timestamp_ns")
        lat = _float(cells[1], path, ln, "lat")
        lon = _float(cells[2], path, ln, "lon")
        if abs(lat) > 90.0 or abs(lon) > 180.0:
            raise SchemaError(f"coordinate ({lat}, {lon}) out of range", path, ln)
        if fixes and ts <= fixes[-1].timestamp:
            raise OrderingError(f"timestamp {ts} not after {fixes[-1].timestamp}", path, ln)
        fixes.append(GpsFix(ts, lat, lon))
    return fixes


def write_gps_track(fixes: Sequence[GpsFix], path) -> None:
    out = [GPS_HEADER] + [f"{f.timestamp},{float(f.latitude)!r},{float(f.longitude)!r}" for f in fixes]
    Path(path).write_text("\n".join(out) + "\n")


def read_steering(path) -> list[tuple[int, float]]:
    lines = _read_lines(path)
    _check_header(lines, STEERING_HEADER, path)
    out: list[tuple[int, float]] = []
    for ln, cells in _rows(lines, 2, path):
        ts = _int(cells[0], path, ln, "timestamp_ns")
        if out and ts <= out[-1][0]:
            raise OrderingError(f"timestamp {ts} not after {out[-1][0]}", path, ln)
        out.append((ts, _float(cells[1], path, ln, "alpha_rad")))
    return out


def interpolate_pose(track: Sequence[Pose], t: int) -> Pose:
    """Pose at ``t``: linear in position, spherical in orientation."""
    if not track or t < track[0].timestamp or t > track[-1].timestamp:
        span = "empty track" if not track else f"[{track[0].timestamp}, {track[-1].timestamp}]"
        raise OutOfRangeError(f"time {t} outside pose track {span}")
    stamps = [p.timestamp for p in track] if not isinstance(track, PoseTrack) else track.stamps
    i = bisect.bisect_left(stamps, t)
    if stamps[i] == t:
        return track[i]
    a, b = track[i - 1], track[i]
    f = (t - a.timestamp) / (b.timestamp - a.timestamp)
    pos = a.position + f * (b.position - a.position)
    return Pose(t, pos, slerp(a.orientation, b.orientation, f))


class PoseTrack(list):
    """A pose list with cached timestamps for repeated lookups."""

    def __init__(self, poses: Iterable[Pose] = ()):
        super().__init__(poses)
        self.stamps = [p.timestamp for p in self]

    def at(self, t: int) -> Pose:
        return interpolate_pose(self, t)

    def covers(self, t: int) -> bool:
        return bool(self) and self.stamps[0] <= t <= self.stamps[-1]


# --------------------------------------------------------------------------- masks


def _line_at(data: bytes, pos: int) -> int:
    return data[:pos].count(b"\n") + 1


def read_mask(path) -> LabelMask:
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        raise DatasetError("file not found", path) from None
    except OSError as exc:
        raise DatasetError(f"cannot read file: {exc.strerror}", path) from None
    pos = 0
    tokens: list[bytes] = []
    # magic, width, height, maxval; '#' comments allowed between tokens
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header", path, _line_at(data, pos))
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise FormatError(f"bad magic {tokens[0][:8]!r}, expected b'P5'", path, _line_at(data, pos))
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError("non-integer PGM header field", path, _line_at(data, pos)) from None
    if width <= 0 or height <= 0:
        raise FormatError(f"bad dimensions {width}x{height}", path, _line_at(data, pos))
    if maxval != 255:
        raise FormatError(f"maxval {maxval} != 255", path, _line_at(data, pos))
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise FormatError("missing separator after PGM header", path, _line_at(data, pos))
    pos += 1
    payload = data[pos:]
    if len(payload) != width * height:
        what = "truncated" if len(payload) < width * height else "oversized"
        raise FormatError(f"{what} payload: {len(payload)} bytes, expected {width * height}", path, _line_at(data, pos))
    return LabelMask(np.frombuffer(payload, dtype=np.uint8).reshape(height, width).copy())


def write_mask(mask: LabelMask, path) -> None:
    header = f"P5\n{mask.width} {mask.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + mask.class_ids.tobytes())


# --------------------------------------------------------------------------- calibration

_CALIB_REQUIRED = (
    "fx", "fy", "ox", "oy", "width", "height",
    "extrinsic_qw", "extrinsic_qx", "extrinsic_qy", "extrinsic_qz",
    "extrinsic_tx", "extrinsic_ty", "extrinsic_tz",
    "lidar_mount_qw", "lidar_mount_qx", "lidar_mount_qy", "lidar_mount_qz",
    "lidar_mount_tx", "lidar_mount_ty", "lidar_mount_tz",
)  # fmt: skip


def _transform_from(vals: dict[str, float], prefix: str, path, line: int | None = None) -> RigidTransform:
    q = [vals[f"{prefix}_q{c}"] for c in "wxyz"]
    n = math.sqrt(sum(c * c for c in q))
    if abs(n - 1.0) > QUAT_RENORM_TOL:
        raise SchemaError(f"{prefix} quaternion norm {n!r} is not unit", path, line)
    return RigidTransform(Quaternion.normalized(*q), [vals[f"{prefix}_t{c}"] for c in "xyz"])


def read_calibration(path) -> Calibration:
    lines = _read_lines(path)
    raw: dict[str, str] = {}
    where: dict[str, int] = {}
    for ln, line in enumerate(lines, start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        if "=" not in s:
            raise ParseError(f"expected key=value, got {s[:40]!r}", path, ln)
        k, v = (p.strip() for p in s.split("=", 1))
        if not k:
            raise ParseError("empty key", path, ln)
        if k in raw:
            raise ParseError(f"duplicate key {k!r}", path, ln)
        raw[k] = v
        where[k] = ln
    missing = [k for k in _CALIB_REQUIRED if k not in raw]
    if missing:
        raise SchemaError(f"missing keys: {', '.join(missing)}", path)
    vals = {k: _float(raw[k], path, where[k], k) for k in _CALIB_REQUIRED}
    for k in ("width", "height"):
        if vals[k] != int(vals[k]) or vals[k] <= 0:
            raise SchemaError(f"{k} must be a positive integer", path, where[k])
    extrinsic = _transform_from(vals, "extrinsic", path, where["extrinsic_qw"])
    mount = _transform_from(vals, "lidar_mount", path, where["lidar_mount_qw"])
    try:
        cam = CameraModel(vals["fx"], vals["fy"], vals["ox"], vals["oy"], int(vals["width"]), int(vals["height"]), extrinsic)
    except DomainError as exc:
        raise SchemaError(exc.message, path, where["fx"]) from None
    extra = {k: v for k, v in raw.items() if k not in _CALIB_REQUIRED}
    return Calibration(cam, mount, extra)


def write_calibration(calib: Calibration, path) -> None:
    c = calib.camera
    vals = {"fx": c.fx, "fy": c.fy, "ox": c.ox, "oy": c.oy, "width": c.width, "height": c.height}
    for prefix, t in (("extrinsic", c.extrinsic), ("lidar_mount", calib.lidar_mount)):
        for name, v in zip("wxyz", t.rotation.as_tuple()):
            vals[f"{prefix}_q{name}"] = v
        for name, v in zip("xyz", t.translation.tolist()):
            vals[f"{prefix}_t{name}"] = v
    out = [f"{k}={int(v) if k in ('width', 'height') else float(v)!r}" for k, v in vals.items()]
    out += [f"{k}={v}" for k, v in calib.extra.items()]
    Path(path).write_text("\n".join(out) + "\n")


# --------------------------------------------------------------------------- manifest / frames


def read_manifest(root) -> DatasetManifest:
    root = Path(root)
    path = root / "manifest.json"
    lines = _read_lines(path)
    try:
        doc = json.loads("\n".join(lines))
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", path, exc.lineno) from None
    if not isinstance(doc, dict):
        raise SchemaError("manifest must be a JSON object", path)
    try:
        classes = tuple((int(c["id"]), str(c["name"])) for c in doc["classes"])
        road_id = int(doc["road_id"])
        calibration = str(doc["calibration"])
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"bad or missing manifest field: {exc}", path) from None
    condition = doc.get("condition", "unspecified")
    if condition not in CONDITIONS:
        raise SchemaError(f"unknown condition {condition!r}", path)
    try:
        cmap = ClassMap(classes, road_id)
    except SchemaError as exc:
        raise SchemaError(exc.message, path) from None
    return DatasetManifest(root, calibration, cmap, condition, str(doc.get("dataset", root.name)))


def write_manifest(manifest: DatasetManifest, root=None) -> None:
    root = Path(root if root is not None else manifest.root)
    doc = {
        "dataset": manifest.dataset_id,
        "calibration": manifest.calibration_file,
        "classes": [{"id": i, "name": n} for i, n in manifest.class_map.classes],
        "road_id": manifest.class_map.road_id,
        "condition": manifest.condition,
    }
    (root / "manifest.json").write_text(json.dumps(doc, indent=2) + "\n")


def read_frames(path) -> list[FrameEntry]:
    lines = _read_lines(path)
    _check_header(lines, FRAMES_HEADER, path)
    out: list[FrameEntry] = []
    for ln, cells in _rows(lines, 3, path):
        ts = _int(cells[0], path, ln, "timestamp_ns")
        if out and ts <= out[-1].timestamp:
            raise OrderingError(f"timestamp {ts} not after {out[-1].timestamp}", path, ln)
        scan, mask = cells[1].strip(), cells[2].strip()
        if not scan or not mask:
            raise ParseError("empty file reference", path, ln)
        out.append(FrameEntry(ts, scan, mask))
    return out


def write_frames(frames: Sequence[FrameEntry], path) -> None:
    out = [FRAMES_HEADER] + [f"{f.timestamp},{f.scan},{f.mask}" for f in frames]
    Path(path).write_text("\n".join(out) + "\n")


@dataclass(eq=False)
class Dataset:
    """Everything in a dataset directory except the per-frame scans and masks."""

    root: Path
    manifest: DatasetManifest
    calibration: Calibration
    poses: PoseTrack
    gps: list[GpsFix]
    frames: list[FrameEntry]
    scan_files: list[tuple[int, Path]]
    steering: list[tuple[int, float]] | None = None
    has_gps: bool = True


def load_dataset(root) -> Dataset:
    """Parse the dataset-level files; raises a structured error naming the bad file."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError("dataset directory not found", root)
    manifest = read_manifest(root)
    calib = read_calibration(root / manifest.calibration_file)
    poses = PoseTrack(read_pose_track(root / "poses.csv"))
    gps_path = root / "gps.csv"
    has_gps = gps_path.exists()
    gps = read_gps_track(gps_path) if has_gps else []
    frames = read_frames(root / "frames.csv")
    steering = read_steering(root / "steering.csv") if (root / "steering.csv").exists() else None
    scan_dir = root / "scans"
    if not scan_dir.is_dir():
        raise DatasetError("scans directory not found", scan_dir)
    scan_files = []
    for p in scan_dir.glob("*.csv"):
        try:
            scan_files.append((int(p.stem), p))
        except ValueError:
            raise DatasetError("scan file name is not an integer timestamp", p) from None
    scan_files.sort()
    return Dataset(root, manifest, calib, poses, gps, frames, scan_files, steering, has_gps)
