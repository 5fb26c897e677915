"""End-to-end validation of one dataset directory.

Scans are processed independently (correct, filter, extract) and may run in
a worker pool; accumulation, projection and scoring then run in frame order
so the outputs do not depend on the degree of parallelism.
"""

from __future__ import annotations

import bisect
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .accumulation import DEFAULT_AFTER, DEFAULT_BEFORE, AccumulationWindow, accumulate
from .dataset_io import Dataset, Pose, PoseTrack, load_dataset, read_mask, read_scan
from .errors import DomainError, RoadvalError
from .geometry import compose, inverse
from .geospatial import (
    DEFAULT_BIN_WIDTH,
    DEFAULT_MAX_GAP_S,
    DEFAULT_RANGE,
    attach_gps,
    export_geojson,
    export_histogram_csv,
    export_records_csv,
    histogram,
    summarize,
    write_report,
)
from .road_extraction import (
    DEFAULT_ANGLE_THRESHOLD_DEG,
    DEFAULT_ELEVATIONS_DEG,
    DEFAULT_RINGS,
    DEFAULT_SEED_MATCH_MAX_M,
    DEFAULT_TRACK_WIDTH,
    DEFAULT_WHEELBASE,
    RingModel,
    RoadPointSet,
    TrajectoryArc,
    extract_road,
    parse_ring_models,
    ring_models_from_mount,
    steering_from_motion,
    trajectory_arc,
)
from .scan_processing import (
    DEFAULT_K,
    DEFAULT_MEDIAN_WINDOW,
    DEFAULT_STDDEV_MULT,
    correct_motion,
    ego_from_poses,
    median_filter,
    statistical_filter,
)
from .validation import ValidationRecord, project_cloud, road_percentage

DEFAULT_SCAN_PERIOD_NS = 100_000_000


@dataclass
class RunConfig:
    """Options of one validation run; ``None`` means "calibration file, else default"."""

    dataset: Path
    out: Path | None = None
    n_before: int = DEFAULT_BEFORE
    n_after: int = DEFAULT_AFTER
    angle_threshold_deg: float | None = None
    rings: tuple[int, ...] | None = None
    seed_match_max_m: float | None = None
    stat_k: int = DEFAULT_K
    stat_mult: float = DEFAULT_STDDEV_MULT
    median_window: int = DEFAULT_MEDIAN_WINDOW
    unique_pixels: bool = False
    trim_curb_foot: bool = False
    bin_width: float = DEFAULT_BIN_WIDTH
    hist_range: tuple[float, float] = DEFAULT_RANGE
    max_gps_gap_s: float = DEFAULT_MAX_GAP_S
    masks: str | None = None
    label: str = ""
    jobs: int = 1

    def __post_init__(self):
        self.dataset = Path(self.dataset)
        if self.n_before < 0 or self.n_after < 0:
            raise DomainError("--before and --after must be non-negative")
        if self.angle_threshold_deg is not None and not 0.0 < self.angle_threshold_deg < 90.0:
            raise DomainError("angle threshold must lie in (0, 90) degrees")
        if self.seed_match_max_m is not None and not self.seed_match_max_m > 0:
            raise DomainError("seed match distance must be positive")
        if self.stat_k < 1:
            raise DomainError("k must be at least 1")
        if not self.stat_mult > 0:
            raise DomainError("stddev multiplier must be positive")
        if self.median_window < 3 or self.median_window % 2 == 0:
            raise DomainError("median window must be odd and at least 3")
        if not self.bin_width > 0:
            raise DomainError("bin width must be positive")
        if self.jobs < 1:
            raise DomainError("--jobs must be at least 1")


@dataclass
class Resolved:
    """Per-run constants shared with scan workers."""

    mount: object
    ring_models: list[RingModel]
    angle_threshold: float
    seed_match_max: float
    stat_k: int
    stat_mult: float
    median_window: int
    trim_curb_foot: bool
    wheelbase: float
    track_width: float
    scan_period_ns: int
    poses: list[Pose]
    steering: list[tuple[int, float]] | None


@dataclass
class ScanResult:
    timestamp: int
    status: str
    road: RoadPointSet | None = None
    detail: str = ""
    n_raw: int = 0
    n_filtered: int = 0


@dataclass
class RunResult:
    records: list[ValidationRecord]
    summary: object
    hist: object
    config: dict
    scan_status: dict[str, int] = field(default_factory=dict)


def resolve(cfg: RunConfig, ds: Dataset) -> Resolved:
    cal = ds.calibration
    thr_deg = cfg.angle_threshold_deg if cfg.angle_threshold_deg is not None else cal.get_float("angle_threshold_deg", DEFAULT_ANGLE_THRESHOLD_DEG)
    seed_max = cfg.seed_match_max_m if cfg.seed_match_max_m is not None else cal.get_float("seed_match_max_m", DEFAULT_SEED_MATCH_MAX_M)
    if cfg.rings is not None:
        rings = tuple(cfg.rings)
    else:
        rings = tuple(int(r) for r in cal.get_list("rings", DEFAULT_RINGS))
    elevations = cal.get_list("beam_elevations_deg", DEFAULT_ELEVATIONS_DEG)
    for r in rings:
        if not 0 <= r < len(elevations):
            raise DomainError(f"ring {r} outside the {len(elevations)} configured beams")
    if "ring_models" in cal.extra:
        try:
            models = [m for m in parse_ring_models(cal.extra["ring_models"]) if m.ring in rings]
        except ValueError as exc:
            raise RoadvalError(f"bad ring_models entry: {exc}", ds.root / ds.manifest.calibration_file) from None
    else:
        models = ring_models_from_mount(cal.lidar_mount, elevations, rings)
    return Resolved(
        mount=cal.lidar_mount,
        ring_models=models,
        angle_threshold=math.radians(thr_deg),
        seed_match_max=seed_max,
        stat_k=cfg.stat_k,
        stat_mult=cfg.stat_mult,
        median_window=cfg.median_window,
        trim_curb_foot=cfg.trim_curb_foot,
        wheelbase=cal.get_float("wheelbase", DEFAULT_WHEELBASE),
        track_width=cal.get_float("track_width", DEFAULT_TRACK_WIDTH),
        scan_period_ns=int(cal.get_float("scan_period_ns", DEFAULT_SCAN_PERIOD_NS)),
        poses=list(ds.poses),
        steering=ds.steering,
    )


def _steering_at(log: list[tuple[int, float]], t: int) -> float:
    stamps = [s for s, _ in log]
    i = bisect.bisect_left(stamps, t)
    if i < len(stamps) and stamps[i] == t:
        return log[i][1]
    if i == 0:
        return log[0][1]
    if i == len(stamps):
        return log[-1][1]
    (ta, a), (tb, b) = log[i - 1], log[i]
    return a + (t - ta) / (tb - ta) * (b - a)


_CTX: Resolved | None = None


def _init_worker(ctx: Resolved) -> None:
    global _CTX
    ctx.poses = PoseTrack(ctx.poses)
    _CTX = ctx


def process_scan(ts: int, path: str, ctx: Resolved | None = None) -> ScanResult:
    """Correct, filter and extract one scan; failures come back as a status."""
    ctx = ctx or _CTX
    track = ctx.poses if isinstance(ctx.poses, PoseTrack) else PoseTrack(ctx.poses)
    try:
        scan = read_scan(path, ts)
    except RoadvalError as exc:
        return ScanResult(ts, "parse_error", detail=str(exc))
    t_end = ts + ctx.scan_period_ns
    if not (track.covers(ts) and track.covers(t_end)):
        return ScanResult(ts, "missing_pose", detail=f"pose track does not cover [{ts}, {t_end}]", n_raw=len(scan))
    start, end = track.at(ts).transform(), track.at(t_end).transform()
    ego = ego_from_poses(start, end)
    corrected = correct_motion(scan, ego, ctx.mount)
    filtered = median_filter(statistical_filter(corrected, ctx.stat_k, ctx.stat_mult), ctx.median_window)
    if ctx.steering is not None:
        alpha = _steering_at(ctx.steering, ts)
    else:
        alpha = steering_from_motion(compose(inverse(start), end), ctx.wheelbase, ctx.track_width)
    try:
        arc = trajectory_arc(alpha, ctx.wheelbase, ctx.track_width)
    except DomainError as exc:
        return ScanResult(ts, "invalid_steering", detail=exc.message, n_raw=len(scan), n_filtered=len(filtered))
    road = extract_road(filtered, arc, ctx.ring_models, ctx.angle_threshold, ctx.seed_match_max, ctx.trim_curb_foot)
    status = "ok" if len(road) else "no_seed"
    detail = "; ".join(road.diagnostics) if not len(road) else ""
    return ScanResult(ts, status, road, detail, len(scan), len(filtered))


def _process_batch(items: Sequence[tuple[int, str]]) -> list[ScanResult]:
    return [process_scan(ts, p) for ts, p in items]


def process_scans(ds: Dataset, ctx: Resolved, jobs: int = 1) -> list[ScanResult]:
    items = [(ts, str(p)) for ts, p in ds.scan_files]
    if jobs <= 1 or len(items) < 2:
        _init_worker(ctx)
        return [process_scan(ts, p) for ts, p in items]
    size = max(1, math.ceil(len(items) / (jobs * 4)))
    batches = [items[i : i + size] for i in range(0, len(items), size)]
    with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(ctx,)) as pool:
        out = []
        for chunk in pool.map(_process_batch, batches):
            out.extend(chunk)
    return out


def _echo(cfg: RunConfig, ctx: Resolved) -> dict:
    """Effective settings; paths that vary between identical runs are left out."""
    return {
        "dataset": str(cfg.dataset),
        "before": cfg.n_before,
        "after": cfg.n_after,
        "angle_threshold_deg": math.degrees(ctx.angle_threshold),
        "rings": [m.ring for m in ctx.ring_models],
        "ring_models": [[m.ring, m.center_offset, m.radius] for m in ctx.ring_models],
        "seed_match_max_m": ctx.seed_match_max,
        "stat_k": cfg.stat_k,
        "stat_mult": cfg.stat_mult,
        "median_window": cfg.median_window,
        "unique_pixels": cfg.unique_pixels,
        "trim_curb_foot": cfg.trim_curb_foot,
        "bin_width": cfg.bin_width,
        "hist_range": list(cfg.hist_range),
        "max_gps_gap_s": cfg.max_gps_gap_s,
        "masks": cfg.masks,
        "wheelbase": ctx.wheelbase,
        "track_width": ctx.track_width,
        "scan_period_ns": ctx.scan_period_ns,
        "steering_source": "steering.csv" if ctx.steering is not None else "poses",
    }


def _mask_path(ds: Dataset, cfg: RunConfig, rel: str) -> Path:
    if cfg.masks is None:
        return ds.root / rel
    base = Path(cfg.masks)
    if not base.is_absolute():
        base = ds.root / base
    return base / Path(rel).name


def score_frames(ds: Dataset, cfg: RunConfig, ctx: Resolved, scans: list[ScanResult]) -> list[ValidationRecord]:
    by_ts = {r.timestamp: i for i, r in enumerate(scans)}
    track = ds.poses
    seq = []
    for r in scans:
        pose = track.at(r.timestamp) if track.covers(r.timestamp) else None
        seq.append((pose, r.road if r.status == "ok" else None))
    cam = ds.calibration.camera
    cam = cam.with_extrinsic(compose(cam.extrinsic, inverse(ctx.mount)))
    window = AccumulationWindow(cfg.n_before, cfg.n_after)
    road_id = ds.manifest.class_map.road_id
    records = []
    for fr in ds.frames:
        ts = fr.timestamp
        i = by_ts.get(ts)
        if i is None or (ds.root / fr.scan).resolve() != Path(ds.scan_files[i][1]).resolve():
            records.append(ValidationRecord.failed(ts, "missing_scan", f"no scan file {fr.scan}"))
            continue
        res = scans[i]
        if res.status != "ok":
            records.append(ValidationRecord.failed(ts, res.status, res.detail))
            continue
        try:
            mask = read_mask(_mask_path(ds, cfg, fr.mask))
        except RoadvalError as exc:
            records.append(ValidationRecord.failed(ts, "mask_error", str(exc)))
            continue
        cloud = accumulate(seq, i, window)
        px = project_cloud(cloud.points, cam, (mask.width, mask.height))
        rec = road_percentage(px, mask, road_id, ts, cfg.unique_pixels)
        used = int(len(np.unique(cloud.source)))
        records.append(replace(rec, clipped=cloud.clipped, frames_used=used))
    return records


def run(cfg: RunConfig) -> RunResult:
    ds = load_dataset(cfg.dataset)
    ctx = resolve(cfg, ds)
    scans = process_scans(ds, ctx, cfg.jobs)
    records = score_frames(ds, cfg, ctx, scans)
    records = attach_gps(records, ds.gps, cfg.max_gps_gap_s)
    records.sort(key=lambda r: r.timestamp)
    summary = summarize(records, ds.manifest.dataset_id, ds.manifest.condition, cfg.label)
    hist = histogram(records, cfg.bin_width, cfg.hist_range)
    statuses: dict[str, int] = {}
    for r in records:
        statuses[r.status] = statuses.get(r.status, 0) + 1
    scan_status: dict[str, int] = {}
    for s in scans:
        scan_status[s.status] = scan_status.get(s.status, 0) + 1
    summary.extra = {
        "frame_status": statuses,
        "scan_status": scan_status,
        "skipped": [{"timestamp_ns": r.timestamp, "status": r.status, "detail": r.detail} for r in records if not r.defined],
        "clipped_frames": sum(1 for r in records if r.clipped),
        "unlocated_frames": sum(1 for r in records if r.location is None),
        "histogram": {"bin_width": hist.bin_width, "lo": hist.lo, "hi": hist.hi, "counts": hist.counts, "modes": hist.modes()},
        "gps_available": ds.has_gps,
    }
    return RunResult(records, summary, hist, _echo(cfg, ctx), scan_status)


def write_outputs(result: RunResult, out_dir) -> None:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise RoadvalError(f"cannot create output directory: {exc.strerror}", out) from None
    write_report(result.summary, out / "report.json", result.config)
    export_geojson(result.records, out / "points.geojson")
    export_histogram_csv(result.hist, out / "histogram.csv")
    export_records_csv(result.records, out / "records.csv")


def default_jobs() -> int:
    return max(1, min(4, os.cpu_count() or 1))


def config_dict(cfg: RunConfig) -> dict:
    d = asdict(cfg)
    d["dataset"] = str(cfg.dataset)
    d["out"] = None if cfg.out is None else str(cfg.out)
    return d
