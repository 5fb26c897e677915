"""Command-line front-end: ``roadval validate|compare|synth|inspect``.

Every failure is printed to stderr as one JSON object with ``error``,
``file``, ``line`` and ``message`` keys.  Exit codes: 0 success, 2 data or
configuration error (argparse usage errors also exit 2), 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import pipeline
from .dataset_io import load_dataset, read_mask, read_scan
from .errors import FrameSetMismatchError, RoadvalError
from .geospatial import compare, read_records_csv, read_report
from .synthetic import SynthConfig, load_synth_config, simulate

EXIT_OK, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3


def _ring_list(text: str) -> tuple[int, ...]:
    try:
        rings = tuple(int(r) for r in text.split(",") if r.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad ring list {text!r}") from None
    if not rings:
        raise argparse.ArgumentTypeError("ring list is empty")
    return rings


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="roadval", description="Lidar-based validation of road segmentation masks.")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="score every frame of a dataset")
    v.add_argument("--dataset", required=True, type=Path)
    v.add_argument("--out", required=True, type=Path)
    v.add_argument("--before", type=int, default=pipeline.DEFAULT_BEFORE)
    v.add_argument("--after", type=int, default=pipeline.DEFAULT_AFTER)
    v.add_argument("--angle-threshold-deg", type=float, default=None)
    v.add_argument("--rings", type=_ring_list, default=None)
    v.add_argument("--seed-match-max-m", type=float, default=None)
    v.add_argument("--stat-k", type=int, default=pipeline.DEFAULT_K)
    v.add_argument("--stat-mult", type=float, default=pipeline.DEFAULT_STDDEV_MULT)
    v.add_argument("--median-window", type=int, default=pipeline.DEFAULT_MEDIAN_WINDOW)
    v.add_argument("--unique-pixels", action="store_true")
    v.add_argument("--trim-curb-foot", action="store_true", help="drop the last point before each rough pair")
    v.add_argument("--bin-width", type=float, default=pipeline.DEFAULT_BIN_WIDTH)
    v.add_argument("--max-gps-gap-s", type=float, default=pipeline.DEFAULT_MAX_GAP_S)
    v.add_argument("--masks", default=None, help="mask directory replacing the one in frames.csv")
    v.add_argument("--label", default="")
    v.add_argument("--jobs", type=int, default=1)
    v.add_argument("--seed", type=int, default=0, help="accepted for symmetry; validation is deterministic")

    c = sub.add_parser("compare", help="compare two sets of validation runs")
    c.add_argument("--a", nargs="+", required=True, type=Path, help="run directories of model A")
    c.add_argument("--b", nargs="+", required=True, type=Path, help="run directories of model B")
    c.add_argument("--out", required=True, type=Path)
    c.add_argument("--label-a", default="a")
    c.add_argument("--label-b", default="b")

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("spec", nargs="?", type=Path, default=None, help="scene.json (defaults when omitted)")
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--seed", type=int, default=0)

    i = sub.add_parser("inspect", help="dataset sanity report")
    i.add_argument("--dataset", required=True, type=Path)
    i.add_argument("--out", type=Path, default=None)
    return p


def _emit(doc: dict, out: Path | None = None) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if out is not None:
        try:
            out.write_text(text)
        except OSError as exc:
            raise RoadvalError(f"cannot write: {exc.strerror}", out) from None
    sys.stdout.write(text)


def cmd_validate(args) -> int:
    cfg = pipeline.RunConfig(
        dataset=args.dataset,
        out=args.out,
        n_before=args.before,
        n_after=args.after,
        angle_threshold_deg=args.angle_threshold_deg,
        rings=args.rings,
        seed_match_max_m=args.seed_match_max_m,
        stat_k=args.stat_k,
        stat_mult=args.stat_mult,
        median_window=args.median_window,
        unique_pixels=args.unique_pixels,
        trim_curb_foot=args.trim_curb_foot,
        bin_width=args.bin_width,
        max_gps_gap_s=args.max_gps_gap_s,
        masks=args.masks,
        label=args.label,
        jobs=args.jobs,
    )
    result = pipeline.run(cfg)
    pipeline.write_outputs(result, args.out)
    s = result.summary
    _emit({"dataset": s.dataset, "mean_percent": s.mean_percent, "frames": s.frames, "excluded": s.excluded, "bands": s.bands})
    return EXIT_OK


def _load_run(run: Path):
    report = read_report(run / "report.json") if (run / "report.json").exists() else None
    if report is None:
        raise RoadvalError("run directory has no report.json", run)
    records = read_records_csv(run / "records.csv")
    return report, {r.timestamp for r in records}


def _frame_diff(a: set[int], b: set[int], limit: int = 20) -> dict:
    only_a, only_b = sorted(a - b), sorted(b - a)
    return {"only_a": only_a[:limit], "only_b": only_b[:limit], "n_only_a": len(only_a), "n_only_b": len(only_b)}


def cmd_compare(args) -> int:
    side_a = [_load_run(r) for r in args.a]
    side_b = {rep.dataset: (rep, frames, path) for (rep, frames), path in zip((_load_run(r) for r in args.b), args.b)}
    for (rep, frames), path in zip(side_a, args.a):
        other = side_b.get(rep.dataset)
        if other is not None and other[1] != frames:
            raise FrameSetMismatchError(
                f"dataset {rep.dataset!r}: frame sets differ {json.dumps(_frame_diff(frames, other[1]))}", path
            )
    rows = compare([r for r, _ in side_a], [v[0] for v in side_b.values()])
    defined = [r for r in rows if r["difference"] is not None]
    overall = None
    if defined:
        ma = float(np.mean([r["mean_a"] for r in defined]))
        mb = float(np.mean([r["mean_b"] for r in defined]))
        d = ma - mb
        overall = {"mean_a": ma, "mean_b": mb, "difference": d, "winner": "a" if d > 0 else "b" if d < 0 else "tie"}
    doc = {"labels": {"a": args.label_a, "b": args.label_b}, "datasets": rows, "overall": overall}
    args.out.parent.mkdir(parents=True, exist_ok=True)
    _emit(doc, args.out)
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = load_synth_config(args.spec) if args.spec is not None else SynthConfig()
    out = simulate(cfg, args.out, seed=args.seed)
    ds = load_dataset(out)
    _emit(
        {
            "dataset": ds.manifest.dataset_id,
            "out": str(out),
            "frames": len(ds.frames),
            "poses": len(ds.poses),
            "gps_fixes": len(ds.gps),
            "scan_points_first": len(read_scan(ds.scan_files[0][1])) if ds.scan_files else 0,
        }
    )
    return EXIT_OK


def cmd_inspect(args) -> int:
    ds = load_dataset(args.dataset)
    problems = []
    n_points, mask_shapes = [], set()
    for ts, path in ds.scan_files:
        try:
            n_points.append(len(read_scan(path, ts)))
        except RoadvalError as exc:
            problems.append(exc.to_dict())
    scan_ts = {ts for ts, _ in ds.scan_files}
    for fr in ds.frames:
        if fr.timestamp not in scan_ts:
            problems.append({"error": "missing_scan", "file": fr.scan, "line": None, "message": f"frame {fr.timestamp} has no scan"})
        try:
            m = read_mask(ds.root / fr.mask)
            mask_shapes.add((m.width, m.height))
            bad = set(np.unique(m.class_ids).tolist()) - ds.manifest.class_map.ids()
            if bad:
                problems.append({"error": "unknown_class", "file": fr.mask, "line": None, "message": f"class ids {sorted(bad)} not in manifest"})
        except RoadvalError as exc:
            problems.append(exc.to_dict())
        if not (ds.poses.covers(fr.timestamp)):
            problems.append({"error": "missing_pose", "file": "poses.csv", "line": None, "message": f"frame {fr.timestamp} outside pose track"})
    doc = {
        "dataset": ds.manifest.dataset_id,
        "condition": ds.manifest.condition,
        "frames": len(ds.frames),
        "scans": len(ds.scan_files),
        "poses": len(ds.poses),
        "gps_fixes": len(ds.gps),
        "gps_available": ds.has_gps,
        "steering_log": ds.steering is not None,
        "time_span_ns": [ds.frames[0].timestamp, ds.frames[-1].timestamp] if ds.frames else None,
        "points_per_scan": {"min": min(n_points), "max": max(n_points), "mean": float(np.mean(n_points))} if n_points else None,
        "mask_sizes": sorted(mask_shapes),
        "road_id": ds.manifest.class_map.road_id,
        "problems": problems,
    }
    _emit(doc, args.out)
    return EXIT_OK


COMMANDS = {"validate": cmd_validate, "compare": cmd_compare, "synth": cmd_synth, "inspect": cmd_inspect}


def _fail(doc: dict, code: int) -> int:
    sys.stderr.write(json.dumps(doc, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except RoadvalError as exc:
        return _fail(exc.to_dict(), EXIT_DATA)
    except Exception as exc:  # a bug, but still machine-readable
        return _fail({"error": "internal", "file": None, "line": None, "message": f"{type(exc).__name__}: {exc}"}, EXIT_INTERNAL)


if __name__ == "__main__":
    sys.exit(main())
