"""GPS association, aggregation and analyst-facing exports."""

from __future__ import annotations

import bisect
import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .dataset_io import GpsFix
from .errors import DomainError, RoadvalError
from .validation import BANDS, ValidationRecord

DEFAULT_MAX_GAP_S = 2.0
DEFAULT_BIN_WIDTH = 1.0
DEFAULT_RANGE = (70.0, 100.0)

RECORD_FIELDS = (
    "timestamp_ns", "status", "percent", "band", "n_points", "n_correct",
    "lat", "lon", "window_clipped", "frames_used", "detail",
)  # fmt: skip


def attach_gps(records: Sequence[ValidationRecord], gps_track: Sequence[GpsFix], max_gap: float = DEFAULT_MAX_GAP_S):
    """Give each record the fix linearly interpolated at its timestamp.

    Interpolation needs fixes on both sides no more than ``max_gap``
    seconds apart; otherwise the record keeps no location.
    """
    stamps = [f.timestamp for f in gps_track]
    gap_ns = max_gap * 1e9
    out = []
    for rec in records:
        t = rec.timestamp
        i = bisect.bisect_left(stamps, t)
        loc = None
        if i < len(stamps) and stamps[i] == t:
            loc = (gps_track[i].latitude, gps_track[i].longitude)
        elif 0 < i < len(stamps) and stamps[i] - stamps[i - 1] <= gap_ns:
            a, b = gps_track[i - 1], gps_track[i]
            f = (t - a.timestamp) / (b.timestamp - a.timestamp)
            loc = (a.latitude + f * (b.latitude - a.latitude), a.longitude + f * (b.longitude - a.longitude))
        out.append(rec.with_location(loc))
    return out


@dataclass
class Histogram:
    bin_width: float
    lo: float
    hi: float
    counts: list[int]

    def edges(self) -> list[tuple[float, float]]:
        return [(self.lo + k * self.bin_width, self.lo + (k + 1) * self.bin_width) for k in range(len(self.counts))]

    def modes(self) -> list[int]:
        """Indices of local maxima (plateaus count once, at their first bin)."""
        c = self.counts
        out = []
        k = 0
        while k < len(c):
            j = k
            while j + 1 < len(c) and c[j + 1] == c[k]:
                j += 1
            left = c[k - 1] if k > 0 else -1
            right = c[j + 1] if j + 1 < len(c) else -1
            if c[k] > 0 and c[k] > left and c[k] > right:
                out.append(k)
            k = j + 1
        return out


def histogram(records: Iterable[ValidationRecord], bin_width: float = DEFAULT_BIN_WIDTH, range=DEFAULT_RANGE) -> Histogram:
    """Half-open bins ``[lo + k w, lo + (k+1) w)``; values outside clamp to the end bins."""
    if not bin_width > 0:
        raise DomainError("bin width must be positive")
    lo, hi = float(range[0]), float(range[1])
    if not hi > lo:
        raise DomainError("histogram range must be increasing")
    n = max(1, math.ceil((hi - lo) / bin_width - 1e-12))
    counts = [0] * n
    for rec in records:
        if rec.percent is None:
            continue
        p = rec.percent
        k = math.floor((p - lo) / bin_width)
        # correct floor() against the computed edges
        while k > 0 and p < lo + k * bin_width:
            k -= 1
        while k < n - 1 and p >= lo + (k + 1) * bin_width:
            k += 1
        counts[min(max(k, 0), n - 1)] += 1
    return Histogram(bin_width, lo, hi, counts)


@dataclass
class DatasetSummary:
    dataset: str
    condition: str
    mean_percent: float | None
    bands: dict[str, int]
    frames: int
    excluded: int
    label: str = ""
    extra: dict = field(default_factory=dict)


def summarize(records: Sequence[ValidationRecord], dataset: str = "", condition: str = "unspecified", label: str = "") -> DatasetSummary:
    good = [r for r in records if r.percent is not None]
    bands = {b: 0 for b in BANDS}
    for r in good:
        bands[r.band] += 1
    mean = math.fsum(r.percent for r in good) / len(good) if good else None
    return DatasetSummary(dataset, condition, mean, bands, len(good), len(records) - len(good), label)


def compare(summaries_a: Sequence[DatasetSummary], summaries_b: Sequence[DatasetSummary]) -> list[dict]:
    """Per-dataset means of two models side by side, paired by dataset id."""
    by_b = {s.dataset: s for s in summaries_b}
    missing = sorted({s.dataset for s in summaries_a} ^ set(by_b))
    if missing:
        raise RoadvalError(f"datasets present in only one side: {', '.join(missing)}")
    rows = []
    for a in summaries_a:
        b = by_b[a.dataset]
        if a.mean_percent is None or b.mean_percent is None:
            diff, winner = None, "undefined"
        else:
            diff = a.mean_percent - b.mean_percent
            winner = "a" if diff > 0 else "b" if diff < 0 else "tie"
        rows.append(
            {
                "dataset": a.dataset,
                "condition": a.condition,
                "mean_a": a.mean_percent,
                "mean_b": b.mean_percent,
                "difference": diff,
                "winner": winner,
            }
        )
    return rows


# --------------------------------------------------------------------------- exports


def _num(v) -> str:
    return "" if v is None else f"{v:.9f}"


def _open_for_write(path):
    try:
        return open(path, "w", newline="")
    except OSError as exc:
        raise RoadvalError(f"cannot write: {exc.strerror}", path) from None


def export_geojson(records: Sequence[ValidationRecord], path, unlocated_path=None) -> None:
    """GeoJSON points for located records; the rest go to a sidecar CSV."""
    path = Path(path)
    located = [r for r in records if r.location is not None and r.percent is not None]
    features = [
        {
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [r.location[1], r.location[0]]},
            "properties": {"timestamp_ns": r.timestamp, "percent": r.percent, "band": r.band, "n_points": r.n_points},
        }
        for r in located
    ]
    doc = {"type": "FeatureCollection", "features": features}
    with _open_for_write(path) as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
    unlocated = [r for r in records if r.location is None]
    if unlocated_path is None:
        unlocated_path = path.with_name(path.stem + "_unlocated.csv")
    export_records_csv(unlocated, unlocated_path)


def record_row(r: ValidationRecord) -> dict:
    lat, lon = r.location if r.location is not None else (None, None)
    return {
        "timestamp_ns": r.timestamp,
        "status": r.status,
        "percent": _num(r.percent),
        "band": r.band or "",
        "n_points": r.n_points,
        "n_correct": r.n_correct,
        "lat": _num(lat),
        "lon": _num(lon),
        "window_clipped": int(r.clipped),
        "frames_used": r.frames_used,
        "detail": r.detail,
    }


def export_records_csv(records: Sequence[ValidationRecord], path) -> None:
    with _open_for_write(path) as fh:
        w = csv.DictWriter(fh, fieldnames=RECORD_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in sorted(records, key=lambda r: r.timestamp):
            w.writerow(record_row(r))


def read_records_csv(path) -> list[ValidationRecord]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            pct = float(row["percent"]) if row["percent"] else None
            loc = (float(row["lat"]), float(row["lon"])) if row["lat"] else None
            out.append(
                ValidationRecord(
                    int(row["timestamp_ns"]),
                    pct,
                    int(row["n_points"]),
                    int(row["n_correct"]),
                    row["band"] or None,
                    loc,
                    row["status"],
                    row["detail"],
                    bool(int(row["window_clipped"])),
                    int(row["frames_used"]),
                )
            )
    return out


def export_histogram_csv(hist: Histogram, path) -> None:
    with _open_for_write(path) as fh:
        fh.write("bin_lo,bin_hi,count\n")
        for (a, b), c in zip(hist.edges(), hist.counts):
            fh.write(f"{a:.6f},{b:.6f},{c}\n")


def export_summary_csv(summaries: Sequence[DatasetSummary], path) -> None:
    with _open_for_write(path) as fh:
        fh.write("dataset,condition,label,mean_percent,frames,excluded," + ",".join(BANDS) + "\n")
        for s in summaries:
            fh.write(
                f"{s.dataset},{s.condition},{s.label},{_num(s.mean_percent)},{s.frames},{s.excluded},"
                + ",".join(str(s.bands[b]) for b in BANDS)
                + "\n"
            )


def summary_to_report(summary: DatasetSummary, config: dict | None = None) -> dict:
    doc = {
        "dataset": summary.dataset,
        "condition": summary.condition,
        "label": summary.label,
        "mean_percent": summary.mean_percent,
        "bands": dict(summary.bands),
        "frames": summary.frames,
        "excluded": summary.excluded,
    }
    if config is not None:
        doc["config"] = config
    doc.update(summary.extra)
    return doc


def write_report(summary: DatasetSummary, path, config: dict | None = None) -> None:
    with _open_for_write(path) as fh:
        json.dump(summary_to_report(summary, config), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_report(path) -> DatasetSummary:
    doc = json.loads(Path(path).read_text())
    return DatasetSummary(
        doc["dataset"], doc["condition"], doc["mean_percent"], doc["bands"], doc["frames"], doc["excluded"], doc.get("label", "")
    )


def summary_dict(s: DatasetSummary) -> dict:
    return asdict(s)
