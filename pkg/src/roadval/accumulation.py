"""Merging road points of neighbouring scans into a reference vehicle frame."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset_io import Pose
from .errors import DomainError
from .geometry import RigidTransform, compose, inverse, transform_point
from .road_extraction import RoadPointSet

DEFAULT_BEFORE = 20
DEFAULT_AFTER = 5


@dataclass(frozen=True)
class AccumulationWindow:
    n_before: int = DEFAULT_BEFORE
    n_after: int = DEFAULT_AFTER

    def __post_init__(self):
        if self.n_before < 0 or self.n_after < 0:
            raise DomainError("window sizes must be non-negative")


@dataclass(eq=False)
class AccumulatedCloud:
    timestamp: int
    points: np.ndarray
    source: np.ndarray  # frame index each point came from
    clipped: bool = False
    diagnostics: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.points)


def relative_pose(ref: Pose, current: Pose) -> RigidTransform:
    """Transform taking ``current`` vehicle coordinates into ``ref`` vehicle coordinates.

    Translation is the odometry displacement rotated into the reference
    frame, rotation is ``conj(q_ref) * q_cur``.
    """
    return compose(inverse(ref.transform()), current.transform())


def accumulate(
    frames: Sequence[tuple[Pose | None, RoadPointSet | None]],
    ref_index: int,
    window: AccumulationWindow = AccumulationWindow(),
) -> AccumulatedCloud:
    """Concatenate road points of frames ``ref - n_before .. ref + n_after``.

    The window is clipped at the sequence ends (reported via ``clipped``).
    Frames without a pose or road set are skipped with a diagnostic.
    """
    if not 0 <= ref_index < len(frames):
        raise DomainError(f"reference index {ref_index} outside {len(frames)} frames")
    ref_pose, ref_set = frames[ref_index]
    if ref_pose is None:
        raise DomainError(f"reference frame {ref_index} has no pose")
    lo = ref_index - window.n_before
    hi = ref_index + window.n_after
    clipped = lo < 0 or hi >= len(frames)
    lo, hi = max(lo, 0), min(hi, len(frames) - 1)
    chunks, sources, diags = [], [], []
    for i in range(lo, hi + 1):
        pose, road = frames[i]
        if pose is None or road is None:
            diags.append(f"frame {i}: skipped ({'no pose' if pose is None else 'no road points'})")
            continue
        if len(road) == 0:
            continue
        pts = road.points if i == ref_index else transform_point(relative_pose(ref_pose, pose), road.points)
        chunks.append(pts)
        sources.append(np.full(len(pts), i, dtype=np.int64))
    ts = ref_set.timestamp if ref_set is not None else ref_pose.timestamp
    if not chunks:
        return AccumulatedCloud(ts, np.zeros((0, 3)), np.zeros(0, dtype=np.int64), clipped, diags)
    return AccumulatedCloud(ts, np.concatenate(chunks), np.concatenate(sources), clipped, diags)
