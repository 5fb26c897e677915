"""Projection of lidar road points into label masks and the road-accuracy score."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .dataset_io import LabelMask
from .errors import DomainError
from .geometry import CameraModel

BANDS = ("ge95", "p90_95", "p85_90", "lt85")


def band_of(percent: float) -> str:
    """Accuracy band; exact 95/90/85 belong to the upper band."""
    if not 0.0 <= percent <= 100.0:
        raise DomainError(f"percentage {percent!r} outside [0, 100]")
    if percent >= 95.0:
        return "ge95"
    if percent >= 90.0:
        return "p90_95"
    if percent >= 85.0:
        return "p85_90"
    return "lt85"


@dataclass(frozen=True)
class ValidationRecord:
    """Score of one frame; ``percent`` and ``band`` are ``None`` when undefined."""

    timestamp: int
    percent: float | None
    n_points: int
    n_correct: int
    band: str | None
    location: tuple[float, float] | None = None
    status: str = "ok"
    detail: str = ""
    clipped: bool = False
    frames_used: int = 0

    @property
    def defined(self) -> bool:
        return self.percent is not None

    def with_location(self, location) -> "ValidationRecord":
        return replace(self, location=location)

    @classmethod
    def failed(cls, timestamp: int, status: str, detail: str = "") -> "ValidationRecord":
        return cls(timestamp, None, 0, 0, None, status=status, detail=detail)


def project_cloud(points: np.ndarray, cam: CameraModel, mask_dims: tuple[int, int]) -> np.ndarray:
    """Pixel ``(row, col)`` of every point that lands inside a ``mask_dims=(width, height)`` image.

    Intrinsics are rescaled from the calibrated resolution to the mask's;
    pixel coordinates are rounded half up.  Returns an ``(M, 2)`` int array,
    one row per surviving point, duplicates kept.
    """
    width, height = mask_dims
    if width <= 0 or height <= 0:
        raise DomainError("mask dimensions must be positive")
    c = cam.scaled(width, height)
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    rows, cols = _kernels.project_to_pixels(
        pts, c.extrinsic.rotation.as_matrix(), c.extrinsic.translation, c.fx, c.fy, c.ox, c.oy, width, height
    )
    return np.column_stack((rows, cols)).astype(np.int64).reshape(-1, 2)


def road_percentage(
    pixels: np.ndarray,
    mask: LabelMask,
    road_id: int,
    timestamp: int = 0,
    unique: bool = False,
) -> ValidationRecord:
    """Share of projected lidar road points whose mask pixel is labelled road.

    With ``unique`` each distinct pixel counts once instead of once per point.
    """
    px = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
    if unique and len(px):
        px = np.unique(px, axis=0)
    n = len(px)
    if n == 0:
        return ValidationRecord.failed(timestamp, "no_points", "no lidar road points inside the image")
    labels = mask.class_ids[px[:, 0], px[:, 1]]
    correct = int(np.count_nonzero(labels == road_id))
    pct = 100.0 * correct / n
    return ValidationRecord(timestamp, pct, n, correct, band_of(pct))
