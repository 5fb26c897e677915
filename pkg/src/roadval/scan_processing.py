"""Ego-motion correction and outlier filtering of single lidar scans."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .dataset_io import LidarScan, ring_slices
from .errors import DomainError
from .geometry import RigidTransform, compose, interpolate_many, inverse, quat_rotate, quat_rotate_many

DEFAULT_K = 10
DEFAULT_STDDEV_MULT = 2.0
DEFAULT_MEDIAN_WINDOW = 5


@dataclass(eq=False)
class CorrectedScan:
    """Scan points in the vehicle-footprint frame at the scan start instant.

    Same column layout and row order as :class:`LidarScan`.
    """

    timestamp: int
    xyz: np.ndarray
    ring: np.ndarray
    time_fraction: np.ndarray

    def __len__(self) -> int:
        return len(self.ring)

    def ring_slices(self) -> dict[int, slice]:
        return ring_slices(self.ring)

    def subset(self, keep: np.ndarray) -> "CorrectedScan":
        return CorrectedScan(self.timestamp, self.xyz[keep], self.ring[keep], self.time_fraction[keep])


def correct_motion(scan: LidarScan, ego: RigidTransform, mount: RigidTransform) -> CorrectedScan:
    """Undo intra-scan motion: ``p' = interpolate(inverse(ego), f) . mount . p``.

    ``ego`` maps vehicle coordinates at scan start to vehicle coordinates at
    scan end, so ``interpolate(inverse(ego), f)`` is the vehicle pose at
    phase ``f`` seen from the start frame.
    """
    veh = quat_rotate(mount.rotation, scan.xyz) + mount.translation
    quats, trans = interpolate_many(inverse(ego), scan.time_fraction)
    xyz = quat_rotate_many(quats, veh) + trans if len(veh) else veh.reshape(0, 3)
    return CorrectedScan(scan.timestamp, xyz, scan.ring.copy(), scan.time_fraction.copy())


def ego_from_poses(start: RigidTransform, end: RigidTransform) -> RigidTransform:
    """Ego transform for :func:`correct_motion` from vehicle-to-odom poses at scan start and end."""
    return compose(inverse(end), start)


def knn_mean_distances(scan: CorrectedScan, k: int) -> np.ndarray:
    """Per-point mean k-NN distance within the point's ring; NaN on rings with ``<= k`` points."""
    out = np.full(len(scan), np.nan)
    for s in scan.ring_slices().values():
        if s.stop - s.start > k:
            out[s] = _kernels.knn_mean_distance(scan.xyz[s], k)
    return out


def statistical_filter(scan: CorrectedScan, k: int = DEFAULT_K, stddev_mult: float = DEFAULT_STDDEV_MULT) -> CorrectedScan:
    """Drop points whose same-ring k-NN mean distance exceeds ``mean + stddev_mult * std``.

    Statistics are taken over all points of rings with more than ``k``
    points; smaller rings pass through untouched.
    """
    if k < 1:
        raise DomainError(f"k must be >= 1, got {k}")
    if len(scan) == 0:
        return scan
    mean_d = knn_mean_distances(scan, k)
    valid = ~np.isnan(mean_d)
    if not valid.any():
        return scan
    vals = mean_d[valid]
    limit = vals.mean() + stddev_mult * vals.std()
    limit += 1e-9 * abs(limit)  # equal distances must not split on rounding noise
    keep = ~valid | (mean_d <= limit)
    return scan.subset(keep)


def median_filter(scan: CorrectedScan, window: int = DEFAULT_MEDIAN_WINDOW) -> CorrectedScan:
    if window < 3 or window % 2 == 0:
        raise DomainError(f"median window must be odd and >= 3, got {window}")
    xyz = scan.xyz.copy()
    for s in scan.ring_slices().values():
        xyz[s] = _kernels.ring_median(scan.xyz[s], window)
    return CorrectedScan(scan.timestamp, xyz, scan.ring, scan.time_fraction)
