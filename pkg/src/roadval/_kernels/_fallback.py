"""Pure numpy implementations of the per-ring kernels.

Each function here has a compiled twin in ``_ckernels.pyx`` with the same
signature and semantics; the test suite checks the two against each other.
"""

from __future__ import annotations

import numpy as np

_CHUNK = 512


def knn_mean_distance(xyz: np.ndarray, k: int) -> np.ndarray:
    """Mean Euclidean distance from each point to its ``k`` nearest others.

    Requires ``len(xyz) > k``.
    """
    xyz = np.ascontiguousarray(xyz, dtype=float)
    n = len(xyz)
    out = np.empty(n)
    for a in range(0, n, _CHUNK):
        b = min(n, a + _CHUNK)
        diff = xyz[a:b, None, :] - xyz[None, :, :]
        d = np.sqrt((diff * diff).sum(axis=2))
        d[np.arange(b - a), np.arange(a, b)] = np.inf
        nearest = np.sort(np.partition(d, k - 1, axis=1)[:, :k], axis=1)
        out[a:b] = nearest.sum(axis=1) / k
    return out


def ring_median(xyz: np.ndarray, window: int) -> np.ndarray:
    """Component-wise median over an azimuth window centred on each point.

    Near the ends the window shrinks symmetrically so it stays centred
    (and odd), hence the end points themselves are kept.
    """
    xyz = np.ascontiguousarray(xyz, dtype=float)
    n = len(xyz)
    h = window // 2
    out = xyz.copy()
    if n == 0:
        return out
    if n > 2 * h:
        win = np.lib.stride_tricks.sliding_window_view(xyz, window, axis=0)  # (n-2h, 3, window)
        out[h : n - h] = np.median(win, axis=2)
    for i in list(range(min(h, n))) + list(range(max(h, n - h), n)):
        hi = min(h, i, n - 1 - i)
        out[i] = np.median(xyz[i - hi : i + hi + 1], axis=0)
    return out


def pair_angles(xyz: np.ndarray) -> np.ndarray:
    """Elevation of each segment ``p[i+1] - p[i]`` above the ground plane."""
    d = np.diff(xyz, axis=0)
    return np.arctan2(np.abs(d[:, 2]), np.hypot(d[:, 0], d[:, 1]))


def smoothness_walk(xyz: np.ndarray, seed: int, threshold: float) -> tuple[int, int]:
    """Walk outward from ``seed``; returns ``(hi, lo)`` last accepted indices."""
    xyz = np.asarray(xyz, dtype=float)
    n = len(xyz)
    if n == 0:
        return (seed, seed)
    bad = pair_angles(xyz) > threshold  # bad[i] is the pair (i, i+1)
    up = bad[seed:]
    hi = seed + int(np.argmax(up)) if up.any() else n - 1
    down = bad[:seed][::-1]
    lo = seed - int(np.argmax(down)) if down.any() else 0
    return hi, lo


def project_to_pixels(points, rot, trans, fx, fy, ox, oy, width, height):
    """Rigid transform + pinhole + round-half-up + bounds check.

    Returns ``(rows, cols)`` int64 arrays for the surviving points, in input
    order.
    """
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    pc = p @ np.asarray(rot, dtype=float).T + np.asarray(trans, dtype=float)
    z = pc[:, 2]
    front = z > 0.0
    pc = pc[front]
    u = fx * pc[:, 0] / pc[:, 2] + ox
    v = fy * pc[:, 1] / pc[:, 2] + oy
    cols = np.floor(u + 0.5)
    rows = np.floor(v + 0.5)
    ok = (cols >= 0) & (cols < width) & (rows >= 0) & (rows < height)
    return rows[ok].astype(np.int64), cols[ok].astype(np.int64)
