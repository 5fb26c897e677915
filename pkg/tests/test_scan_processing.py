import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roadval.dataset_io import LidarScan
from roadval.errors import DomainError
from roadval.geometry import Quaternion, RigidTransform, compose, inverse, rot_y, rot_z, transform_point
from roadval.scan_processing import (
    CorrectedScan,
    correct_motion,
    ego_from_poses,
    knn_mean_distances,
    median_filter,
    statistical_filter,
)

MOUNT = RigidTransform(rot_y(math.radians(7)), [1.2, 0.0, 1.6])


def ring_scan(points, ring=0, ts=0):
    points = np.asarray(points, dtype=float)
    n = len(points)
    return CorrectedScan(ts, points, np.full(n, ring, dtype=np.int64), np.linspace(0, 0.99, n) if n else np.zeros(0))


def circle_ring(n, radius=8.0, z=0.0):
    a = np.linspace(-math.pi, math.pi, n, endpoint=False)
    return np.column_stack((radius * np.cos(a), radius * np.sin(a), np.full(n, z)))


# --------------------------------------------------------------------------- motion correction


def test_identity_ego_is_mount_transform():
    rng = np.random.default_rng(0)
    scan = LidarScan(0, rng.normal(size=(300, 3)) * 10, rng.integers(0, 16, 300), rng.random(300))
    out = correct_motion(scan, RigidTransform.identity(), MOUNT)
    assert np.array_equal(out.xyz, transform_point(MOUNT, scan.xyz))
    assert np.array_equal(out.ring, scan.ring)


def test_forward_translation_endpoints():
    xyz = np.array([[5.0, 1.0, -1.0], [5.0, 1.0, -1.0]])
    scan = LidarScan(0, xyz, [0, 0], [0.0, 0.999999999])
    ego = RigidTransform(Quaternion.identity(), [1.0, 0.0, 0.0])
    out = correct_motion(scan, ego, RigidTransform.identity())
    assert np.allclose(out.xyz[1] - out.xyz[0], [-0.999999999, 0.0, 0.0], atol=1e-15)


def test_fraction_endpoints_have_no_interpolation_error():
    rng = np.random.default_rng(1)
    ego = RigidTransform(Quaternion.normalized(*rng.normal(size=4)), rng.normal(size=3))
    xyz = rng.normal(size=(2, 3))
    out = correct_motion(LidarScan(0, xyz, [0, 0], [0.0, 0.0]), ego, MOUNT)
    assert np.array_equal(out.xyz, transform_point(MOUNT, xyz))


def test_ego_from_poses_maps_start_frame_into_end_frame():
    start = RigidTransform(rot_z(0.3), [10.0, 5.0, 0.0])
    end = RigidTransform(rot_z(0.4), [10.5, 5.2, 0.0])
    ego = ego_from_poses(start, end)
    p_start = np.array([3.0, -1.0, 0.2])
    world = transform_point(start, p_start)
    assert np.allclose(transform_point(ego, p_start), transform_point(inverse(end), world), atol=1e-12)


def distorted_plane_scan(motion_at, normal, offset, mount, n=4000, seed=2):
    """Points of a static plane seen from a moving vehicle.

    ``motion_at(f)`` is the vehicle pose at phase ``f`` in the start frame.
    Returns the scan and the plane in start-frame coordinates.
    """
    rng = np.random.default_rng(seed)
    normal = np.asarray(normal, float) / np.linalg.norm(normal)
    u = np.cross(normal, [0.0, 0.0, 1.0] if abs(normal[2]) < 0.9 else [1.0, 0.0, 0.0])
    u /= np.linalg.norm(u)
    v = np.cross(normal, u)
    ab = rng.uniform(-15, 15, size=(n, 2))
    world = offset * normal + ab[:, :1] * u + ab[:, 1:] * v
    f = np.sort(rng.random(n))
    sensor = np.array([transform_point(inverse(compose(motion_at(fi), mount)), w) for fi, w in zip(f, world)])
    return LidarScan(0, sensor, np.zeros(n, dtype=np.int64), f), normal, offset


@pytest.mark.parametrize("normal", [(0.0, 0.0, 1.0), (0.3, -0.2, 1.0), (1.0, 0.4, 0.1)])
def test_decoupled_constant_velocity_is_restored(normal):
    yaw, dist = math.radians(10), 0.5
    motion_at = lambda f: RigidTransform(rot_z(f * yaw), [f * dist, 0.0, 0.0])
    scan, n, c = distorted_plane_scan(motion_at, normal, -1.5, MOUNT)
    ego = inverse(motion_at(1.0))
    out = correct_motion(scan, ego, MOUNT)
    assert np.abs(out.xyz @ n - c).max() < 1e-9


def test_screw_motion_is_restored_on_tilted_plane():
    axis = np.array([0.2, 0.3, 1.0]) / np.linalg.norm([0.2, 0.3, 1.0])
    ang, pitch = math.radians(10), 0.5
    motion_at = lambda f: RigidTransform(Quaternion.from_axis_angle(axis, f * ang), f * pitch * axis)
    scan, n, c = distorted_plane_scan(motion_at, (0.5, -0.3, 1.0), 2.0, MOUNT)
    out = correct_motion(scan, inverse(motion_at(1.0)), MOUNT)
    assert np.abs(out.xyz @ n - c).max() < 1e-9


# --------------------------------------------------------------------------- statistical filter


def test_uniform_ring_unchanged():
    scan = ring_scan(circle_ring(100))
    out = statistical_filter(scan, 10, 2.0)
    assert np.array_equal(out.xyz, scan.xyz)


def test_lofted_point_is_removed():
    pts = circle_ring(100, z=-1.6)
    pts[37, 2] += 10.0
    out = statistical_filter(ring_scan(pts), 10, 2.0)
    assert len(out) == 99
    kept = {tuple(p) for p in out.xyz.tolist()}
    assert tuple(pts[37]) not in kept


def test_empty_scan_and_small_ring_pass_through():
    empty = ring_scan(np.zeros((0, 3)))
    assert len(statistical_filter(empty)) == 0
    small = ring_scan(np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 100.0], [1.0, 0.0, 0.0]]))
    assert len(statistical_filter(small, k=10)) == 3
    with pytest.raises(DomainError):
        statistical_filter(small, k=0)


def test_knn_mean_matches_brute_force_oracle():
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(60, 3))
    got = knn_mean_distances(ring_scan(pts), 4)
    d = np.linalg.norm(pts[:, None] - pts[None], axis=2)
    np.fill_diagonal(d, np.inf)
    assert np.allclose(got, np.sort(d, axis=1)[:, :4].mean(axis=1), atol=1e-12)


def passes(scan, n=3):
    counts = [len(scan)]
    for _ in range(n):
        scan = statistical_filter(scan)
        counts.append(len(scan))
    return counts


def test_filter_reaches_fixed_point_on_simulated_scan():
    from roadval.synthetic import SensorSpec, SceneSpec, Simulation, TrajectorySpec

    sim = Simulation(SceneSpec(), SensorSpec(), TrajectorySpec(duration=0.5), seed=0)
    scan = correct_motion(sim.scan(0).scan, sim.ego(0), sim.sensor.mount())
    counts = passes(scan)
    removed = -np.diff(counts)
    assert removed[1] <= removed[0], f"pass counts {counts}"
    assert removed[-1] == 0, f"pass counts {counts}"


def test_filters_keep_order():
    rng = np.random.default_rng(5)
    pts = circle_ring(200) + rng.normal(scale=0.05, size=(200, 3))
    scan = ring_scan(pts)
    out = median_filter(statistical_filter(scan))
    assert np.all(np.diff(out.time_fraction) > 0)


# --------------------------------------------------------------------------- median filter


def test_collinear_ring_unchanged():
    x = np.linspace(0, 10, 21)
    pts = np.column_stack((x, 2 * x, -x))
    out = median_filter(ring_scan(pts), 3)
    assert np.array_equal(out.xyz, pts)


def test_single_spike_suppressed():
    x = np.linspace(0, 5, 11)
    pts = np.column_stack((x, np.zeros_like(x), np.zeros_like(x)))
    pts[5, 2] = 0.5
    out = median_filter(ring_scan(pts), 5)
    assert abs(out.xyz[5, 2]) < 1e-12


def test_window_validation():
    scan = ring_scan(circle_ring(10))
    for w in (1, 2, 4):
        with pytest.raises(DomainError):
            median_filter(scan, w)


def median_oracle(pts, window):
    n, h = len(pts), window // 2
    out = np.empty_like(pts)
    for i in range(n):
        r = min(h, i, n - 1 - i)
        seg = pts[i - r : i + r + 1]
        for c in range(3):
            out[i, c] = sorted(seg[:, c])[len(seg) // 2]
    return out


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 40), st.sampled_from([3, 5, 7, 9]), st.integers(0, 10_000))
def test_median_matches_sort_oracle(n, window, seed):
    pts = np.random.default_rng(seed).normal(size=(n, 3))
    out = median_filter(ring_scan(pts), window)
    assert np.array_equal(out.xyz, median_oracle(pts, window))


def test_median_is_per_ring():
    a = circle_ring(20, radius=5)
    b = circle_ring(20, radius=9, z=1.0)
    scan = CorrectedScan(0, np.concatenate((a, b)), np.repeat([0, 1], 20), np.zeros(40))
    out = median_filter(scan, 5)
    assert np.allclose(out.xyz[20:, 2], 1.0)
    assert np.allclose(out.xyz[:20, 2], 0.0)
