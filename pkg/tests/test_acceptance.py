"""End-to-end acceptance criteria, each at its stated tolerance and time budget.

Every test records one PASS/FAIL line, printed in the terminal summary.
"""

import csv
import json
import math
import shutil
import time

import numpy as np
import pytest
from conftest import SHADOW_EVERY, SHADOW_P
from scipy.spatial.transform import Rotation

from roadval.accumulation import AccumulationWindow, accumulate, relative_pose
from roadval.cli import main
from roadval.dataset_io import LidarScan, Pose
from roadval.errors import NoSeedError
from roadval.geometry import (
    CameraModel,
    Quaternion,
    RigidTransform,
    compose,
    inverse,
    project,
    project_many,
    quat_rotate,
    rot_y,
    transform_point,
)
from roadval.geospatial import histogram, read_records_csv
from roadval.road_extraction import (
    RingModel,
    TrajectoryArc,
    extract_road,
    ring_models_from_mount,
    seed_intersection,
    steering_from_motion,
    trajectory_arc,
)
from roadval.scan_processing import correct_motion, ego_from_poses, median_filter, statistical_filter
from roadval.synthetic import SceneSpec, SensorSpec, Simulation, SynthConfig, TrajectorySpec, simulate
from roadval.validation import BANDS, band_of, project_cloud

# --------------------------------------------------------------------------- oracles


def rot_oracle(w, x, y, z):
    return np.array(
        [
            [w * w + x * x - y * y - z * z, 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), w * w - x * x + y * y - z * z, 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), w * w - x * x - y * y + z * z],
        ]
    )


def h_oracle(t: RigidTransform) -> np.ndarray:
    m = np.eye(4)
    m[:3, :3] = rot_oracle(*t.rotation.as_tuple())
    m[:3, 3] = t.translation
    return m


def rodrigues(axis, angles):
    """Stack of rotation matrices about a unit ``axis``."""
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    a = np.asarray(angles)[:, None, None]
    return np.eye(3) + np.sin(a) * k + (1 - np.cos(a)) * (k @ k)


def filtered_scan(sim, k):
    """One simulated scan through correction and both filters, with exact poses."""
    start, end = sim.vehicle_pose(k, 0.0), sim.vehicle_pose(k, 1.0)
    corrected = correct_motion(sim.scan(k).scan, ego_from_poses(start, end), sim.mount)
    arc = trajectory_arc(steering_from_motion(compose(inverse(start), end)))
    return median_filter(statistical_filter(corrected)), arc, start


# --------------------------------------------------------------------------- 1


def test_geometry_golden_suite(criterion):
    with criterion(1, "geometry golden suite") as info:
        rng = np.random.default_rng(101)
        t0 = time.perf_counter()
        worst = 0.0
        for _ in range(1000):
            qa = Quaternion.normalized(*rng.normal(size=4))
            qb = Quaternion.normalized(*rng.normal(size=4))
            a = RigidTransform(qa, rng.normal(scale=5, size=3))
            b = RigidTransform(qb, rng.normal(scale=5, size=3))
            v = rng.normal(scale=10, size=3)
            errs = [
                np.abs((qa * qb).as_matrix() - rot_oracle(*qa.as_tuple()) @ rot_oracle(*qb.as_tuple())).max(),
                np.abs(quat_rotate(qa, v) - rot_oracle(*qa.as_tuple()) @ v).max(),
                np.abs(h_oracle(compose(a, b)) - h_oracle(a) @ h_oracle(b)).max(),
                np.abs(h_oracle(inverse(a)) - np.linalg.inv(h_oracle(a))).max(),
                np.abs(transform_point(a, v) - (h_oracle(a) @ np.append(v, 1.0))[:3]).max(),
            ]
            cam = CameraModel(*rng.uniform(200, 900, 2), 320.0, 180.0, 640, 360, a)
            p = transform_point(inverse(a), [*rng.uniform(-3, 3, 2), rng.uniform(1, 40)])
            px = project(cam, p)
            k = cam.intrinsic_matrix() @ h_oracle(a) @ np.append(p, 1.0)
            errs.append(abs(px.u - k[0] / k[2]) + abs(px.v - k[1] / k[2]))
            uv, front = project_many(cam, p[None])
            errs.append(np.abs(uv[0] - [px.u, px.v]).max())
            worst = max(worst, *errs)
        elapsed = time.perf_counter() - t0
        info["max_err"] = f"{worst:.1e}"
        assert worst < 1e-9

        # trivial cases
        cam = CameraModel(500.0, 500.0, 320.0, 180.0, 640, 360, RigidTransform.identity())
        assert project(cam, [0.0, 0.0, 3.0]) == project(cam, [0.0, 0.0, 1.0])
        assert (project(cam, [0.0, 0.0, 3.0]).u, project(cam, [0.0, 0.0, 3.0]).v) == (320.0, 180.0)
        assert project_cloud(np.array([[0.0, 0.0, 3.0]]), cam, (640, 360)).tolist() == [[180, 320]]
        h = math.sqrt(0.5)
        turned = quat_rotate(Quaternion.normalized(h, 0.0, 0.0, h), [1.0, 0.0, 0.0])
        # sqrt(1/2) is not representable; exact up to one rounding of the unit vector
        assert np.abs(turned - [0.0, 1.0, 0.0]).max() <= 2.3e-16
        roll = cam.with_extrinsic(RigidTransform(Quaternion.normalized(h, 0.0, 0.0, h), [0.0, 0.0, 0.0]))
        assert project_cloud(np.array([[0.0, -1.0, 5.0]]), roll, (640, 360)).tolist() == [[180, 420]]
        info["runtime"] = f"{elapsed:.2f}"
        assert elapsed < 1.0


# --------------------------------------------------------------------------- 2


def distorted_plane(axis, angle, shift, normal, offset, mount, n=20_000, seed=0):
    """Scan of the plane ``normal . x = offset`` from a vehicle moving ``f * (angle about axis, shift)``."""
    rng = np.random.default_rng(seed)
    normal = np.asarray(normal, float) / np.linalg.norm(normal)
    u = np.cross(normal, [1.0, 0.0, 0.0] if abs(normal[0]) < 0.9 else [0.0, 1.0, 0.0])
    u /= np.linalg.norm(u)
    v = np.cross(normal, u)
    ab = rng.uniform(-20, 20, size=(n, 2))
    world = offset * normal + ab[:, :1] * u + ab[:, 1:] * v
    f = np.sort(rng.random(n))
    r = rodrigues(axis, f * angle)
    vehicle = np.einsum("nji,nj->ni", r, world - f[:, None] * np.asarray(shift))
    m_rot = Rotation.from_quat(np.roll(mount.rotation.as_tuple(), -1)).as_matrix()
    sensor = (vehicle - mount.translation) @ m_rot
    end = RigidTransform(Quaternion.from_axis_angle(axis, angle), shift)
    return LidarScan(0, sensor, np.zeros(n, dtype=np.int64), f), normal, end


def test_motion_correction_restoration(criterion):
    with criterion(2, "motion-correction restoration") as info:
        mount = RigidTransform(rot_y(math.radians(7.0)), [1.2, 0.0, 1.6])
        yaw, step = math.radians(10.0), 0.5
        cases = []
        for ax in ([0.0, 0.0, 1.0], [0.2, 0.3, 1.0], [0.0, 1.0, 0.2]):
            ax = np.array(ax) / np.linalg.norm(ax)
            cases.append((ax, step * ax))  # screw: turn about and slide along one axis
        cases.append((np.array([0.0, 0.0, 1.0]), np.array([step, 0.0, 0.0])))  # forward + yaw
        planes = [((0.0, 0.0, 1.0), -1.6), ((1.0, 0.2, 0.1), 12.0), ((0.4, -1.0, 0.3), 6.0)]
        worst, elapsed = 0.0, 0.0
        for ax, shift in cases:
            raw = 0.0
            for normal, offset in planes:
                scan, unit, end = distorted_plane(ax, yaw, shift, normal, offset, mount)
                raw = max(raw, np.abs(transform_point(mount, scan.xyz) @ unit - offset).max())
                t0 = time.perf_counter()
                out = correct_motion(scan, ego_from_poses(RigidTransform.identity(), end), mount)
                elapsed += time.perf_counter() - t0
                worst = max(worst, np.abs(out.xyz @ unit - offset).max())
            assert raw > 0.05  # the uncorrected scan really is distorted
        info["max_residual_m"] = f"{worst:.1e}"
        info["correction_s"] = f"{elapsed:.3f}"
        assert worst < 1e-3
        assert elapsed < 1.0


# --------------------------------------------------------------------------- 3


def test_boundary_extraction_oracle(criterion):
    with criterion(3, "boundary-extraction oracle") as info:
        t0 = time.perf_counter()
        sensor = SensorSpec()
        sim = Simulation(SceneSpec(half_width=3.0, curb_height=0.12), sensor, TrajectorySpec(duration=10.0), seed=3)
        assert sim.n_frames == 100
        models = ring_models_from_mount(sim.mount)
        assert len(models) == 6
        step = math.radians(360.0 / sensor.n_azimuth)
        hw = sim.scene_spec.half_width
        good, worst, monotone = 0, 0.0, True
        for k in range(sim.n_frames):
            bounds = {}
            filtered, arc, _ = filtered_scan(sim, k)
            for thr in (5.0, 10.0, 20.0):
                road = extract_road(filtered, arc, models, math.radians(thr))
                bounds[thr] = road.boundaries
                if thr != 10.0:
                    continue
                ok = set(road.boundaries) == {m.ring for m in models}
                slices = filtered.ring_slices()
                for ring, (hi, lo) in road.boundaries.items():
                    pts = filtered.xyz[slices[ring]]
                    for i, side in ((hi, hw), (lo, -hw)):
                        spacing = step * math.hypot(*(pts[i, :2] - sim.mount.translation[:2]))
                        err = abs(pts[i, 1] - side) / spacing  # straight path: vehicle y is the road lateral
                        worst = max(worst, err)
                        ok &= err <= 1.0
                good += ok
            for ring in bounds[10.0]:
                (h5, l5), (h10, l10), (h20, l20) = (bounds[t][ring] for t in (5.0, 10.0, 20.0))
                monotone &= h5 <= h10 <= h20 and l5 >= l10 >= l20
        elapsed = time.perf_counter() - t0
        info["frames_ok"] = f"{good}/100"
        info["worst_err_spacings"] = f"{worst:.2f}"
        assert good == 100
        assert monotone
        assert elapsed < 5.0


# --------------------------------------------------------------------------- 4


def test_seed_intersection_residuals(criterion):
    with criterion(4, "seed-intersection residuals") as info:
        rng = np.random.default_rng(404)
        n, behind, worst = 0, 0, 0.0
        while n < 1000:
            R = rng.uniform(2.0, 500.0) * rng.choice([-1.0, 1.0])
            d, rn = rng.uniform(-3.0, 5.0), rng.uniform(3.0, 30.0)
            D = math.hypot(R, d)
            if not abs(D - abs(R)) + 1e-6 < rn < D + abs(R) - 1e-6:
                continue
            try:
                p = seed_intersection(TrajectoryArc(R), RingModel(0, d, rn))
            except NoSeedError:
                behind += 1  # both crossings behind the vehicle
                continue
            res = max(abs(math.hypot(p[0], p[1] - R) - abs(R)), abs(math.hypot(p[0] - d, p[1]) - rn))
            worst = max(worst, res)
            n += 1
        info["max_residual_m"] = f"{worst:.1e}"
        info["skipped_behind"] = behind
        assert worst < 1e-9
        for d, rn in ((0.0, 5.0), (-1.3, 7.25), (2.5, 19.0)):
            assert seed_intersection(TrajectoryArc.straight_line(), RingModel(0, d, rn)).tolist() == [d + rn, 0.0, 0.0]


# --------------------------------------------------------------------------- 5


@pytest.mark.parametrize("curve", [None, 60.0], ids=["straight", "curved"])
def test_accumulation_consistency(criterion, curve):
    with criterion(5, f"accumulation consistency, {'straight' if curve is None else 'curved'} road") as info:
        sim = Simulation(SceneSpec(curve_radius=curve), SensorSpec(), TrajectorySpec(duration=4.0), seed=5)
        models = ring_models_from_mount(sim.mount)
        frames, world = [], []
        for k in range(sim.n_frames):
            # the last point before a curb is the riser foot, so trim it to keep only road-surface points
            filtered, arc, start = filtered_scan(sim, k)
            road = extract_road(filtered, arc, models, trim=True)
            frames.append((Pose(sim.timestamp(k), start.translation, start.rotation), road))
            world.append(transform_point(start, road.points))
        win = AccumulationWindow(20, 5)
        on_surface, vs_direct = 0.0, 0.0
        for ref in range(0, sim.n_frames, 3):
            cloud = accumulate(frames, ref, win)
            w = transform_point(frames[ref][0].transform(), cloud.points)
            on_surface = max(on_surface, np.abs(w[:, 2] - sim.scene.road_height(w[:, 0], w[:, 1])).max())
            direct = np.concatenate([world[i] for i in sorted(set(cloud.source.tolist()))])
            vs_direct = max(vs_direct, np.abs(w - direct).max())
        a, b = 25, 31
        ca, cb = accumulate(frames, a, win), accumulate(frames, b, win)
        mapped = transform_point(relative_pose(frames[b][0], frames[a][0]), ca.points[np.isin(ca.source, cb.source)])
        invariance = np.abs(mapped - cb.points[np.isin(cb.source, ca.source)]).max()
        info["surface_m"] = f"{on_surface:.1e}"
        info["invariance_m"] = f"{invariance:.1e}"
        assert on_surface < 1e-9
        assert vs_direct < 1e-9
        assert invariance < 1e-9


# --------------------------------------------------------------------------- 6


def records(run):
    return read_records_csv(run / "records.csv")


def test_metric_exactness(criterion, validated):
    with criterion(6, "metric exactness") as info:
        perfect = records(validated())
        assert len(perfect) >= 50
        assert all(r.percent == 100.0 for r in perfect)
        flipped = records(validated("flip10"))
        assert len(flipped) >= 50 and min(r.n_points for r in flipped) >= 1000
        mean = float(np.mean([r.percent for r in flipped]))
        info["flip10_mean"] = f"{mean:.2f}"
        assert abs(mean - 90.0) <= 1.5
        sweep = np.round(np.arange(0, 100001) / 1000, 3)
        counts = {b: 0 for b in BANDS}
        for p in sweep:
            counts[band_of(float(p))] += 1
        assert sum(counts.values()) == len(sweep)
        assert counts == {"ge95": 5001, "p90_95": 5000, "p85_90": 5000, "lt85": 85000}


# --------------------------------------------------------------------------- 7


def test_distribution_shape(criterion, validated):
    with criterion(7, "distribution shape") as info:
        level = 100.0 * (1.0 - SHADOW_P)
        mixed = records(validated("shadow_mix"))
        shadowed = [r for k, r in enumerate(mixed) if k % SHADOW_EVERY == 0]
        assert 0 < len(shadowed) < len(mixed)
        hist = histogram(mixed)
        modes = [hist.edges()[i] for i in hist.modes()]
        info["modes"] = "/".join(f"[{lo:g},{hi:g})" for lo, hi in modes)
        assert len(modes) == 2
        (lo_a, hi_a), (lo_b, hi_b) = modes
        assert abs((lo_a + hi_a) / 2 - level) <= 1.0
        assert lo_b >= 95.0
        clean = histogram(records(validated()))
        (only,) = clean.modes()
        assert clean.edges()[only][0] >= 95.0


# --------------------------------------------------------------------------- 8


def test_comparison_workflow(criterion, validated, tmp_path):
    with criterion(8, "comparison workflow") as info:
        good, worse = validated("flip05"), validated("flip07")
        ab, ba = tmp_path / "ab.json", tmp_path / "ba.json"
        assert main(["compare", "--a", str(good), "--b", str(worse), "--out", str(ab)]) == 0
        assert main(["compare", "--a", str(worse), "--b", str(good), "--out", str(ba)]) == 0
        fwd, rev = json.loads(ab.read_text()), json.loads(ba.read_text())
        (row,) = fwd["datasets"]
        (back,) = rev["datasets"]
        info["difference"] = f"{row['difference']:.3f}"
        assert abs(row["difference"] - 2.0) <= 0.2
        assert back["difference"] == -row["difference"]
        assert (back["mean_a"], back["mean_b"]) == (row["mean_b"], row["mean_a"])
        assert fwd["overall"]["winner"] == "a" and rev["overall"]["winner"] == "b"


# --------------------------------------------------------------------------- 9


OUTPUTS = ("report.json", "records.csv", "points.geojson", "histogram.csv", "points_unlocated.csv")


def test_determinism_and_performance(criterion, long_dataset, tmp_path, capsys):
    with criterion(9, "determinism and performance, 200 frames") as info:
        assert len((long_dataset / "frames.csv").read_text().splitlines()) - 1 == 200
        runs, times = [], []
        for name, jobs in (("a", 1), ("b", 1), ("c", 4)):
            out = tmp_path / name
            t0 = time.perf_counter()
            assert main(["validate", "--dataset", str(long_dataset), "--out", str(out), "--jobs", str(jobs)]) == 0
            times.append(time.perf_counter() - t0)
            runs.append({f: (out / f).read_bytes() for f in OUTPUTS if (out / f).exists()})
        capsys.readouterr()
        info["validate_s"] = "/".join(f"{t:.1f}" for t in times)
        assert runs[0] == runs[1] == runs[2]
        rep = json.loads(runs[0]["report.json"])
        assert rep["frames"] >= 190
        assert max(times) < 60.0


# --------------------------------------------------------------------------- 10


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    cfg = SynthConfig(trajectory=TrajectorySpec(duration=0.6), dataset_id="small")
    return simulate(cfg, tmp_path_factory.mktemp("small") / "ds", seed=2)


def mutations(root, rng):
    """``(description, apply)`` pairs; each ``apply`` damages one file of a dataset copy."""
    scan = sorted((root / "scans").iterdir())[2].relative_to(root)
    mask = sorted((root / "masks").iterdir())[1].relative_to(root)
    text = ["manifest.json", "calib.txt", "poses.csv", "frames.csv", "gps.csv", str(scan)]
    out = []

    def add(name, fn):
        out.append((name, fn))

    for rel in text + [str(mask)]:
        size = (root / rel).stat().st_size
        for cut in sorted(rng.choice(size, 3, replace=False)):
            add(f"{rel} truncated at {cut}", lambda d, rel=rel, cut=cut: (d / rel).write_bytes((d / rel).read_bytes()[:cut]))
        for _ in range(3):
            pos = int(rng.integers(size))
            val = int(rng.integers(256))

            def flip(d, rel=rel, pos=pos, val=val):
                b = bytearray((d / rel).read_bytes())
                b[pos] = val
                (d / rel).write_bytes(bytes(b))

            add(f"{rel} byte {pos} := {val}", flip)
        add(f"{rel} emptied", lambda d, rel=rel: (d / rel).write_bytes(b""))
        add(f"{rel} deleted", lambda d, rel=rel: (d / rel).unlink())
    for rel in text:
        n = len((root / rel).read_text().splitlines())
        i = int(rng.integers(1, n))

        def drop(d, rel=rel, i=i):
            lines = (d / rel).read_text().splitlines(keepends=True)
            (d / rel).write_text("".join(lines[:i] + lines[i + 1 :]))

        def dup(d, rel=rel, i=i):
            lines = (d / rel).read_text().splitlines(keepends=True)
            (d / rel).write_text("".join(lines[: i + 1] + lines[i:]))

        def junk(d, rel=rel, i=i):
            lines = (d / rel).read_text().splitlines(keepends=True)
            lines[i] = "nan,inf,-,\x00\xff,1e999,,\n"
            (d / rel).write_text("".join(lines))

        add(f"{rel} line {i + 1} dropped", drop)
        add(f"{rel} line {i + 1} duplicated", dup)
        add(f"{rel} line {i + 1} garbled", junk)
    return out


def test_robustness(criterion, small_dataset, validated, tmp_path, capsys):
    with criterion(10, "robustness") as info:
        rng = np.random.default_rng(1010)
        cases = mutations(small_dataset, rng)
        codes = {0: 0, 2: 0}
        for k, (name, apply) in enumerate(cases):
            d = tmp_path / f"m{k}"
            shutil.copytree(small_dataset, d)
            apply(d)
            for argv in (["validate", "--dataset", str(d), "--out", str(d / "run")], ["inspect", "--dataset", str(d)]):
                code = main(argv)
                err = capsys.readouterr().err
                assert code in codes, f"{name}: {argv[0]} exited {code}: {err}"
                codes[code] += 1
                if code == 2:
                    doc = json.loads(err)
                    assert set(doc) == {"error", "file", "line", "message"}, name
                    assert doc["file"] and doc["message"], f"{name}: {doc}"
                    assert doc["line"] is None or (isinstance(doc["line"], int) and doc["line"] >= 1), name
        info["cases"] = len(cases)
        info["exit0/exit2"] = f"{codes[0]}/{codes[2]}"

        # base dataset: GPS fixes at 0, 1, 4 and 5 s; frames between 1 s and 4 s have no location
        with open(validated() / "records.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        lost = [k for k, r in enumerate(rows) if not r["lat"]]
        info["unlocated_frames"] = len(lost)
        assert lost == list(range(11, 40))
        assert all(rows[k]["status"] == "ok" and rows[k]["percent"] and not rows[k]["lon"] for k in lost)
        geo = json.loads((validated() / "points.geojson").read_text())
        assert len(geo["features"]) == len(rows) - len(lost)
