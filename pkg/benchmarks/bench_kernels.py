"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Micro-benchmarks run every importable backend in-process on inputs shaped
like one simulated ring or frame.  The end-to-end rows time the per-scan
stages on a simulated scan in a child process per backend, so the backend is
chosen exactly as in production (``ROADVAL_PURE_PYTHON``).
"""

from __future__ import annotations

import argparse
import json
import os
import pathlib
import subprocess
import sys
import timeit

import numpy as np

from roadval import _kernels

PER_SCAN = """
import json, math, sys, timeit
from roadval import _kernels
from roadval.geometry import compose, inverse
from roadval.road_extraction import extract_road, ring_models_from_mount, steering_from_motion, trajectory_arc
from roadval.scan_processing import correct_motion, ego_from_poses, median_filter, statistical_filter
from roadval.synthetic import SceneSpec, SensorSpec, Simulation, TrajectorySpec
from roadval.validation import project_cloud

sim = Simulation(SceneSpec(roughness=0.01), SensorSpec(), TrajectorySpec(duration=0.3), seed=0)
scan, models = sim.scan(1).scan, ring_models_from_mount(sim.mount)
start, end = sim.vehicle_pose(1, 0.0), sim.vehicle_pose(1, 1.0)
arc = trajectory_arc(steering_from_motion(compose(inverse(start), end)))
cam = sim.camera.with_extrinsic(compose(sim.camera.extrinsic, inverse(sim.mount)))

def run():
    c = correct_motion(scan, ego_from_poses(start, end), sim.mount)
    f = median_filter(statistical_filter(c))
    road = extract_road(f, arc, models)
    project_cloud(road.points, cam, (640, 360))

run()
best = min(timeit.repeat(run, number=1, repeat=int(sys.argv[1])))
print(json.dumps({"backend": _kernels.BACKEND, "seconds": best, "points": len(scan)}))
"""


def inputs(seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    a = np.linspace(-np.pi, np.pi, 900, endpoint=False)
    ring = np.column_stack((8 * np.cos(a), 8 * np.sin(a), rng.normal(scale=0.01, size=a.size)))
    cloud = rng.uniform([-20, -20, -2], [60, 20, 2], size=(60_000, 3))
    cloud[:, 0] = np.abs(cloud[:, 0]) + 1.0
    return {"ring": ring, "cloud": cloud}


def micro(repeat: int) -> list[dict]:
    data = inputs()
    ring, cloud = data["ring"], data["cloud"]
    rot = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])  # x forward -> camera z
    cases = {
        "knn_mean_distance(900 pts, k=10)": lambda k: k.knn_mean_distance(ring, 10),
        "ring_median(900 pts, w=5)": lambda k: k.ring_median(ring, 5),
        "smoothness_walk(900 pts)": lambda k: k.smoothness_walk(ring, 450, np.radians(10.0)),
        "project_to_pixels(60k pts)": lambda k: k.project_to_pixels(cloud, rot, np.zeros(3), 300.0, 300.0, 320.0, 180.0, 640, 360),
    }
    rows = []
    for name, fn in cases.items():
        for backend, mod in _kernels.backends().items():
            fn(mod)
            number = 20
            best = min(timeit.repeat(lambda: fn(mod), number=number, repeat=repeat)) / number
            rows.append({"case": name, "backend": backend, "seconds": best})
    return rows


def end_to_end(repeat: int) -> list[dict]:
    rows = []
    for backend in _kernels.backends():
        env = dict(os.environ, ROADVAL_PURE_PYTHON="1" if backend == "python" else "0")
        out = subprocess.run([sys.executable, "-c", PER_SCAN, str(repeat)], env=env, capture_output=True, text=True, check=True)
        doc = json.loads(out.stdout)
        rows.append({"case": f"per-scan stages ({doc['points']} pts)", "backend": doc["backend"], "seconds": doc["seconds"]})
    return rows


def table(rows: list[dict]) -> str:
    by_case: dict[str, dict[str, float]] = {}
    for r in rows:
        by_case.setdefault(r["case"], {})[r["backend"]] = r["seconds"]
    names = list(_kernels.backends())
    lines = [f"{'case':40s}" + "".join(f"{n:>14s}" for n in names) + f"{'speedup':>10s}"]
    for case, t in by_case.items():
        cells = "".join(f"{t[n] * 1e3:11.3f} ms" if n in t else f"{'-':>14s}" for n in names)
        speed = t["python"] / t["cython"] if "cython" in t and t["cython"] > 0 else float("nan")
        lines.append(f"{case:40s}{cells}{speed:9.1f}x")
    return "\n".join(lines)


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--json", type=pathlib.Path, default=None)
    args = p.parse_args(argv)
    if "cython" not in _kernels.backends():
        print("compiled backend not built; only the fallback is timed", file=sys.stderr)
    rows = micro(args.repeat) + end_to_end(args.repeat)
    print(f"active backend: {_kernels.BACKEND}")
    print(table(rows))
    if args.json:
        args.json.write_text(json.dumps(rows, indent=2) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
