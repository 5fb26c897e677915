"""Session-wide synthetic datasets shared by the CLI and acceptance suites."""

import time
from contextlib import contextmanager

import pytest

from roadval.cli import main
from roadval.synthetic import Box, SceneSpec, SynthConfig, TrajectorySpec, simulate

SHADOW_P = 0.16  # shadowed frames should score 100 * (1 - p)
SHADOW_EVERY = 3

BASE_MASK_SETS = {
    "flip10": [{"mode": "uniform_flip", "p": 0.10}],
    "flip05": [{"mode": "uniform_flip", "p": 0.05}],
    "flip07": [{"mode": "uniform_flip", "p": 0.07}],
    "shadow_mix": [{"mode": "shadow_band", "rows": [0, 360], "p": SHADOW_P, "frames": [0, 10_000, SHADOW_EVERY]}],
}


@pytest.fixture(scope="session")
def base_config():
    return SynthConfig(
        scene=SceneSpec(),
        trajectory=TrajectorySpec(duration=5.0, gps_outages=[(1.5, 3.5)]),
        condition="good_quality",
        dataset_id="base",
        mask_sets=BASE_MASK_SETS,
    )


@pytest.fixture(scope="session")
def base_dataset(tmp_path_factory, base_config):
    """Straight 6 m road, 50 frames, GPS lost between 1.5 s and 3.5 s."""
    return simulate(base_config, tmp_path_factory.mktemp("base") / "ds", seed=11)


@pytest.fixture(scope="session")
def long_dataset(tmp_path_factory):
    """200 frames on a gentle bend with one parked box."""
    cfg = SynthConfig(
        scene=SceneSpec(curve_radius=120.0, obstacles=[Box((60.0, 4.5, 0.75), (4.0, 1.8, 1.5))]),
        trajectory=TrajectorySpec(duration=20.0),
        dataset_id="long",
    )
    return simulate(cfg, tmp_path_factory.mktemp("long") / "ds", seed=12)


@pytest.fixture(scope="session")
def validated(tmp_path_factory, base_dataset):
    """Cached ``roadval validate`` runs over the base dataset, keyed by mask set."""
    runs = {}

    def get(masks=None, label=None):
        key = masks or "masks"
        if key not in runs:
            out = tmp_path_factory.mktemp(f"run_{key}")
            argv = ["validate", "--dataset", str(base_dataset), "--out", str(out), "--label", label or key]
            if masks:
                argv += ["--masks", masks]
            assert main(argv) == 0
            runs[key] = out
        return runs[key]

    return get


# --------------------------------------------------------------------------- acceptance reporting


def pytest_configure(config):
    config._acceptance_lines = []


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def criterion(request):
    """``with criterion(n, title) as info:`` records one PASS/FAIL line for criterion ``n``."""
    lines = request.config._acceptance_lines

    @contextmanager
    def run(n, title):
        info = {}
        t0 = time.perf_counter()
        try:
            yield info
        except BaseException as exc:
            msg = str(exc).strip().splitlines()[0] if str(exc).strip() else type(exc).__name__
            lines.append(f"criterion {n:2d} FAIL  {title}: {msg}")
            raise
        detail = ", ".join(f"{k}={v}" for k, v in info.items())
        lines.append(f"criterion {n:2d} PASS  {title} ({time.perf_counter() - t0:.2f} s{', ' + detail if detail else ''})")

    return run
