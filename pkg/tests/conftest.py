import numpy as np
import pytest

from depthpose.dataio import generate_synthetic, preset_scene
from depthpose.geometry import CameraIntrinsics, Se3Transform, exp_map


@pytest.fixture(scope="session")
def two_plane_64():
    return generate_synthetic(preset_scene("two_plane", 64, 64, n_frames=2))


@pytest.fixture(scope="session")
def two_plane_16():
    return generate_synthetic(preset_scene("two_plane", 16, 16, n_frames=3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_pose(rng, max_angle=2.5, max_trans=2.0) -> Se3Transform:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0, max_angle)
    return exp_map(np.concatenate([axis * angle, rng.uniform(-max_trans, max_trans, 3)]))


def small_K(width=32, height=32):
    return CameraIntrinsics(0.9 * width, 0.9 * width, (width - 1) / 2, (height - 1) / 2, width, height)


# criterion verdicts, repeated in the terminal summary so they survive output capture
ACCEPTANCE = []


def verdict(number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE, key=lambda s: (int(s.split()[2].rstrip(":").split(".")[0]), s)):
            terminalreporter.write_line(line)
