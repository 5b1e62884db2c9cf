import numpy as np
import pytest

from osrlie import synth
from osrlie.cloud import PointCloud


@pytest.fixture(scope="session")
def scenes():
    return synth.default_scenes()


@pytest.fixture(scope="session")
def inclined(scenes):
    return synth.generate(scenes["inclined"])


def plane_cloud(n, beta, sigma, seed, extent=100.0):
    """Uniform (x, y) on a square with z = plane + N(0, sigma^2)."""
    rng = np.random.default_rng(seed)
    xy = rng.uniform(-extent, extent, size=(n, 2))
    z = beta[0] + beta[1] * xy[:, 0] + beta[2] * xy[:, 1] + rng.normal(0.0, sigma, n)
    return PointCloud(np.column_stack([xy, z]))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
