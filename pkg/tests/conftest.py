import math
import os
import sys

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def geom():
    from berthtrack.geometry import ShipGeometry
    return ShipGeometry()


def random_polygon(rng, center, radius, n=None):
    """Star-shaped (hence simple) polygon around ``center``."""
    n = n or int(rng.integers(3, 9))
    # strictly increasing angles over one turn keep the ring simple
    gaps = rng.uniform(0.2, 1.0, n)
    ang = rng.uniform(0, 2 * math.pi) + 2 * math.pi * np.cumsum(gaps) / gaps.sum()
    rad = rng.uniform(0.3, 1.0, n) * radius
    return np.c_[center[0] + rad * np.cos(ang), center[1] + rad * np.sin(ang)]


def random_scene(rng, k=None, spread=10.0):
    from berthtrack.geometry import ObstacleSet
    k = k or int(rng.integers(1, 5))
    polys = [random_polygon(rng, rng.uniform(-spread, spread, 2), rng.uniform(0.5, 4.0)) for _ in range(k)]
    return ObstacleSet(tuple(polys))


@pytest.fixture
def straight_traj():
    """Ten-metre/minute style straight run along +x sampled every 5 s."""
    from berthtrack.scenario import DesiredTrajectory
    n = 61
    t = np.arange(n) * 5.0
    poses = np.c_[0.1 * t, np.zeros(n), np.zeros(n)]
    vels = np.c_[np.full(n, 0.1), np.zeros(n), np.zeros(n)]
    return DesiredTrajectory(5.0, poses, vels)


@pytest.fixture
def quiet_episode():
    """Noise-free episode settings with zero initial error."""
    from berthtrack.env import EpisodeConfig
    return EpisodeConfig(init_pos=0.0, init_u=0.0, init_vm=0.0, init_psi_deg=0.0, init_r_deg=0.0,
                         process_noise=False, observation_noise=False)


_ACCEPTANCE_LINES = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Call with (number, passed, detail); the line is echoed live and in the summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_LINES, [])
    tr = request.config.pluginmanager.get_plugin("terminalreporter")

    def report(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        lines.append(line)
        if tr is not None:
            tr.write_line("")
            tr.write_line(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
