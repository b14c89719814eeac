"""One-dimensional surge station-keeping task for smoke-testing the learner."""
from __future__ import annotations

import math

import numpy as np


class StationKeepingTask:
    """Point mass on a line with linear drag; hold position at the origin.

    The first normalized action component sets the thrust in
    ``[-max_thrust, max_thrust]``; the other two are ignored. The reward per
    step is ``exp(-(x / scale)**2)``, so returns are positive and an episode
    of ``horizon / decision_dt`` steps earns at most that many points.
    Leaving ``|x| > bound`` ends the episode.
    """

    obs_dim = 2

    def __init__(self, decision_dt: float = 2.0, horizon: float = 100.0, mass: float = 1.0,
                 drag: float = 0.5, max_thrust: float = 0.5, init_range: float = 2.0,
                 scale: float = 0.5, bound: float = 6.0, substeps: int = 20):
        self.decision_dt = float(decision_dt)
        self.horizon = float(horizon)
        self.mass, self.drag, self.max_thrust = mass, drag, max_thrust
        self.init_range, self.scale, self.bound = init_range, scale, bound
        self.substeps = int(substeps)
        self.input_scale = np.array([init_range, 1.0])

    def reset(self, rng):
        self.x = float(rng.uniform(-self.init_range, self.init_range))
        self.v = 0.0
        self.t = 0.0
        return np.array([self.x, self.v])

    def step(self, a01):
        a = float(np.clip(np.asarray(a01, dtype=float).ravel()[0], 0.0, 1.0))
        force = self.max_thrust * (2.0 * a - 1.0)
        h = self.decision_dt / self.substeps
        for _ in range(self.substeps):
            acc = (force - self.drag * self.v) / self.mass
            self.x += h * self.v + 0.5 * h * h * acc
            self.v += h * acc
        self.t += self.decision_dt
        s = np.array([self.x, self.v])
        if abs(self.x) > self.bound:
            return s, 0.0, True, False
        r = math.exp(-(self.x / self.scale) ** 2)
        return s, r, False, self.t >= self.horizon - 1e-9
