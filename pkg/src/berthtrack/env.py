"""Episodic trajectory-tracking environment with obstacle-aware reward."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from typing import NamedTuple, Sequence

import numpy as np

from . import kernels
from .dynamics import (N_PROP, ControlCommand, DynamicsConfig, WindSpec, advance, clip_actuator,
                       n_substeps, wind_series)
from .geometry import (Pose, ShipGeometry, ObstacleSet, body_frame_error, bow_stern_positions,
                       nearest_obstacle_point, obstacle_offset_body, wrap_angle)
from .scenario import DesiredTrajectory

FEATURE_DIM = 32
ABLATION_FEATURE_DIM = 22
OBSTACLE_BLOCK = slice(15, 25)


class Termination(str, Enum):
    HORIZON = "horizon"
    TOLERANCE_E_BOW = "tolerance_e_bow"
    TOLERANCE_E_STERN = "tolerance_e_stern"
    TOLERANCE_C_BOW = "tolerance_c_bow"
    TOLERANCE_C_STERN = "tolerance_c_stern"
    COLLISION = "collision"


def _check_fields(cls, d: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise KeyError(f"unknown {cls.__name__} keys: {sorted(unknown)}")


@dataclass(frozen=True)
class RewardConfig:
    """Reward shaping and tolerance-decay parameters.

    ``e0``/``e_inf`` default to 2 L and B/2 of the default ship; use
    :meth:`for_ship` for other hulls.
    """
    gamma: float = 0.99
    lam: float = 1.0 / 300.0
    e0: float = 6.0
    e_inf: float = 0.245
    c0: float = 1.0
    c_inf: float = 0.5
    b_e: float = math.log(2.0) / 50.0
    b_c: float = math.log(2.0) / 50.0
    u_c: tuple = (-75.0, 75.0, 10.0, 0.0)
    u_std: tuple = (110.0, 110.0, 1.0, 30.0)

    def __post_init__(self):
        if not self.e0 > self.e_inf > 0:
            raise ValueError("need e0 > e_inf > 0")
        if not self.c0 > self.c_inf > 0:
            raise ValueError("need c0 > c_inf > 0")
        if not (self.b_e > 0 and self.b_c > 0):
            raise ValueError("decay rates must be positive")
        if self.lam < 0:
            raise ValueError("effort weight must be non-negative")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        object.__setattr__(self, "u_c", tuple(float(v) for v in self.u_c))
        object.__setattr__(self, "u_std", tuple(float(v) for v in self.u_std))
        if len(self.u_c) != 4 or len(self.u_std) != 4 or min(self.u_std) <= 0:
            raise ValueError("u_c and u_std need 4 entries, u_std positive")

    @classmethod
    def for_ship(cls, geom: ShipGeometry, **kw) -> "RewardConfig":
        kw.setdefault("e0", 2.0 * geom.L)
        kw.setdefault("e_inf", 0.5 * geom.B)
        return cls(**kw)

    def to_dict(self) -> dict:
        return {f.name: (list(getattr(self, f.name)) if isinstance(getattr(self, f.name), tuple)
                         else getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "RewardConfig":
        _check_fields(cls, d)
        return cls(**d)


@dataclass(frozen=True)
class EpisodeConfig:
    """Decision timing, initial-error intervals and mode switches.

    ``horizon=None`` ends training episodes at the trajectory's last sample.
    ``collision_semi_major=None`` uses the ship's footprint ellipse.
    ``search_range=None`` derives I from ``dt_decision / traj.dt``.
    ``init_pos=None`` uses +-L for both position offsets.
    ``count_collisions=None`` counts contacts unless ``ablation`` is set.
    """
    dt_decision: float = 5.0
    horizon: float | None = None
    offsets: tuple = (5.0, 10.0, 20.0, 40.0)
    init_pos: float | None = None
    init_u: float = 0.036
    init_vm: float = 0.007
    init_psi_deg: float = 10.0
    init_r_deg: float = 0.1
    collision_semi_major: float | None = None
    ablation: bool = False
    ablation_zero_pad: bool = False
    deployment_mode: bool = False
    search_range: int | None = None
    tolerance_termination: bool = True
    count_collisions: bool | None = None
    process_noise: bool = True
    observation_noise: bool = True

    def __post_init__(self):
        object.__setattr__(self, "offsets", tuple(float(v) for v in self.offsets))
        if self.dt_decision <= 0:
            raise ValueError("dt_decision must be positive")
        if self.horizon is not None and self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if len(self.offsets) != 4 or any(t <= 0 for t in self.offsets):
            raise ValueError("need four positive look-ahead offsets")
        for t in self.offsets:
            if not _is_multiple(t, self.dt_decision):
                raise ValueError(f"offset {t} is not a multiple of dt_decision {self.dt_decision}")
        if self.search_range is not None and self.search_range < 1:
            raise ValueError("search range must be at least 1")
        if self.collision_semi_major is not None and self.collision_semi_major <= 0:
            raise ValueError("collision semi-major must be positive")
        if min(self.init_u, self.init_vm, self.init_psi_deg, self.init_r_deg) < 0:
            raise ValueError("initial-error half widths must be non-negative")
        if self.init_pos is not None and self.init_pos < 0:
            raise ValueError("initial-error half widths must be non-negative")

    @property
    def feature_dim(self) -> int:
        return ABLATION_FEATURE_DIM if self.ablation and not self.ablation_zero_pad else FEATURE_DIM

    def replace(self, **kw) -> "EpisodeConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {f.name: (list(getattr(self, f.name)) if isinstance(getattr(self, f.name), tuple)
                         else getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeConfig":
        _check_fields(cls, d)
        return cls(**d)


def _is_multiple(t, dt):
    n = round(t / dt)
    return n >= 1 and abs(n * dt - t) <= 1e-9 * max(1.0, t)


class Nearness(NamedTuple):
    c_bow: float
    c_stern: float
    l_k: float
    l_bow: float
    l_stern: float


class StepOutcome(NamedTuple):
    features: np.ndarray
    reward: float
    terminated: bool
    termination_reason: Termination | None
    diagnostics: dict


# ---------------------------------------------------------------------------
# stateless pieces
# ---------------------------------------------------------------------------

def tolerances(t: float, cfg: RewardConfig):
    """Exponentially shrinking allowed tracking error and nearness."""
    if t < 0:
        raise ValueError("t must be non-negative")
    e_tol = (cfg.e0 - cfg.e_inf) * math.exp(-cfg.b_e * t) + cfg.e_inf
    c_tol = (cfg.c0 - cfg.c_inf) * math.exp(-cfg.b_c * t) + cfg.c_inf
    return e_tol, c_tol


def tracking_errors(desired: Pose, pose: Pose, geom: ShipGeometry):
    """Distances between actual and desired bow, and actual and desired stern."""
    bow_d, stern_d = bow_stern_positions(desired, geom)
    bow, stern = bow_stern_positions(pose, geom)
    return float(math.hypot(*(bow - bow_d))), float(math.hypot(*(stern - stern_d)))


def _nearness_ratio(l_k, l):
    if l >= l_k:
        return 0.0
    return (l_k - l) / l_k


def nearness_from_point(desired: Pose, o_near, pose: Pose, geom: ShipGeometry) -> Nearness:
    """Nearness of bow and stern to the line through ``o_near`` with the desired heading."""
    c = math.cos(desired[2])
    s = math.sin(desired[2])
    # unit normal of the line; its length does not enter the distances
    nx, ny = s, -c
    ox, oy = float(o_near[0]), float(o_near[1])
    l_k = abs(nx * (desired[0] - ox) + ny * (desired[1] - oy))
    bow, stern = bow_stern_positions(pose, geom)
    l_bow = abs(nx * (bow[0] - ox) + ny * (bow[1] - oy))
    l_stern = abs(nx * (stern[0] - ox) + ny * (stern[1] - oy))
    return Nearness(_nearness_ratio(l_k, l_bow), _nearness_ratio(l_k, l_stern), l_k, l_bow, l_stern)


def nearness_measures(desired: Pose, pose: Pose, obstacles: ObstacleSet, geom: ShipGeometry) -> Nearness:
    o_near = nearest_obstacle_point(obstacles, desired[:2])
    return nearness_from_point(desired, o_near, pose, geom)


def effort_penalty(u_cmd, cfg: RewardConfig) -> float:
    z = (np.asarray(u_cmd, dtype=float) - np.asarray(cfg.u_c)) / np.asarray(cfg.u_std)
    return cfg.lam * float(np.dot(z, z))


def reward_terms(t: float, pose: Pose, u_cmd, desired: Pose, o_near, cfg: RewardConfig,
                 geom: ShipGeometry, use_obstacles: bool = True):
    """Reward plus the quantities it is built from."""
    e_tol, c_tol = tolerances(t, cfg)
    e_bow, e_stern = tracking_errors(desired, pose, geom)
    r = (e_tol - e_bow) / e_tol + (e_tol - e_stern) / e_tol
    if use_obstacles and o_near is not None:
        nr = nearness_from_point(desired, o_near, pose, geom)
        r += (c_tol - nr.c_bow) / c_tol + (c_tol - nr.c_stern) / c_tol
    else:
        nr = Nearness(0.0, 0.0, math.nan, math.nan, math.nan)
    r -= effort_penalty(u_cmd, cfg)
    diag = {"e_bow": e_bow, "e_stern": e_stern, "c_bow": nr.c_bow, "c_stern": nr.c_stern,
            "l_k": nr.l_k, "l_bow": nr.l_bow, "l_stern": nr.l_stern, "e_tol": e_tol, "c_tol": c_tol}
    return r, diag


def reward(t: float, pose: Pose, u_cmd, desired: Pose, obstacles: ObstacleSet | None,
           cfg: RewardConfig, geom: ShipGeometry | None = None) -> float:
    """Tracking plus nearness terms minus control effort.

    With ``obstacles`` empty or ``None`` only the two tracking terms and the
    effort penalty remain.
    """
    geom = geom or ShipGeometry()
    o_near = None
    if obstacles is not None and len(obstacles):
        o_near = nearest_obstacle_point(obstacles, desired[:2])
    return reward_terms(t, pose, u_cmd, desired, o_near, cfg, geom, o_near is not None)[0]


def check_termination(t: float, pose: Pose, desired: Pose, obstacles: ObstacleSet | None,
                      cfg: RewardConfig, geom: ShipGeometry, horizon: float | None = None,
                      collision_obstacles: ObstacleSet | None = None,
                      collision_semi_major: float | None = None,
                      use_tolerances: bool = True) -> Termination | None:
    """First violated condition in the order collision, e_bow, e_stern, c_bow, c_stern, horizon.

    ``obstacles`` drive the nearness tolerances; ``collision_obstacles``
    (defaults to ``obstacles`` unless they are dummies) drive contact.
    """
    from .geometry import footprint_collides
    if collision_obstacles is None and obstacles is not None and not obstacles.dummy:
        collision_obstacles = obstacles
    if collision_obstacles is not None and len(collision_obstacles):
        if footprint_collides(pose, geom, collision_obstacles, collision_semi_major):
            return Termination.COLLISION
    if use_tolerances:
        e_tol, c_tol = tolerances(t, cfg)
        e_bow, e_stern = tracking_errors(desired, pose, geom)
        if e_bow >= e_tol:
            return Termination.TOLERANCE_E_BOW
        if e_stern >= e_tol:
            return Termination.TOLERANCE_E_STERN
        if obstacles is not None and len(obstacles):
            nr = nearness_measures(desired, pose, obstacles, geom)
            if nr.c_bow >= c_tol:
                return Termination.TOLERANCE_C_BOW
            if nr.c_stern >= c_tol:
                return Termination.TOLERANCE_C_STERN
    if horizon is not None and t >= horizon - 1e-9:
        return Termination.HORIZON
    return None


def select_desired_index(i_prev: int, pose: Pose, traj: DesiredTrajectory, I: int) -> int:
    """Closest sample in the window (i_prev, i_prev + I]; ties go to the smaller index."""
    if I < 1:
        raise ValueError("search range must be at least 1")
    last = len(traj) - 1
    if i_prev >= last:
        return last
    lo = i_prev + 1
    hi = min(i_prev + I, last)
    d = traj.positions[lo:hi + 1] - np.array([pose[0], pose[1]])
    return lo + int(np.argmin(np.einsum("ij,ij->i", d, d)))


def build_features(x_hat, u_act, traj: DesiredTrajectory, o_near: np.ndarray | None, index: int,
                   offsets_samples: Sequence[int], ablation: bool = False,
                   zero_pad: bool = False) -> np.ndarray:
    """Controller input.

    ``x_hat`` is the (observed) state array, ``o_near`` the nearest obstacle
    point for every trajectory sample, ``index`` the current desired sample
    and ``offsets_samples`` the look-ahead offsets in samples. Look-ahead
    indices beyond the trajectory clamp to its final sample.
    """
    x_hat = np.asarray(x_hat, dtype=float)
    pose = Pose(*x_hat[:3].tolist())
    last = len(traj) - 1
    idx = [min(index, last)] + [min(index + int(o), last) for o in offsets_samples]
    errs = [body_frame_error(traj.pose(i), pose) for i in idx]
    parts = [np.array(errs, dtype=float).ravel()]
    if not ablation:
        if o_near is None:
            parts.append(np.zeros(10))
        else:
            parts.append(np.array([obstacle_offset_body(o_near[i], pose) for i in idx]).ravel())
    elif zero_pad:
        parts.append(np.zeros(10))
    parts.append(x_hat[3:6])
    parts.append(np.asarray(u_act, dtype=float))
    return np.concatenate(parts)


def feature_scale(geom: ShipGeometry, dim: int = FEATURE_DIM) -> np.ndarray:
    """Fixed per-feature divisors bringing inputs to order one."""
    err = np.tile([geom.L, geom.L, math.pi], 5)
    obs = np.full(10, 2.0 * geom.L)
    rest = np.array([0.5, 0.1, 0.05, 105.0, 105.0, N_PROP, 30.0])
    if dim == FEATURE_DIM:
        return np.concatenate([err, obs, rest])
    if dim == ABLATION_FEATURE_DIM:
        return np.concatenate([err, rest])
    raise ValueError(f"unsupported feature dimension {dim}")


def _as_set(obstacles) -> list:
    if obstacles is None:
        return []
    if isinstance(obstacles, ObstacleSet):
        return [obstacles]
    return list(obstacles)


# ---------------------------------------------------------------------------
# environment
# ---------------------------------------------------------------------------

TRACE_COLUMNS = (
    ["step", "t", "x0", "y0", "psi", "u", "vm", "r",
     "x0_obs", "y0_obs", "psi_obs", "u_obs", "vm_obs", "r_obs",
     "delta_p", "delta_s", "n_p", "n_bt",
     "cmd_delta_p", "cmd_delta_s", "cmd_n_p", "cmd_n_bt",
     "reward", "e_bow", "e_stern", "c_bow", "c_stern", "l_k", "l_bow", "l_stern",
     "desired_index", "wind_speed", "wind_dir", "termination"]
)


@dataclass
class TrackingEnv:
    """Tracking environment for one vessel.

    ``reset`` takes the desired trajectory, one or several obstacle sets and
    a wind specification. The nearest-obstacle features use all sets;
    collisions only count against non-dummy sets.
    """
    dynamics: DynamicsConfig = field(default_factory=DynamicsConfig)
    geom: ShipGeometry = field(default_factory=ShipGeometry)
    reward_cfg: RewardConfig = field(default_factory=RewardConfig)
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    record: bool = False

    def __post_init__(self):
        self._n_sub = n_substeps(self.episode.dt_decision, self.dynamics.dt_sim)
        self._terminated = True
        self.trace: list[dict] = []

    @property
    def feature_dim(self) -> int:
        return self.episode.feature_dim

    @property
    def terminated(self) -> bool:
        return self._terminated

    # -- helpers -----------------------------------------------------------
    def _offset_samples(self, traj):
        out = []
        for t in self.episode.offsets:
            if not _is_multiple(t, traj.dt):
                raise ValueError(f"offset {t} is not a multiple of the trajectory dt {traj.dt}")
            out.append(int(round(t / traj.dt)))
        return out

    def _observe(self):
        std = self.dynamics.obs_std
        if self.episode.observation_noise and np.any(std > 0):
            return self.x + self.rng.standard_normal(6) * std
        return self.x.copy()

    def _features(self, x_hat):
        return build_features(x_hat, self.act, self.traj, self._o_near_feat, self.index,
                              self._offs, self.episode.ablation, self.episode.ablation_zero_pad)

    def _collides(self, poses) -> bool:
        col = self._collision_set
        if col is None:
            return False
        for p in poses:
            if kernels.ellipse_hits(col.segs, col.starts, col.bbox, float(p[0]), float(p[1]), float(p[2]),
                                    self._semi_major, float(self.geom.semi_minor)):
                return True
        return False

    # -- api ---------------------------------------------------------------
    def reset(self, traj: DesiredTrajectory, obstacles=None, wind: WindSpec | None = None,
              rng: np.random.Generator | None = None) -> np.ndarray:
        """Start an episode; ``wind=None`` samples a training wind condition."""
        ep = self.episode
        self.rng = rng if rng is not None else np.random.default_rng()
        self.traj = traj
        self._offs = self._offset_samples(traj)
        if not ep.deployment_mode and not _is_multiple(ep.dt_decision, traj.dt):
            raise ValueError("dt_decision must be a multiple of the trajectory dt in training mode")
        if traj.duration < max(ep.offsets) - 1e-9:
            raise ValueError("trajectory is shorter than the largest look-ahead offset")
        self._step_samples = int(round(ep.dt_decision / traj.dt))
        self._I = ep.search_range if ep.search_range is not None else max(1, self._step_samples)

        sets = _as_set(obstacles)
        feat = [s for s in sets if len(s)]
        real = [s for s in feat if not s.dummy]
        use_obs = not ep.ablation
        self._feat_set = ObstacleSet.union(feat) if (feat and use_obs) else None
        count = use_obs if ep.count_collisions is None else ep.count_collisions
        self._collision_set = ObstacleSet.union(real) if (real and count) else None
        if self._feat_set is not None:
            pts, _ = kernels.nearest_points(self._feat_set.segs, np.ascontiguousarray(traj.positions))
            self._o_near_feat = pts
        else:
            self._o_near_feat = None
        self._semi_major = float(ep.collision_semi_major if ep.collision_semi_major is not None
                                 else self.geom.semi_major)

        if wind is None:
            wind = WindSpec(float(self.rng.weibull(2.0)), float(self.rng.uniform(0.0, 2.0 * math.pi)))
        self.wind_spec = wind
        self.wind_speed = wind.mean_speed
        self.wind_dir = wind.mean_direction % (2.0 * math.pi)

        L = self.geom.L
        hp = L if ep.init_pos is None else ep.init_pos
        half = np.array([hp, hp, math.radians(ep.init_psi_deg), ep.init_u, ep.init_vm,
                         math.radians(ep.init_r_deg)])
        offset = self.rng.uniform(-1.0, 1.0, 6) * half
        base = np.concatenate([traj.poses[0], traj.vels[0]])
        self.x = base + offset
        self.x[2] = wrap_angle(self.x[2])
        self.act = np.array([0.0, 0.0, N_PROP, 0.0])
        self.t = 0.0
        self.k = 0
        self.index = 0
        if ep.horizon is not None:
            self.horizon = float(ep.horizon)
        else:
            self.horizon = traj.duration
        self._terminated = False
        x_hat = self._observe()
        feats = self._features(x_hat)
        self.trace = []
        if self.record:
            self._log(x_hat, None, math.nan, {}, None)
        return feats

    def desired_pose(self) -> Pose:
        return self.traj.pose(self.index)

    def step(self, action) -> StepOutcome:
        if self._terminated:
            raise RuntimeError("step() called on a terminated episode; call reset()")
        ep = self.episode
        cmd = clip_actuator(np.asarray(action, dtype=float))
        cmd[2] = N_PROP
        speeds = wind_series(self.wind_speed, self.wind_spec, self.dynamics.dt_sim, self._n_sub, self.rng)
        x1, a1, path = advance(self.x, self.act, cmd, speeds, self.wind_dir, self.dynamics,
                               self.rng if ep.process_noise else None)
        self.x, self.act = x1, a1
        self.x[2] = wrap_angle(self.x[2])
        self.wind_speed = float(speeds[-1])
        self.k += 1
        self.t = self.k * ep.dt_decision
        pose = Pose(*self.x[:3].tolist())
        if ep.deployment_mode:
            self.index = select_desired_index(self.index, pose, self.traj, self._I)
        else:
            self.index = min(self.index + self._step_samples, len(self.traj) - 1)
        desired = self.traj.pose(self.index)
        o_near = None if self._o_near_feat is None else self._o_near_feat[self.index]

        r, diag = reward_terms(self.t, pose, cmd, desired, o_near, self.reward_cfg, self.geom,
                               o_near is not None)
        reason = None
        if self._collides(path):
            reason = Termination.COLLISION
        elif ep.tolerance_termination:
            if diag["e_bow"] >= diag["e_tol"]:
                reason = Termination.TOLERANCE_E_BOW
            elif diag["e_stern"] >= diag["e_tol"]:
                reason = Termination.TOLERANCE_E_STERN
            elif diag["c_bow"] >= diag["c_tol"]:
                reason = Termination.TOLERANCE_C_BOW
            elif diag["c_stern"] >= diag["c_tol"]:
                reason = Termination.TOLERANCE_C_STERN
        if reason is None and self.t >= self.horizon - 1e-9:
            reason = Termination.HORIZON
        if reason is not None and reason is not Termination.HORIZON:
            r = 0.0
        self._terminated = reason is not None
        x_hat = self._observe()
        feats = self._features(x_hat)
        diag["desired_index"] = self.index
        if self.record:
            self._log(x_hat, cmd, r, diag, reason)
        return StepOutcome(feats, float(r), self._terminated, reason, diag)

    # -- trace ---------------------------------------------------------------
    def _log(self, x_hat, cmd, r, diag, reason):
        row = {"step": self.k, "t": self.t}
        for name, v in zip(TRACE_COLUMNS[2:8], self.x):
            row[name] = float(v)
        for name, v in zip(TRACE_COLUMNS[8:14], x_hat):
            row[name] = float(v)
        for name, v in zip(TRACE_COLUMNS[14:18], self.act):
            row[name] = float(v)
        for name, v in zip(TRACE_COLUMNS[18:22], cmd if cmd is not None else [math.nan] * 4):
            row[name] = float(v)
        row["reward"] = float(r)
        for name in ("e_bow", "e_stern", "c_bow", "c_stern", "l_k", "l_bow", "l_stern"):
            row[name] = float(diag.get(name, math.nan))
        row["desired_index"] = self.index
        row["wind_speed"] = self.wind_speed
        row["wind_dir"] = self.wind_dir
        row["termination"] = reason.value if reason is not None else ""
        self.trace.append(row)


def write_trace(rows: Sequence[dict], path) -> None:
    """Write an episode trace as CSV with full float precision."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(TRACE_COLUMNS)
        for row in rows:
            w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in TRACE_COLUMNS])


def read_trace(path) -> list[dict]:
    out = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            d = {}
            for k, v in row.items():
                if k == "termination":
                    d[k] = v
                elif k in ("step", "desired_index"):
                    d[k] = int(v)
                else:
                    d[k] = float(v)
            out.append(d)
    return out
