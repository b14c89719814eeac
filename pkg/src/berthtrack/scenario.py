"""Desired trajectories, pseudo-obstacle grids and scenario files."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .dynamics import N_PROP, NEUTRAL_COMMAND, ControlCommand, DynamicsConfig, advance, clip_actuator, n_substeps
from .geometry import ObstacleSet, Pose, ShipGeometry, Velocity

TRAJ_COLUMNS = ("t", "x0", "y0", "psi", "u", "vm", "r")
OBSTACLE_FORMAT = "berthtrack.obstacles"

# uniform ranges for the initial velocity of random trajectories (r in deg/s)
INIT_VEL_LOW = (-0.072, -0.07, -0.1)
INIT_VEL_HIGH = (0.437, 0.07, 0.1)

ORIGIN_DISK_RATIO = 1.9


class ScenarioFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DesiredTrajectory:
    """Uniformly sampled desired poses and velocities.

    ``poses`` is (N, 3) of (x0, y0, psi); ``vels`` is (N, 3) of (u, vm, r).
    ``path`` optionally holds the poses at every simulation sub-step; it is
    used for obstacle clearance and is not written to files.
    """
    dt: float
    poses: np.ndarray
    vels: np.ndarray
    path: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.path is not None:
            object.__setattr__(self, "path", np.asarray(self.path, dtype=float).reshape(-1, 3))
        poses = np.asarray(self.poses, dtype=float).reshape(-1, 3)
        vels = np.asarray(self.vels, dtype=float).reshape(-1, 3)
        if len(poses) < 2 or len(poses) != len(vels):
            raise ValueError("trajectory needs at least 2 samples with matching velocities")
        if self.dt <= 0:
            raise ValueError("trajectory dt must be positive")
        object.__setattr__(self, "poses", poses)
        object.__setattr__(self, "vels", vels)

    def __len__(self):
        return len(self.poses)

    @property
    def duration(self) -> float:
        return self.dt * (len(self) - 1)

    @property
    def samples(self):
        return [(Pose(*p), Velocity(*v)) for p, v in zip(self.poses.tolist(), self.vels.tolist())]

    @property
    def positions(self) -> np.ndarray:
        return self.poses[:, :2]

    def pose(self, i: int) -> Pose:
        i = min(max(i, 0), len(self) - 1)
        return Pose(*self.poses[i].tolist())


@dataclass(frozen=True)
class GridSpec:
    """Obstacle grid; ``cell=None`` means twice the ship length.

    ``padding`` is the number of cell rings added around the cells touched by
    the trajectory, so the outermost ring is always solid.
    """
    cell: float | None = None
    origin_aligned: bool = True
    padding: int = 2

    def cell_size(self, geom: ShipGeometry) -> float:
        c = 2.0 * geom.L if self.cell is None else self.cell
        if c <= 0:
            raise ValueError("grid cell must be positive")
        return c


def sample_random_command(rng) -> ControlCommand:
    """Random command whose long-run thrust is roughly balanced."""
    dp = rng.normal(NEUTRAL_COMMAND[0], 30.0)
    ds = rng.normal(NEUTRAL_COMMAND[1], 30.0)
    nbt = rng.uniform(-30.0, 30.0)
    c = clip_actuator([dp, ds, 10.0, nbt])
    return ControlCommand(*(float(v) for v in c))


def generate_random_trajectory(duration: float, dt: float, rng, cfg: DynamicsConfig | None = None,
                               command_interval: float | None = None, return_commands: bool = False):
    """Noise-free, wind-free simulation under random commands, sampled every ``dt``.

    Actuators start with rudders and thruster at zero, as in the tracking
    environment. With ``return_commands`` the command schedule (one row per
    ``command_interval``) is returned as well.
    """
    if duration < dt or dt <= 0:
        raise ValueError("duration must be at least dt")
    cfg = cfg or DynamicsConfig()
    command_interval = dt if command_interval is None else command_interval
    n = int(math.floor(duration / dt + 1e-9))
    nsub_cmd = n_substeps(command_interval, cfg.dt_sim)
    nsub_rec = n_substeps(dt, cfg.dt_sim)
    v0 = rng.uniform(INIT_VEL_LOW, INIT_VEL_HIGH)
    x = np.array([0.0, 0.0, 0.0, v0[0], v0[1], math.radians(v0[2])])
    act = np.array([0.0, 0.0, N_PROP, 0.0])
    total = n * nsub_rec
    cmds = []
    states = np.empty((total + 1, 6))
    states[0] = x
    done = 0
    while done < total:
        m = min(nsub_cmd, total - done)
        cmd = np.array(sample_random_command(rng))
        cmds.append(cmd)
        x, act, path = advance(x, act, cmd, np.zeros(m), 0.0, cfg)
        states[done + 1:done + 1 + m] = path
        done += m
    rec = states[::nsub_rec]
    traj = DesiredTrajectory(dt, rec[:, :3], rec[:, 3:], states[:, :3])
    if return_commands:
        return traj, np.array(cmds)
    return traj


# ---------------------------------------------------------------------------
# swept region and pseudo-obstacles
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SweptRegion:
    """Union of ellipses, each row (cx, cy, heading, semi_major, semi_minor)."""
    ellipses: np.ndarray

    def contains(self, p) -> bool:
        e = self.ellipses
        dx = p[0] - e[:, 0]
        dy = p[1] - e[:, 1]
        c = np.cos(e[:, 2])
        s = np.sin(e[:, 2])
        X = (c * dx + s * dy) / e[:, 3]
        Y = (-s * dx + c * dy) / e[:, 4]
        return bool(np.any(X * X + Y * Y <= 1.0))

    def intersects_ring(self, ring) -> bool:
        ring = np.asarray(ring, dtype=float)
        segs = np.hstack([ring, np.roll(ring, -1, axis=0)])
        starts = np.array([0, len(ring)], dtype=np.int64)
        bbox = np.array([[*ring.min(axis=0), *ring.max(axis=0)]])
        for cx, cy, h, a, b in self.ellipses:
            if kernels.ellipse_hits(segs, starts, bbox, cx, cy, h, a, b):
                return True
        return False


def swept_region(traj: DesiredTrajectory, geom: ShipGeometry, footprint: str = "ellipse") -> SweptRegion:
    """Footprints at every sample (or dense path pose) plus the 1.9 L disk at the origin.

    ``footprint="disk"`` replaces each ellipse by a disk of radius 1.9 L.
    """
    poses = traj.poses if traj.path is None else traj.path
    n = len(poses)
    rows = np.empty((n + 1, 5))
    rows[:n, :3] = poses
    if footprint == "ellipse":
        rows[:n, 3] = geom.semi_major
        rows[:n, 4] = geom.semi_minor
    elif footprint == "disk":
        rows[:n, 3] = ORIGIN_DISK_RATIO * geom.L
        rows[:n, 4] = ORIGIN_DISK_RATIO * geom.L
    else:
        raise ValueError(f"unknown footprint {footprint!r}")
    rows[n] = (0.0, 0.0, 0.0, ORIGIN_DISK_RATIO * geom.L, ORIGIN_DISK_RATIO * geom.L)
    return SweptRegion(rows)


@dataclass(frozen=True, eq=False)
class GridCover:
    """Cells [i0, i1) x [j0, j1) of size ``cell``; ``solid[i-i0, j-j0]`` marks obstacles."""
    cell: float
    i0: int
    j0: int
    solid: np.ndarray

    def ring(self, i, j):
        c = self.cell
        x0, y0 = i * c, j * c
        return np.array([[x0, y0], [x0 + c, y0], [x0 + c, y0 + c], [x0, y0 + c]])

    @property
    def extent(self):
        ni, nj = self.solid.shape
        c = self.cell
        return self.i0 * c, self.j0 * c, (self.i0 + ni) * c, (self.j0 + nj) * c

    def obstacles(self, dummy=False) -> ObstacleSet:
        polys = [self.ring(self.i0 + a, self.j0 + b) for a, b in zip(*np.nonzero(self.solid))]
        return ObstacleSet(tuple(polys), dummy=dummy)


def grid_cover(traj: DesiredTrajectory, geom: ShipGeometry, grid: GridSpec | None = None,
               footprint: str = "ellipse") -> GridCover:
    grid = grid or GridSpec()
    c = grid.cell_size(geom)
    region = swept_region(traj, geom, footprint)
    e = region.ellipses
    pts = e[:, :2]
    pad = max(grid.padding, 1)
    i0 = int(math.floor(pts[:, 0].min() / c)) - pad
    i1 = int(math.floor(pts[:, 0].max() / c)) + pad + 1
    j0 = int(math.floor(pts[:, 1].min() / c)) - pad
    j1 = int(math.floor(pts[:, 1].max() / c)) + pad + 1
    free = np.zeros((i1 - i0, j1 - j0), dtype=bool)
    kernels.mark_free(np.ascontiguousarray(e), float(c), i0, j0, free)
    return GridCover(c, i0, j0, ~free)


def generate_training_obstacles(traj: DesiredTrajectory, geom: ShipGeometry,
                                grid: GridSpec | None = None) -> ObstacleSet:
    """Every grid cell the swept footprint never touches becomes a square obstacle."""
    return grid_cover(traj, geom, grid, "ellipse").obstacles(dummy=False)


def generate_harbor_obstacles(traj: DesiredTrajectory, geom: ShipGeometry,
                              grid: GridSpec | None = None) -> ObstacleSet:
    """Dummy pseudo-obstacles cleared by a 1.9 L disk around every sample."""
    return grid_cover(traj, geom, grid, "disk").obstacles(dummy=True)


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------

def save_trajectory(traj: DesiredTrajectory, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(TRAJ_COLUMNS)
        for k, (p, v) in enumerate(zip(traj.poses, traj.vels)):
            w.writerow([repr(float(k * traj.dt))] + [repr(float(a)) for a in (*p, *v)])


def load_trajectory(path) -> DesiredTrajectory:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise ScenarioFormatError(f"{path}: empty trajectory file")
    header = [h.strip() for h in rows[0]]
    missing = [c for c in TRAJ_COLUMNS if c not in header]
    if missing:
        raise ScenarioFormatError(f"{path}: missing column(s) {missing}")
    cols = [header.index(c) for c in TRAJ_COLUMNS]
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ScenarioFormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            data.append([float(row[c]) for c in cols])
        except ValueError as exc:
            raise ScenarioFormatError(f"{path}:{lineno}: {exc}") from None
        if not all(math.isfinite(v) for v in data[-1]):
            raise ScenarioFormatError(f"{path}:{lineno}: non-finite value")
    if len(data) < 2:
        raise ScenarioFormatError(f"{path}: need at least 2 samples")
    a = np.array(data)
    t = a[:, 0]
    dt = (t[-1] - t[0]) / (len(t) - 1)
    if dt <= 0:
        raise ScenarioFormatError(f"{path}: timestamps must increase")
    tol = 1e-6 * dt
    for k in range(1, len(t)):
        if abs((t[k] - t[k - 1]) - dt) > tol:
            raise ScenarioFormatError(
                f"{path}: non-uniform time step at row {k + 1} (line {k + 2}): "
                f"t={float(t[k])!r} after t={float(t[k - 1])!r}, expected step {float(dt)!r}")
    return DesiredTrajectory(float(t[1] - t[0]) if len(t) == 2 else float(dt), a[:, 1:4], a[:, 4:7])


def save_obstacles(obstacles: ObstacleSet, path) -> None:
    doc = {
        "format": OBSTACLE_FORMAT,
        "version": 1,
        "dummy": bool(obstacles.dummy),
        "polygons": [[[float(x), float(y)] for x, y in ring] for ring in obstacles.polygons],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_obstacles(path) -> ObstacleSet:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioFormatError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(doc, dict) or "polygons" not in doc:
        raise ScenarioFormatError(f"{path}: missing 'polygons'")
    if doc.get("format", OBSTACLE_FORMAT) != OBSTACLE_FORMAT:
        raise ScenarioFormatError(f"{path}: unexpected format {doc.get('format')!r}")
    polys = []
    for i, ring in enumerate(doc["polygons"]):
        try:
            arr = np.array(ring, dtype=float)
        except (TypeError, ValueError):
            raise ScenarioFormatError(f"{path}: polygon {i} is not a list of [x, y] pairs") from None
        if arr.ndim != 2 or arr.shape[1] != 2 or len(arr) < 3:
            raise ScenarioFormatError(f"{path}: polygon {i} needs >= 3 [x, y] vertices")
        polys.append(arr)
    try:
        return ObstacleSet(tuple(polys), dummy=bool(doc.get("dummy", False)))
    except ValueError as exc:
        raise ScenarioFormatError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# berthing scene
# ---------------------------------------------------------------------------

BERTH_CLEARANCE_RATIO = 1.49  # berth-to-midship distance in ship breadths


def generate_berthing_scenario(geom: ShipGeometry | None = None, dt: float = 0.2,
                               approach_angle: float = 0.5, approach_speed: float = 0.29,
                               approach_length: float | None = None, turn_radius: float | None = None,
                               final_length: float | None = None, hold: float = 30.0):
    """A berthing-like desired trajectory alongside a straight quay.

    The path runs straight in at ``approach_angle`` (rad) towards the quay,
    turns on a circular arc until parallel to it, then runs a final straight
    leg. Speed falls from ``approach_speed`` to zero at constant deceleration
    over the whole path, and the final pose is held for ``hold`` seconds.
    The final pose is ``(0, 1.49 B, pi)``; the quay fills ``y <= 0``.
    Returns ``(trajectory, quay)``.
    """
    geom = geom or ShipGeometry()
    L = geom.L
    s_app = 6.0 * L if approach_length is None else approach_length
    R = 3.0 * L if turn_radius is None else turn_radius
    s_fin = 1.5 * L if final_length is None else final_length
    s_arc = R * approach_angle
    total = s_app + s_arc + s_fin
    decel = approach_speed ** 2 / (2.0 * total)
    t_stop = approach_speed / decel
    n_move = int(math.ceil(t_stop / dt))
    n_hold = int(round(hold / dt))
    t = np.arange(n_move + n_hold + 1) * dt
    tm = np.minimum(t, t_stop)
    s = approach_speed * tm - 0.5 * decel * tm ** 2
    u = np.where(t < t_stop, approach_speed - decel * tm, 0.0)

    def heading(sv):
        return math.pi + approach_angle - np.clip((sv - s_app) / R, 0.0, approach_angle)

    psi = heading(s)
    r = np.where((s > s_app) & (s < s_app + s_arc) & (t < t_stop), -u / R, 0.0)
    # integrate the path finely and interpolate at the sampled arc lengths
    sf = np.linspace(0.0, total, 20001)
    ds = np.diff(sf)
    hm = heading(0.5 * (sf[1:] + sf[:-1]))
    xf = np.concatenate([[0.0], np.cumsum(np.cos(hm) * ds)])
    yf = np.concatenate([[0.0], np.cumsum(np.sin(hm) * ds)])
    x = np.interp(s, sf, xf)
    y = np.interp(s, sf, yf)
    x = x - xf[-1]
    y = y - yf[-1] + BERTH_CLEARANCE_RATIO * geom.B
    poses = np.column_stack([x, y, psi])
    vels = np.column_stack([u, np.zeros_like(u), r])
    span = np.abs(x).max() + 4 * L
    quay = ObstacleSet((((-span, -10.0), (span, -10.0), (span, 0.0), (-span, 0.0)),))
    return DesiredTrajectory(dt, poses, vels), quay
