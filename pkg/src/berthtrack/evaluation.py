"""Monte Carlo collision studies, controller comparison and trace export."""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy.stats import beta

from .dynamics import DynamicsConfig, WindSpec
from .env import EpisodeConfig, RewardConfig, Termination, TrackingEnv, write_trace
from .geometry import ShipGeometry
from .td3 import TD3Agent, denormalize_action


@dataclass(frozen=True)
class EvalProtocol:
    """Collision-study settings.

    ``wind_direction=None`` draws a direction uniformly per trial. Semi-major
    axes are given as fractions of the ship length; ``rerun_semi_major_ratio``
    (``None`` to skip) repeats every cell on the same seeds with a smaller
    collision ellipse.
    """
    trials: int = 100
    horizon: float = 250.0
    wind_speeds: tuple = (0.0, 0.5, 1.0, 1.5)
    wind_direction: float | None = None
    correlation_time: float = 10.0
    gust_gain: float = 0.15
    collision_semi_major_ratio: float = 0.75
    rerun_semi_major_ratio: float | None = 0.5
    dt_decision: float = 1.0
    search_range: int | None = None
    init_pos: float | None = None
    init_u: float = 0.036
    init_vm: float = 0.007
    init_psi_deg: float = 10.0
    init_r_deg: float = 0.1
    process_noise: bool = True
    observation_noise: bool = True

    def __post_init__(self):
        object.__setattr__(self, "wind_speeds", tuple(float(w) for w in self.wind_speeds))
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if not self.wind_speeds or min(self.wind_speeds) < 0:
            raise ValueError("need at least one non-negative wind speed")

    def semi_majors(self):
        out = [self.collision_semi_major_ratio]
        if self.rerun_semi_major_ratio is not None:
            out.append(self.rerun_semi_major_ratio)
        return out

    def episode_config(self, ablation: bool, semi_major: float) -> EpisodeConfig:
        return EpisodeConfig(dt_decision=self.dt_decision, horizon=self.horizon, init_pos=self.init_pos,
                             init_u=self.init_u, init_vm=self.init_vm, init_psi_deg=self.init_psi_deg,
                             init_r_deg=self.init_r_deg, collision_semi_major=semi_major, ablation=ablation,
                             deployment_mode=True, search_range=self.search_range,
                             tolerance_termination=False, count_collisions=True,
                             process_noise=self.process_noise, observation_noise=self.observation_noise)

    def replace(self, **kw) -> "EvalProtocol":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["wind_speeds"] = list(self.wind_speeds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalProtocol":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise KeyError(f"unknown EvalProtocol keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# controllers
# ---------------------------------------------------------------------------

class PolicyController:
    """Deterministic actor network; ``ablation`` follows its input width."""

    def __init__(self, agent: TD3Agent, name: str = "policy"):
        from .env import ABLATION_FEATURE_DIM
        self.agent = agent
        self.name = name
        self.ablation = agent.obs_dim == ABLATION_FEATURE_DIM

    def begin_episode(self, rng) -> None:
        pass

    def command(self, features, env):
        return denormalize_action(self.agent.act(features))


class ReplayController:
    """Plays back a fixed command schedule by elapsed time."""

    ablation = False

    def __init__(self, commands, interval: float, name: str = "replay"):
        self.commands = np.asarray(commands, dtype=float).reshape(-1, 4)
        self.interval = float(interval)
        self.name = name

    def begin_episode(self, rng) -> None:
        pass

    def command(self, features, env):
        i = min(int(math.floor(env.t / self.interval + 1e-9)), len(self.commands) - 1)
        return self.commands[i]


class RandomController:
    """Uniformly random normalized actions from the trial's policy stream."""

    ablation = False

    def __init__(self, name: str = "random"):
        self.name = name

    def begin_episode(self, rng) -> None:
        self.rng = rng

    def command(self, features, env):
        return denormalize_action(self.rng.uniform(0.0, 1.0, 3))


# ---------------------------------------------------------------------------
# trials
# ---------------------------------------------------------------------------

class Scene(NamedTuple):
    """A desired trajectory with its obstacle sets (real and pseudo)."""
    name: str
    traj: object
    obstacles: tuple


class TrialResult(NamedTuple):
    reason: str
    collided: bool
    t_end: float
    steps: int
    seed: tuple
    trace: list | None


def trial_seed(base_seed: int, scene_idx: int, wind_idx: int, trial: int) -> tuple:
    return (int(base_seed), int(scene_idx), int(wind_idx), int(trial))


def run_trial(controller, scene: Scene, wind_speed: float, semi_major: float, protocol: EvalProtocol,
              seed: tuple, dynamics: DynamicsConfig | None = None, geom: ShipGeometry | None = None,
              record: bool = False) -> TrialResult:
    """One episode; the seed fixes the environment and controller streams separately."""
    geom = geom or ShipGeometry()
    env_ss, pol_ss = np.random.SeedSequence(list(seed)).spawn(2)
    rng = np.random.default_rng(env_ss)
    direction = protocol.wind_direction
    if direction is None:
        direction = float(rng.uniform(0.0, 2.0 * math.pi))
    wind = WindSpec(wind_speed, direction, protocol.correlation_time, protocol.gust_gain)
    env = TrackingEnv(dynamics or DynamicsConfig(), geom, RewardConfig.for_ship(geom),
                      protocol.episode_config(controller.ablation, semi_major), record=record)
    controller.begin_episode(np.random.default_rng(pol_ss))
    s = env.reset(scene.traj, scene.obstacles, wind, rng)
    while True:
        out = env.step(controller.command(s, env))
        s = out.features
        if out.terminated:
            break
    reason = out.termination_reason
    return TrialResult(reason.value, reason is Termination.COLLISION, env.t, env.k, tuple(seed),
                       env.trace if record else None)


def clopper_pearson(k: int, n: int, level: float = 0.95):
    """Exact binomial confidence interval for ``k`` successes in ``n`` trials."""
    if n < 1 or not 0 <= k <= n:
        raise ValueError("need 0 <= k <= n and n >= 1")
    a = 1.0 - level
    lo = 0.0 if k == 0 else float(beta.ppf(a / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(beta.ppf(1 - a / 2, k + 1, n - k))
    return lo, hi


class CellResult(NamedTuple):
    scene: str
    wind_speed: float
    semi_major_ratio: float
    trials: int
    collisions: int
    fraction: float
    ci_low: float
    ci_high: float
    reasons: tuple
    seeds: tuple


@dataclass
class CollisionReport:
    controller: str
    cells: list

    def cell(self, scene: str, wind_speed: float, semi_major_ratio: float) -> CellResult:
        for c in self.cells:
            if (c.scene == scene and math.isclose(c.wind_speed, wind_speed)
                    and math.isclose(c.semi_major_ratio, semi_major_ratio)):
                return c
        raise KeyError((scene, wind_speed, semi_major_ratio))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["controller", "scene", "wind_speed", "semi_major_ratio", "trials", "collisions",
                        "fraction", "ci_low", "ci_high"])
            for c in self.cells:
                w.writerow([self.controller, c.scene, repr(c.wind_speed), repr(c.semi_major_ratio), c.trials,
                            c.collisions, repr(c.fraction), repr(c.ci_low), repr(c.ci_high)])

    def write_trials(self, path) -> None:
        """Per-trial termination reasons with their seeds."""
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["controller", "scene", "wind_speed", "semi_major_ratio", "trial", "seed", "reason"])
            for c in self.cells:
                for i, (reason, seed) in enumerate(zip(c.reasons, c.seeds)):
                    w.writerow([self.controller, c.scene, repr(c.wind_speed), repr(c.semi_major_ratio), i,
                                " ".join(str(v) for v in seed), reason])


# worker-side context, filled once per process
_CTX: dict = {}


def _init_worker(ctx):
    _CTX.clear()
    _CTX.update(ctx)


def _run_job(job):
    scene_idx, wind_speed, ratio, seed, record = job
    c = _CTX
    geom = c["geom"]
    return run_trial(c["controller"], c["scenes"][scene_idx], wind_speed, ratio * geom.L, c["protocol"], seed,
                     c["dynamics"], geom, record)


def _map_jobs(jobs, ctx, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        _init_worker(ctx)
        return [_run_job(j) for j in jobs]
    chunk = max(1, len(jobs) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(ctx,)) as ex:
        return list(ex.map(_run_job, jobs, chunksize=chunk))


def run_collision_study(controller, scenes: Sequence[Scene], protocol: EvalProtocol, base_seed: int = 0,
                        workers: int = 1, dynamics: DynamicsConfig | None = None,
                        geom: ShipGeometry | None = None, traces_per_cell: int = 0):
    """Collision fraction with an exact 95 % interval for every (scene, wind, semi-major) cell.

    Trial seeds depend only on (base seed, scene, wind index, trial), so
    results do not depend on ``workers`` and different controllers or
    collision ellipses see the same random numbers. Returns the report and
    the recorded traces (the first ``traces_per_cell`` trials of each cell).
    """
    geom = geom or ShipGeometry()
    ctx = {"controller": controller, "scenes": list(scenes), "protocol": protocol,
           "dynamics": dynamics or DynamicsConfig(), "geom": geom}
    jobs, keys = [], []
    for si, scene in enumerate(scenes):
        for wi, ws in enumerate(protocol.wind_speeds):
            for ratio in protocol.semi_majors():
                for t in range(protocol.trials):
                    jobs.append((si, ws, ratio, trial_seed(base_seed, si, wi, t), t < traces_per_cell))
                    keys.append((si, ws, ratio))
    results = _map_jobs(jobs, ctx, workers)
    cells, traces = [], []
    grouped: dict = {}
    for key, res in zip(keys, results):
        grouped.setdefault(key, []).append(res)
    for (si, ws, ratio), rs in grouped.items():
        k = sum(r.collided for r in rs)
        lo, hi = clopper_pearson(k, len(rs))
        cells.append(CellResult(scenes[si].name, ws, ratio, len(rs), k, k / len(rs), lo, hi,
                                tuple(r.reason for r in rs), tuple(r.seed for r in rs)))
        for t, r in enumerate(rs):
            if r.trace is not None:
                traces.append({"name": f"{scenes[si].name}_w{ws:g}_a{ratio:g}_t{t:04d}", "seed": list(r.seed),
                               "semi_major_ratio": ratio, "wind_speed": ws, "scene": scenes[si].name,
                               "controller": getattr(controller, "name", "controller"),
                               "termination": r.reason, "rows": r.trace})
    return CollisionReport(getattr(controller, "name", "controller"), cells), traces


@dataclass
class PairedReport:
    a: CollisionReport
    b: CollisionReport
    protocol: EvalProtocol

    def rows(self):
        """One row per (wind, scene) with both controllers' fractions."""
        scenes = list(dict.fromkeys(c.scene for c in self.a.cells))
        main = self.protocol.collision_semi_major_ratio
        rerun = self.protocol.rerun_semi_major_ratio
        out = []
        for ws in self.protocol.wind_speeds:
            for sc in scenes:
                row = {"wind_speed": ws, "scene": sc}
                for tag, rep in (("a", self.a), ("b", self.b)):
                    row[tag] = rep.cell(sc, ws, main).fraction
                    row[tag + "_rerun"] = rep.cell(sc, ws, rerun).fraction if rerun is not None else math.nan
                out.append(row)
        return out

    def format_table(self) -> str:
        """Rows are wind speeds, columns scenes per controller; reruns in brackets."""
        scenes = list(dict.fromkeys(c.scene for c in self.a.cells))
        rows = self.rows()
        header = ["wind [m/s]"] + [f"{sc}:{rep.controller}" for rep in (self.a, self.b) for sc in scenes]
        lines = [header]
        for ws in self.protocol.wind_speeds:
            line = [f"{ws:g}"]
            for tag in ("a", "b"):
                for sc in scenes:
                    r = next(r for r in rows if r["scene"] == sc and r["wind_speed"] == ws)
                    txt = f"{r[tag]:.2f}"
                    if not math.isnan(r[tag + "_rerun"]):
                        txt += f" ({r[tag + '_rerun']:.2f})"
                    line.append(txt)
            lines.append(line)
        widths = [max(len(l[i]) for l in lines) for i in range(len(header))]
        return "\n".join("  ".join(c.ljust(w) for c, w in zip(l, widths)).rstrip() for l in lines)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["wind_speed", "scene", "fraction_a", "fraction_b", "fraction_a_rerun", "fraction_b_rerun"])
            for r in self.rows():
                w.writerow([repr(r["wind_speed"]), r["scene"], repr(r["a"]), repr(r["b"]), repr(r["a_rerun"]),
                            repr(r["b_rerun"])])


def compare_controllers(controller_a, controller_b, scenes: Sequence[Scene], protocol: EvalProtocol,
                        base_seed: int = 0, workers: int = 1, dynamics: DynamicsConfig | None = None,
                        geom: ShipGeometry | None = None) -> PairedReport:
    """Run both controllers on identical trial seeds."""
    a, _ = run_collision_study(controller_a, scenes, protocol, base_seed, workers, dynamics, geom)
    b, _ = run_collision_study(controller_b, scenes, protocol, base_seed, workers, dynamics, geom)
    return PairedReport(a, b, protocol)


def emit_traces(episodes: Sequence[dict], path) -> list:
    """One CSV per episode plus ``manifest.json``; returns the written paths."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    manifest, written = [], []
    for i, ep in enumerate(episodes):
        fname = f"trace_{i:04d}.csv"
        write_trace(ep["rows"], out / fname)
        written.append(out / fname)
        manifest.append({k: v for k, v in ep.items() if k != "rows"} | {"file": fname, "rows": len(ep["rows"])})
    with open(out / "manifest.json", "w") as f:
        json.dump({"episodes": manifest}, f, indent=1, sort_keys=True)
        f.write("\n")
    written.append(out / "manifest.json")
    return written
