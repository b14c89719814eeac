"""Scaled-down training and evaluation experiments."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .env import EpisodeConfig, TrackingEnv
from .evaluation import EvalProtocol, PolicyController, Scene, compare_controllers
from .geometry import ShipGeometry
from .scenario import generate_berthing_scenario, generate_harbor_obstacles
from .td3 import BerthingTask, TD3Config, evaluate_checkpoint, train
from .toy import StationKeepingTask

TOY_CONFIG = TD3Config(budget=2.0e5, eval_every=2.0e4, eval_episodes=20, hidden=(64, 64), batch_size=64,
                       warmup=2000, dtype="float64")

STUDY_CONFIG = TD3Config(budget=1.0e6, eval_every=1.0e5, eval_episodes=10, batch_size=128, warmup=10_000)


class ToyResult(NamedTuple):
    untrained: float
    trained: float
    log: list


def toy_smoke_training(seed: int = 0, cfg: TD3Config = TOY_CONFIG) -> ToyResult:
    """Train on the station-keeping task; returns before/after mean evaluation returns.

    Both numbers come from the same ``cfg.eval_episodes`` evaluation
    scenarios: the first log row is the untrained policy.
    """
    res = train(StationKeepingTask(), cfg, np.random.default_rng(seed))
    after = evaluate_checkpoint(res.agent, StationKeepingTask(), cfg.eval_episodes, cfg.eval_seed).mean
    return ToyResult(res.log[0]["eval_mean"], after, res.log)


def berth_scene(geom: ShipGeometry | None = None) -> Scene:
    geom = geom or ShipGeometry()
    traj, quay = generate_berthing_scenario(geom, dt=0.2)
    return Scene("berth", traj, (quay, generate_harbor_obstacles(traj, geom)))


class StudyResult(NamedTuple):
    report: object
    wins: int
    cells: list
    logs: dict


def reduced_berthing_study(seed: int = 0, cfg: TD3Config = STUDY_CONFIG, trials: int = 100,
                           wind_speeds=(0.0, 0.5), workers: int = 1, out_dir=None) -> StudyResult:
    """Train obstacle-aware and obstacle-blind controllers, then compare collision fractions.

    The four cells are the wind speeds times the two collision ellipses
    (0.75 L and 0.5 L). A cell counts as a win when the obstacle-aware
    controller collides no more often than the ablation on the same seeds.
    """
    agents, logs = {}, {}
    for name, ablation in (("aware", False), ("blind", True)):
        env = TrackingEnv(episode=EpisodeConfig(ablation=ablation))
        task = BerthingTask(env)
        sub = None if out_dir is None else f"{out_dir}/{name}"
        res = train(task, cfg, np.random.default_rng([seed, int(ablation)]), sub,
                    meta={"ablation": ablation, "feature_dim": env.feature_dim})
        agents[name] = res.agent
        logs[name] = res.log
    protocol = EvalProtocol(trials=trials, wind_speeds=tuple(wind_speeds))
    report = compare_controllers(PolicyController(agents["aware"], "aware"), PolicyController(agents["blind"], "blind"),
                                 [berth_scene()], protocol, base_seed=seed, workers=workers)
    cells = []
    for ws in protocol.wind_speeds:
        for ratio in protocol.semi_majors():
            a = report.a.cell("berth", ws, ratio).fraction
            b = report.b.cell("berth", ws, ratio).fraction
            cells.append((ws, ratio, a, b))
    wins = sum(a <= b + 1e-12 for _, _, a, b in cells)
    return StudyResult(report, wins, cells, logs)
