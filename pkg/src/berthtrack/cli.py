"""Command-line entry point: ``berthtrack {gen-scenario,train,evaluate,simulate}``."""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, parse_assignment
from .dynamics import WindSpec
from .env import ABLATION_FEATURE_DIM, FEATURE_DIM, TrackingEnv, write_trace
from .evaluation import (PairedReport, PolicyController, RandomController, ReplayController, Scene, emit_traces,
                         run_collision_study)
from .scenario import (GridSpec, generate_berthing_scenario, generate_harbor_obstacles, generate_random_trajectory,
                       generate_training_obstacles, load_obstacles, load_trajectory, save_obstacles,
                       save_trajectory)
from .td3 import BerthingTask, load_checkpoint, train

CONFIG_NAME = "effective_config.json"


class UsageError(Exception):
    pass


def _common(p):
    p.add_argument("--config", type=Path, help="JSON config file layered over the defaults")
    p.add_argument("--seed", type=int, help="base seed (overrides the config)")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--workers", type=int, default=1, help="worker processes; never changes results")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config value (JSON literal), repeatable")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="berthtrack", description="Obstacle-aware berthing trajectory tracking.")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-scenario", help="write a desired trajectory and obstacle files")
    _common(g)
    g.add_argument("--variant", choices=("training", "harbor", "berthing"), default="training")
    g.add_argument("--duration", type=float, help="trajectory length in s (random variants)")
    g.add_argument("--dt", type=float, help="sample spacing in s")

    t = sub.add_parser("train", help="train a tracking controller")
    _common(t)
    t.add_argument("--budget", type=float, help="simulated seconds of training")
    t.add_argument("--eval-every", type=float, help="simulated seconds between checkpoints")
    t.add_argument("--ablation", action="store_true", help="obstacle-blind controller (22 inputs)")
    t.add_argument("--resume", type=Path, help="checkpoint to continue from")

    e = sub.add_parser("evaluate", help="collision study for one or two checkpoints")
    _common(e)
    e.add_argument("--checkpoint", type=Path, action="append", required=True,
                   help="checkpoint file; give twice for a paired comparison")
    e.add_argument("--scene", type=Path, action="append", default=[],
                   help="directory with trajectory.csv and obstacle JSON files (default: generated berth)")
    e.add_argument("--trials", type=int)
    e.add_argument("--horizon", type=float)
    e.add_argument("--wind-speeds", type=float, nargs="+")
    e.add_argument("--wind-direction", type=float, help="fixed direction in rad (default: random per trial)")
    e.add_argument("--no-rerun", action="store_true", help="skip the smaller collision ellipse")
    e.add_argument("--traces", type=int, default=0, help="traces to export per cell")

    s = sub.add_parser("simulate", help="run one episode and export its trace")
    _common(s)
    s.add_argument("--policy", choices=("checkpoint", "replay", "random"), default="random")
    s.add_argument("--checkpoint", type=Path)
    s.add_argument("--commands", type=Path, help="commands.csv for replay (default: <scene>/commands.csv)")
    s.add_argument("--scene", type=Path, help="scene directory (default: generated berth)")
    s.add_argument("--deployment", action="store_true", help="use the evaluation episode settings")
    s.add_argument("--wind-speed", type=float, default=0.0)
    s.add_argument("--wind-direction", type=float, default=0.0)
    s.add_argument("--horizon", type=float)
    s.add_argument("--no-noise", action="store_true", help="disable process and observation noise")
    s.add_argument("--no-init-error", action="store_true", help="start exactly on the first sample")
    return ap


def _load_config(args, extra: dict | None = None) -> RunConfig:
    overrides = [parse_assignment(a) for a in args.set]
    if args.seed is not None:
        overrides.append({"seed": args.seed})
    if extra:
        overrides.append(extra)
    return RunConfig.load(args.config, overrides)


def _write_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, indent=1, sort_keys=True)
        f.write("\n")


def save_commands(cmds, interval: float, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", "delta_p", "delta_s", "n_p", "n_bt"])
        for i, c in enumerate(cmds):
            w.writerow([repr(i * interval)] + [repr(float(v)) for v in c])


def load_commands(path):
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0] != ["t", "delta_p", "delta_s", "n_p", "n_bt"] or len(rows) < 2:
        raise UsageError(f"{path}: not a commands file")
    arr = np.array([[float(v) for v in r] for r in rows[1:]])
    interval = arr[1, 0] - arr[0, 0] if len(arr) > 1 else math.inf
    return arr[:, 1:], interval


def load_scene(path: Path) -> Scene:
    path = Path(path)
    traj_file = path / "trajectory.csv"
    if not traj_file.exists():
        raise UsageError(f"{path}: no trajectory.csv")
    sets = tuple(load_obstacles(p) for p in sorted(path.glob("*.json")) if p.name != CONFIG_NAME)
    return Scene(path.name, load_trajectory(traj_file), sets)


def default_berth_scene(cfg: RunConfig) -> Scene:
    geom = cfg.ship()
    traj, quay = generate_berthing_scenario(geom, dt=0.2)
    return Scene("berth", traj, (quay, generate_harbor_obstacles(traj, geom)))


def cmd_gen_scenario(args) -> int:
    cfg = _load_config(args)
    geom = cfg.ship()
    rng = np.random.default_rng(cfg.seed)
    task = cfg.task()
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    grid = GridSpec(cell=task.grid_cell, padding=task.grid_padding)
    if args.variant == "berthing":
        traj, quay = generate_berthing_scenario(geom, dt=args.dt or 0.2)
        save_trajectory(traj, out / "trajectory.csv")
        save_obstacles(quay, out / "quay.json")
        save_obstacles(generate_harbor_obstacles(traj, geom, grid), out / "obstacles.json")
    else:
        dt = args.dt if args.dt is not None else cfg.episode().dt_decision
        duration = args.duration if args.duration is not None else task.traj_duration
        if duration < dt:
            raise UsageError("--duration must be at least --dt")
        interval = task.command_interval or dt
        dyn = cfg.dynamics().replace(sigma_sys=(0.0,) * 6)
        traj, cmds = generate_random_trajectory(duration, dt, rng, dyn, interval, return_commands=True)
        save_trajectory(traj, out / "trajectory.csv")
        save_commands(cmds, interval, out / "commands.csv")
        if args.variant == "training":
            obs = generate_training_obstacles(traj, geom, grid)
        else:
            obs = generate_harbor_obstacles(traj, geom, grid)
        save_obstacles(obs, out / "obstacles.json")
    cfg.dump(out / CONFIG_NAME)
    print(f"wrote {args.variant} scenario to {out}")
    return 0


def cmd_train(args) -> int:
    extra = {}
    if args.budget is not None:
        extra.setdefault("train", {})["budget"] = args.budget
    if args.eval_every is not None:
        extra.setdefault("train", {})["eval_every"] = args.eval_every
    if args.ablation:
        extra["episode"] = {"ablation": True}
    cfg = _load_config(args, extra)
    ep = cfg.episode()
    agent = None
    rng = np.random.default_rng(cfg.seed)
    if args.resume is not None:
        if not args.resume.exists():
            raise UsageError(f"checkpoint {args.resume} not found")
        agent = load_checkpoint(args.resume)
        if agent.obs_dim != ep.feature_dim:
            raise UsageError(f"checkpoint has {agent.obs_dim} inputs but the episode settings give "
                             f"{ep.feature_dim} (check --ablation)")
        if agent.rng_state is not None:
            rng.bit_generator.state = agent.rng_state
    env = TrackingEnv(cfg.dynamics(), cfg.ship(), cfg.reward(), ep)
    task = cfg.task()
    bt = BerthingTask(env, task.traj_duration, GridSpec(cell=task.grid_cell, padding=task.grid_padding),
                      task.command_interval)
    args.out.mkdir(parents=True, exist_ok=True)
    cfg.dump(args.out / CONFIG_NAME)
    tcfg = cfg.train()
    if agent is not None:
        agent.cfg = tcfg
    res = train(bt, tcfg, rng, args.out, agent, meta={"ablation": ep.ablation, "feature_dim": ep.feature_dim})
    last = res.log[-1]
    print(f"trained to {last['sim_time']:g} s; eval return {last['eval_mean']:.3f} "
          f"+- {last['eval_stderr']:.3f}; {len(res.checkpoints)} checkpoints in {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    extra = {}
    if args.trials is not None:
        extra["trials"] = args.trials
    if args.horizon is not None:
        extra["horizon"] = args.horizon
    if args.wind_speeds is not None:
        extra["wind_speeds"] = args.wind_speeds
    if args.wind_direction is not None:
        extra["wind_direction"] = args.wind_direction
    if args.no_rerun:
        extra["rerun_semi_major_ratio"] = None
    cfg = _load_config(args, {"eval": extra} if extra else None)
    if len(args.checkpoint) > 2:
        raise UsageError("give one or two checkpoints")
    for p in args.checkpoint:
        if not p.exists():
            raise UsageError(f"checkpoint {p} not found")
    controllers = []
    for i, p in enumerate(args.checkpoint):
        ag = load_checkpoint(p)
        if ag.obs_dim not in (FEATURE_DIM, ABLATION_FEATURE_DIM):
            raise UsageError(f"{p}: unsupported input width {ag.obs_dim}")
        controllers.append(PolicyController(ag, name=f"{chr(ord('A') + i)}:{p.stem}"))
    scenes = [load_scene(s) for s in args.scene] or [default_berth_scene(cfg)]
    protocol = cfg.eval()
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / CONFIG_NAME)
    dyn, geom = cfg.dynamics(), cfg.ship()
    all_traces = []
    reports = []
    for i, c in enumerate(controllers):
        rep, traces = run_collision_study(c, scenes, protocol, cfg.seed, args.workers, dyn, geom, args.traces)
        tag = "ab"[i]
        rep.write_csv(out / f"report_{tag}.csv")
        rep.write_trials(out / f"trials_{tag}.csv")
        reports.append(rep)
        all_traces += traces
    if args.traces:
        emit_traces(all_traces, out / "traces")
    if len(reports) == 2:
        paired = PairedReport(reports[0], reports[1], protocol)
        paired.write_csv(out / "paired.csv")
        table = paired.format_table()
        (out / "table.txt").write_text(table + "\n")
        print(table)
    else:
        for c in reports[0].cells:
            print(f"{c.scene:>12} wind {c.wind_speed:4.2f} ellipse {c.semi_major_ratio:.2f}L: "
                  f"{c.collisions}/{c.trials} = {c.fraction:.3f} [{c.ci_low:.3f}, {c.ci_high:.3f}]")
    return 0


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    geom = cfg.ship()
    scene = load_scene(args.scene) if args.scene else default_berth_scene(cfg)
    if args.deployment:
        ep = cfg.eval().episode_config(False, cfg.eval().collision_semi_major_ratio * geom.L)
    else:
        ep = cfg.episode()
    if args.horizon is not None:
        ep = ep.replace(horizon=args.horizon)
    if args.no_noise:
        ep = ep.replace(process_noise=False, observation_noise=False)
    if args.no_init_error:
        ep = ep.replace(init_pos=0.0, init_u=0.0, init_vm=0.0, init_psi_deg=0.0, init_r_deg=0.0)
    if args.policy == "checkpoint":
        if args.checkpoint is None or not args.checkpoint.exists():
            raise UsageError("--policy checkpoint needs an existing --checkpoint")
        ctrl = PolicyController(load_checkpoint(args.checkpoint))
        ep = ep.replace(ablation=ctrl.ablation)
    elif args.policy == "replay":
        path = args.commands or (args.scene / "commands.csv" if args.scene else None)
        if path is None or not Path(path).exists():
            raise UsageError("--policy replay needs a commands file")
        cmds, interval = load_commands(path)
        ctrl = ReplayController(cmds, interval)
    else:
        if args.checkpoint is not None:
            raise UsageError("--checkpoint only applies to --policy checkpoint")
        ctrl = RandomController()
    env = TrackingEnv(cfg.dynamics(), geom, cfg.reward(), ep, record=True)
    ss_env, ss_pol = np.random.SeedSequence(cfg.seed).spawn(2)
    rng = np.random.default_rng(ss_env)
    ctrl.begin_episode(np.random.default_rng(ss_pol))
    s = env.reset(scene.traj, scene.obstacles, WindSpec(args.wind_speed, args.wind_direction), rng)
    total = 0.0
    while True:
        o = env.step(ctrl.command(s, env))
        total += o.reward
        s = o.features
        if o.terminated:
            break
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / CONFIG_NAME)
    write_trace(env.trace, out / "trace.csv")
    summary = {"termination": o.termination_reason.value, "steps": env.k, "t_end": env.t, "return": total,
               "max_e_bow": max(r["e_bow"] for r in env.trace[1:]),
               "max_e_stern": max(r["e_stern"] for r in env.trace[1:])}
    _write_json(out / "summary.json", summary)
    print(f"{o.termination_reason.value} after {env.t:g} s, return {total:.3f}")
    return 0


COMMANDS = {"gen-scenario": cmd_gen_scenario, "train": cmd_train, "evaluate": cmd_evaluate,
            "simulate": cmd_simulate}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.workers < 1:
        parser.error("--workers must be at least 1")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ValueError, KeyError, TypeError, OSError) as exc:
        print(f"berthtrack {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
