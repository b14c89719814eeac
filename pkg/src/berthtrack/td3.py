"""Twin-delayed deterministic policy gradient learner and checkpoints."""
from __future__ import annotations

import copy
import csv
import json
import math
import os
import struct
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .dynamics import ACT_HIGH, ACT_LOW, N_PROP, ControlCommand
from .nn import MLP, Adam, policy_forward

ACTION_DIM = 3
# indices of the commanded actuators (port rudder, starboard rudder, thruster)
_CTRL = (0, 1, 3)

CHECKPOINT_MAGIC = b"BTCK"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TD3Config:
    """Learner settings.

    ``budget`` and ``eval_every`` are in simulated seconds. ``warmup`` is
    the number of uniformly random decision steps before the policy acts.
    """
    gamma: float = 0.99
    budget: float = 3.0e7
    eval_every: float = 5.0e4
    eval_episodes: int = 20
    eval_seed: int = 12345
    replay_capacity: int = 1_000_000
    batch_size: int = 256
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    tau: float = 5e-3
    policy_delay: int = 2
    expl_noise: float = 0.1
    target_noise: float = 0.2
    noise_clip: float = 0.5
    warmup: int = 10_000
    hidden: tuple = (256, 256, 256)
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.policy_delay < 1:
            raise ValueError("policy delay must be at least 1")
        if self.batch_size < 1 or self.replay_capacity < 1:
            raise ValueError("batch size and replay capacity must be positive")
        if self.budget < 0 or self.eval_every <= 0:
            raise ValueError("budget must be non-negative and eval_every positive")
        if self.eval_episodes < 1:
            raise ValueError("eval_episodes must be at least 1")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    def replace(self, **kw) -> "TD3Config":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TD3Config":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise KeyError(f"unknown TD3Config keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# actions
# ---------------------------------------------------------------------------

class _ClampCounter:
    count = 0


def clamp_count() -> int:
    """Number of out-of-range normalized actions clamped so far."""
    return _ClampCounter.count


def reset_clamp_count() -> None:
    _ClampCounter.count = 0


def denormalize_action(a01) -> ControlCommand:
    """Map a normalized 3-vector onto the rudder and thruster limits; n_p stays fixed."""
    a = np.asarray(a01, dtype=float).reshape(ACTION_DIM)
    if np.any(a < 0) or np.any(a > 1) or not np.all(np.isfinite(a)):
        _ClampCounter.count += 1
        a = np.clip(np.nan_to_num(a, nan=0.5), 0.0, 1.0)
    lo = ACT_LOW[list(_CTRL)]
    hi = ACT_HIGH[list(_CTRL)]
    v = lo + a * (hi - lo)
    return ControlCommand(float(v[0]), float(v[1]), N_PROP, float(v[2]))


def normalize_command(cmd) -> np.ndarray:
    """Inverse of :func:`denormalize_action` for the three commanded actuators."""
    c = np.asarray(cmd, dtype=float)[list(_CTRL)]
    lo = ACT_LOW[list(_CTRL)]
    hi = ACT_HIGH[list(_CTRL)]
    return (c - lo) / (hi - lo)


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------

class Batch(NamedTuple):
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    done: np.ndarray


class ReplayBuffer:
    """Fixed-capacity FIFO store with uniform sampling."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int = ACTION_DIM):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.s = np.zeros((capacity, obs_dim))
        self.a = np.zeros((capacity, act_dim))
        self.r = np.zeros(capacity)
        self.s_next = np.zeros((capacity, obs_dim))
        self.done = np.zeros(capacity)
        self.ptr = 0
        self.size = 0

    def __len__(self):
        return self.size

    def add(self, s, a, r, s_next, done) -> None:
        a = np.asarray(a, dtype=float)
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(s_next)) and math.isfinite(r)):
            raise ValueError("transition has non-finite entries")
        if np.any(a < 0) or np.any(a > 1):
            raise ValueError("normalized action outside [0, 1]")
        i = self.ptr
        self.s[i] = s
        self.a[i] = a
        self.r[i] = r
        self.s_next[i] = s_next
        self.done[i] = float(done)
        self.ptr = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, rng, n: int) -> np.ndarray:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        return rng.integers(0, self.size, n)

    def sample(self, rng, n: int) -> Batch:
        idx = self.sample_indices(rng, n)
        return Batch(self.s[idx], self.a[idx], self.r[idx], self.s_next[idx], self.done[idx])


# ---------------------------------------------------------------------------
# agent
# ---------------------------------------------------------------------------

class TD3Agent:
    """Actor, twin critics, their targets and optimizer state plus counters."""

    def __init__(self, obs_dim: int, cfg: TD3Config | None = None, input_scale=None,
                 rng: np.random.Generator | None = None, meta: dict | None = None):
        self.cfg = cfg or TD3Config()
        dt = np.dtype(self.cfg.dtype)
        self.obs_dim = int(obs_dim)
        scale = np.ones(obs_dim) if input_scale is None else np.asarray(input_scale, dtype=float)
        hidden = list(self.cfg.hidden)
        self.actor = MLP([obs_dim, *hidden, ACTION_DIM], "sigmoid", scale, dt)
        cscale = np.concatenate([scale, np.ones(ACTION_DIM)])
        self.critic1 = MLP([obs_dim + ACTION_DIM, *hidden, 1], "linear", cscale, dt)
        self.critic2 = MLP([obs_dim + ACTION_DIM, *hidden, 1], "linear", cscale, dt)
        if rng is not None:
            self.actor.init(rng)
            self.critic1.init(rng)
            self.critic2.init(rng)
        self.actor_t = self.actor.copy()
        self.critic1_t = self.critic1.copy()
        self.critic2_t = self.critic2.copy()
        self.actor_opt = Adam(self.actor.params, self.cfg.actor_lr)
        self.critic1_opt = Adam(self.critic1.params, self.cfg.critic_lr)
        self.critic2_opt = Adam(self.critic2.params, self.cfg.critic_lr)
        self.sim_time = 0.0
        self.env_steps = 0
        self.episodes = 0
        self.updates = 0
        self.meta = dict(meta or {})

    def act(self, s) -> np.ndarray:
        return np.asarray(policy_forward(self.actor, s), dtype=float)

    def networks(self):
        return {"actor": self.actor, "critic1": self.critic1, "critic2": self.critic2,
                "actor_t": self.actor_t, "critic1_t": self.critic1_t, "critic2_t": self.critic2_t}

    def optimizers(self):
        return {"actor": self.actor_opt, "critic1": self.critic1_opt, "critic2": self.critic2_opt}


def _critic_step(critic: MLP, opt: Adam, sa, y):
    q, acts = critic.forward_cache(sa)
    diff = q[:, 0] - y
    loss = float(np.mean(diff * diff))
    if not math.isfinite(loss):
        raise FloatingPointError("non-finite critic loss")
    grads, _ = critic.backward(acts, (2.0 / len(y)) * diff[:, None])
    opt.step(critic.params, grads)
    return loss


def critic_targets(agent: TD3Agent, batch: Batch, rng: np.random.Generator, cfg: TD3Config | None = None):
    """Clipped double-Q regression targets with smoothed target actions."""
    cfg = cfg or agent.cfg
    dt = agent.actor.dtype
    s2 = np.asarray(batch.s_next, dtype=dt)
    r = np.asarray(batch.r, dtype=dt)
    done = np.asarray(batch.done, dtype=dt)
    noise = np.clip(rng.standard_normal((len(r), ACTION_DIM)) * cfg.target_noise, -cfg.noise_clip, cfg.noise_clip)
    a2 = np.clip(agent.actor_t.forward(s2) + noise.astype(dt), 0.0, 1.0)
    sa2 = np.hstack([s2, a2])
    q_next = np.minimum(agent.critic1_t.forward(sa2)[:, 0], agent.critic2_t.forward(sa2)[:, 0])
    return np.where(done > 0, r, r + cfg.gamma * q_next)


def td3_update(agent: TD3Agent, batch: Batch, rng: np.random.Generator, cfg: TD3Config | None = None) -> dict:
    """One learner step: both critics regress, the actor and targets move every ``policy_delay`` steps."""
    cfg = cfg or agent.cfg
    if len(batch.r) == 0:
        raise ValueError("empty batch")
    dt = agent.actor.dtype
    s = np.asarray(batch.s, dtype=dt)
    a = np.asarray(batch.a, dtype=dt)
    y = critic_targets(agent, batch, rng, cfg)

    sa = np.hstack([s, a])
    l1 = _critic_step(agent.critic1, agent.critic1_opt, sa, y)
    l2 = _critic_step(agent.critic2, agent.critic2_opt, sa, y)
    agent.updates += 1
    out = {"critic_loss": 0.5 * (l1 + l2), "actor_loss": math.nan}

    if agent.updates % cfg.policy_delay == 0:
        mu, acts_a = agent.actor.forward_cache(s)
        q, acts_c = agent.critic1.forward_cache(np.hstack([s, mu]))
        actor_loss = -float(np.mean(q))
        if not math.isfinite(actor_loss):
            raise FloatingPointError("non-finite actor loss")
        _, gx = agent.critic1.backward(acts_c, np.full_like(q, -1.0 / len(q)), need_input_grad=True)
        grads, _ = agent.actor.backward(acts_a, gx[:, agent.obs_dim:])
        agent.actor_opt.step(agent.actor.params, grads)
        agent.actor_t.soft_update(agent.actor, cfg.tau)
        agent.critic1_t.soft_update(agent.critic1, cfg.tau)
        agent.critic2_t.soft_update(agent.critic2, cfg.tau)
        out["actor_loss"] = actor_loss
    return out


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------
#
# layout: magic "BTCK" | uint32 version | uint64 header length | UTF-8 JSON
# header (sorted keys) | raw little-endian array payloads in header order.

def _write_container(path, header: dict, arrays: dict) -> None:
    entries = []
    offset = 0
    blobs = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        b = le.tobytes()
        entries.append({"name": name, "dtype": le.dtype.str, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(b)})
        offset += len(b)
        blobs.append(b)
    header = dict(header, arrays=entries)
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(hb)))
        f.write(hb)
        for b in blobs:
            f.write(b)
    os.replace(tmp, path)


def _read_container(path):
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<IQ", data[4:16])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[16:16 + hlen].decode("utf-8"))
    base = 16 + hlen
    arrays = {}
    for e in header["arrays"]:
        start = base + e["offset"]
        buf = data[start:start + e["nbytes"]]
        if len(buf) != e["nbytes"]:
            raise ValueError(f"{path}: truncated checkpoint")
        arrays[e["name"]] = np.frombuffer(buf, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return header, arrays


def save_checkpoint(agent: TD3Agent, path, rng_state: dict | None = None) -> None:
    arrays = {}
    for key, net in agent.networks().items():
        for i, p in enumerate(net.params):
            arrays[f"{key}/{i:02d}"] = p
    for key, opt in agent.optimizers().items():
        for i, (m, v) in enumerate(zip(opt.m, opt.v)):
            arrays[f"adam_{key}/m{i:02d}"] = m
            arrays[f"adam_{key}/v{i:02d}"] = v
    header = {
        "format": "berthtrack.td3",
        "obs_dim": agent.obs_dim,
        "input_scale": [float(v) for v in agent.actor.input_scale],
        "config": agent.cfg.to_dict(),
        "counters": {"sim_time": float(agent.sim_time), "env_steps": int(agent.env_steps),
                     "episodes": int(agent.episodes), "updates": int(agent.updates)},
        "adam_steps": {k: int(o.t) for k, o in agent.optimizers().items()},
        "meta": agent.meta,
        "rng_state": rng_state,
    }
    _write_container(path, header, arrays)


def load_checkpoint(path) -> TD3Agent:
    header, arrays = _read_container(path)
    if header.get("format") != "berthtrack.td3":
        raise ValueError(f"{path}: unknown checkpoint format")
    cfg = TD3Config.from_dict(header["config"])
    agent = TD3Agent(header["obs_dim"], cfg, header["input_scale"], None, header.get("meta"))
    for key, net in agent.networks().items():
        for i, p in enumerate(net.params):
            a = arrays[f"{key}/{i:02d}"]
            if a.shape != p.shape:
                raise ValueError(f"{path}: shape mismatch for {key}/{i}")
            p[...] = a
    for key, opt in agent.optimizers().items():
        for i in range(len(opt.m)):
            opt.m[i][...] = arrays[f"adam_{key}/m{i:02d}"]
            opt.v[i][...] = arrays[f"adam_{key}/v{i:02d}"]
        opt.t = header["adam_steps"][key]
    c = header["counters"]
    agent.sim_time = c["sim_time"]
    agent.env_steps = c["env_steps"]
    agent.episodes = c["episodes"]
    agent.updates = c["updates"]
    agent.rng_state = header.get("rng_state")
    return agent


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

LOG_COLUMNS = ("sim_time", "env_steps", "episodes", "updates", "eval_mean", "eval_stderr",
               "critic_loss", "actor_loss")


class EvalResult(NamedTuple):
    mean: float
    stderr: float
    returns: np.ndarray


def run_episode(policy, task, rng, noise: float = 0.0, noise_rng=None) -> float:
    """Undiscounted return of one episode under ``policy`` (a callable on features)."""
    s = task.reset(rng)
    total = 0.0
    while True:
        a = np.asarray(policy(s), dtype=float)
        if noise > 0:
            a = np.clip(a + noise * noise_rng.standard_normal(a.shape), 0.0, 1.0)
        s, r, terminated, truncated = task.step(a)
        total += r
        if terminated or truncated:
            return total


def evaluate_checkpoint(policy, task, n_episodes: int = 20, seed: int = 0) -> EvalResult:
    """Mean and standard error of the return of the deterministic policy.

    ``policy`` is a :class:`TD3Agent`, an actor :class:`MLP` or a callable.
    Episode ``i`` draws its scenario from the seed ``(seed, i)`` so repeated
    evaluations see the same scenarios.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be at least 1")
    if isinstance(policy, TD3Agent):
        fn = policy.act
    elif isinstance(policy, MLP):
        fn = policy.forward
    else:
        fn = policy
    rets = np.array([run_episode(fn, task, np.random.default_rng([seed, i])) for i in range(n_episodes)])
    se = float(rets.std(ddof=1) / math.sqrt(n_episodes)) if n_episodes > 1 else 0.0
    return EvalResult(float(rets.mean()), se, rets)


class TrainResult(NamedTuple):
    agent: TD3Agent
    checkpoints: list
    log: list


def _log_row(agent, ev, losses):
    cl = [l["critic_loss"] for l in losses]
    al = [l["actor_loss"] for l in losses if not math.isnan(l["actor_loss"])]
    return {"sim_time": float(agent.sim_time), "env_steps": agent.env_steps, "episodes": agent.episodes,
            "updates": agent.updates, "eval_mean": ev.mean, "eval_stderr": ev.stderr,
            "critic_loss": float(np.mean(cl)) if cl else math.nan,
            "actor_loss": float(np.mean(al)) if al else math.nan}


def write_log(rows, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(LOG_COLUMNS)
        for row in rows:
            w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in LOG_COLUMNS])


def train(task, cfg: TD3Config, rng: np.random.Generator, out_dir=None, agent: TD3Agent | None = None,
          eval_task=None, meta: dict | None = None) -> TrainResult:
    """Run TD3 for ``cfg.budget`` additional simulated seconds.

    ``task`` exposes ``obs_dim``, ``input_scale``, ``decision_dt``,
    ``reset(rng)`` and ``step(a01) -> (s, r, terminated, truncated)``.
    A checkpoint and a log row are produced at the start and every
    ``cfg.eval_every`` simulated seconds; ``out_dir`` receives them as files.
    """
    # evaluation may run mid-episode, so it needs its own environment
    eval_task = eval_task if eval_task is not None else copy.deepcopy(task)
    if agent is None:
        agent = TD3Agent(task.obs_dim, cfg, task.input_scale, rng, meta)
    elif agent.obs_dim != task.obs_dim:
        raise ValueError("checkpoint input width does not match the task")
    cfg = agent.cfg if cfg is None else cfg
    buf = ReplayBuffer(min(cfg.replay_capacity, max(1, int(math.ceil(cfg.budget / task.decision_dt)) + 1)),
                       task.obs_dim)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    ckpts, log, losses = [], [], []

    def checkpoint():
        ev = evaluate_checkpoint(agent, eval_task, cfg.eval_episodes, cfg.eval_seed)
        log.append(_log_row(agent, ev, losses))
        losses.clear()
        if out is not None:
            p = out / f"checkpoint_{int(round(agent.sim_time)):012d}.btck"
            save_checkpoint(agent, p, rng.bit_generator.state)
            write_log(log, out / "train_log.csv")
            ckpts.append(p)
        else:
            ckpts.append({k: [p.copy() for p in n.params] for k, n in agent.networks().items()})

    checkpoint()
    end_time = agent.sim_time + cfg.budget
    next_eval = agent.sim_time + cfg.eval_every
    while agent.sim_time < end_time - 1e-9:
        s = task.reset(rng)
        agent.episodes += 1
        while True:
            if agent.env_steps < cfg.warmup:
                a = rng.uniform(0.0, 1.0, ACTION_DIM)
            else:
                a = np.clip(agent.act(s) + cfg.expl_noise * rng.standard_normal(ACTION_DIM), 0.0, 1.0)
            s2, r, terminated, truncated = task.step(a)
            buf.add(s, a, r, s2, terminated)
            agent.env_steps += 1
            agent.sim_time += task.decision_dt
            if len(buf) >= cfg.batch_size and agent.env_steps >= cfg.warmup:
                try:
                    losses.append(td3_update(agent, buf.sample(rng, cfg.batch_size), rng, cfg))
                except FloatingPointError:
                    if out is not None:
                        save_checkpoint(agent, out / "diverged.btck", None)
                        with open(out / "diverged.json", "w") as f:
                            json.dump({"sim_time": agent.sim_time, "updates": agent.updates,
                                       "recent_losses": losses[-20:]}, f, indent=1, sort_keys=True)
                    raise
            s = s2
            if agent.sim_time >= next_eval - 1e-9:
                checkpoint()
                next_eval += cfg.eval_every
            if terminated or truncated or agent.sim_time >= end_time - 1e-9:
                break
    if log and log[-1]["sim_time"] != agent.sim_time:
        checkpoint()
    return TrainResult(agent, ckpts, log)


# ---------------------------------------------------------------------------
# berthing task adapter
# ---------------------------------------------------------------------------

class BerthingTask:
    """Fresh random trajectory, obstacles and wind every episode.

    Wraps a :class:`~berthtrack.env.TrackingEnv` so that actions are
    normalized 3-vectors.
    """

    def __init__(self, env, traj_duration: float = 200.0, grid=None, command_interval: float | None = None):
        from .env import feature_scale
        self.env = env
        self.traj_duration = float(traj_duration)
        self.grid = grid
        self.command_interval = command_interval
        self.obs_dim = env.feature_dim
        self.input_scale = feature_scale(env.geom, self.obs_dim)
        self.decision_dt = env.episode.dt_decision

    def reset(self, rng):
        from .scenario import generate_random_trajectory, generate_training_obstacles
        env = self.env
        traj = generate_random_trajectory(self.traj_duration, env.episode.dt_decision, rng,
                                          env.dynamics.replace(sigma_sys=(0.0,) * 6), self.command_interval)
        obs = None if env.episode.ablation else generate_training_obstacles(traj, env.geom, self.grid)
        return env.reset(traj, obs, None, rng)

    def step(self, a01):
        from .env import Termination
        out = self.env.step(denormalize_action(a01))
        truncated = out.termination_reason is Termination.HORIZON
        return out.features, out.reward, out.terminated and not truncated, truncated
