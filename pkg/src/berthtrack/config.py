"""Layered run configuration: defaults, then a JSON file, then command-line overrides."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .dynamics import DynamicsConfig
from .env import EpisodeConfig, RewardConfig
from .evaluation import EvalProtocol
from .geometry import ShipGeometry
from .td3 import TD3Config


@dataclass(frozen=True)
class TaskConfig:
    """Training scenario generation.

    ``command_interval=None`` resamples random commands every decision step;
    ``grid_cell=None`` uses cells of twice the ship length.
    """
    traj_duration: float = 200.0
    command_interval: float | None = None
    grid_cell: float | None = None
    grid_padding: int = 2

    def __post_init__(self):
        if self.traj_duration <= 0:
            raise ValueError("trajectory duration must be positive")
        if self.grid_padding < 1:
            raise ValueError("grid padding must be at least 1")


SECTIONS = ("ship", "dynamics", "reward", "episode", "task", "train", "eval")
_SECTION_TYPES = {"ship": ShipGeometry, "dynamics": DynamicsConfig, "reward": RewardConfig,
                  "episode": EpisodeConfig, "task": TaskConfig, "train": TD3Config, "eval": EvalProtocol}


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if hasattr(v, "tolist"):
        return v.tolist()
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    if isinstance(v, list):
        return [_plain(x) for x in v]
    return v


def default_dict() -> dict:
    """Every configurable key with its default value."""
    out = {"seed": 0}
    for name in SECTIONS:
        obj = _SECTION_TYPES[name]()
        if hasattr(obj, "to_dict"):
            out[name] = _plain(obj.to_dict())
        else:
            out[name] = {f.name: _plain(getattr(obj, f.name)) for f in fields(obj)}
    # the reward tolerances follow the ship unless set explicitly
    out["reward"]["e0"] = None
    out["reward"]["e_inf"] = None
    return out


def merge(base: dict, override: dict, where: str = "") -> dict:
    """Recursive merge that rejects keys absent from ``base``."""
    out = copy.deepcopy(base)
    for k, v in override.items():
        if k not in base:
            raise KeyError(f"unknown config key {where + k!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise TypeError(f"config key {where + k!r} must be a table")
            out[k] = merge(base[k], v, where + k + ".")
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_assignment(text: str) -> dict:
    """``section.key=value`` with a JSON value (bare words are taken as strings)."""
    if "=" not in text:
        raise ValueError(f"expected section.key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    d = value
    for part in reversed(key.strip().split(".")):
        d = {part: d}
    return d


@dataclass
class RunConfig:
    data: dict = field(default_factory=default_dict)

    @classmethod
    def load(cls, path=None, overrides=()) -> "RunConfig":
        data = default_dict()
        if path is not None:
            with open(path) as f:
                data = merge(data, json.load(f))
        for o in overrides:
            data = merge(data, o)
        cfg = cls(data)
        cfg.validate()
        return cfg

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    def section(self, name: str) -> dict:
        return dict(self.data[name])

    def ship(self) -> ShipGeometry:
        return ShipGeometry(**self.data["ship"])

    def dynamics(self) -> DynamicsConfig:
        return DynamicsConfig.from_dict(self.data["dynamics"])

    def reward(self) -> RewardConfig:
        d = {k: v for k, v in self.data["reward"].items() if v is not None}
        return RewardConfig.for_ship(self.ship(), **d)

    def episode(self) -> EpisodeConfig:
        return EpisodeConfig.from_dict(self.data["episode"])

    def task(self) -> TaskConfig:
        return TaskConfig(**self.data["task"])

    def train(self) -> TD3Config:
        return TD3Config.from_dict(self.data["train"])

    def eval(self) -> EvalProtocol:
        return EvalProtocol.from_dict(self.data["eval"])

    def validate(self) -> None:
        for name in ("ship", "dynamics", "reward", "episode", "task", "train", "eval"):
            getattr(self, name)()
        if not isinstance(self.data["seed"], int) or self.data["seed"] < 0:
            raise ValueError("seed must be a non-negative integer")

    def dump(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            json.dump(self.data, f, indent=1, sort_keys=True)
            f.write("\n")
