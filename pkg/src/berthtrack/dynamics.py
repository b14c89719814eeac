"""Low-speed 3-DOF vessel dynamics.

The force model is a surrogate twin-rudder ship (see :class:`DynamicsConfig`):
it is *not* the captive-test model of any real hull. Its coefficients were
picked so that a 3 m model ship reaches roughly 0.43 m/s ahead with both
rudders at zero, balances near rest with the rudders at (-75, 75) deg, and
drifts visibly in winds of 1 m/s.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import kernels
from .geometry import VesselState

ACT_LOW = np.array([-105.0, -35.0, 10.0, -30.0])
ACT_HIGH = np.array([35.0, 105.0, 10.0, 30.0])
NEUTRAL_COMMAND = (-75.0, 75.0, 10.0, 0.0)
N_PROP = 10.0


class ActuatorState(NamedTuple):
    delta_p: float
    delta_s: float
    n_p: float
    n_bt: float


class ControlCommand(NamedTuple):
    delta_p: float
    delta_s: float
    n_p: float
    n_bt: float


class Wind(NamedTuple):
    U_T: float
    gamma_T: float


@dataclass(frozen=True)
class WindSpec:
    """Mean wind plus a mean-reverting gust process on the speed.

    ``gust_gain`` is the stationary standard deviation of the speed as a
    fraction of ``mean_speed``; ``correlation_time`` is the reversion time.
    ``mean_direction`` is the direction the wind comes from, earth-fixed.
    """
    mean_speed: float = 0.0
    mean_direction: float = 0.0
    correlation_time: float = 10.0
    gust_gain: float = 0.15

    def __post_init__(self):
        if self.mean_speed < 0:
            raise ValueError("mean wind speed must be non-negative")
        if self.correlation_time <= 0:
            raise ValueError("correlation time must be positive")

    def initial(self) -> Wind:
        return Wind(self.mean_speed, self.mean_direction % (2 * math.pi))


def _default_wind_table(c0, kind):
    ang = np.radians(np.arange(0, 361, 10))
    if kind == "x":
        tab = -c0 * np.cos(ang)
    elif kind == "y":
        tab = -c0 * np.sin(ang)
    else:
        tab = -c0 * np.sin(2 * ang)
    return tuple(float(v) for v in np.round(tab, 12))


_MODES = {"zero": kernels.MODE_ZERO, "surrogate": kernels.MODE_SURROGATE, "linear": kernels.MODE_LINEAR}


@dataclass(frozen=True)
class DynamicsConfig:
    """Coefficients of the surrogate force model plus integration settings.

    Noise variances are per state in the order (x0, y0, psi, u, vm, r).
    ``sigma_sys`` is SI and is a per-second variance (each sub-step receives
    ``sigma_sys * dt_sim``); ``sigma_obs`` takes the angular entries in
    degrees and (degrees/s), as an instrument datasheet would.
    Wind coefficient tables are sampled every 10 deg of relative wind angle
    (direction the apparent wind comes from, 0 = from ahead) on [0, 360].
    """
    # rigid body and added mass
    mass: float = 230.0
    inertia_z: float = 130.0
    added_mass_x: float = 12.0
    added_mass_y: float = 140.0
    added_inertia_z: float = 65.0
    length: float = 3.0
    # propeller jet and VecTwin-style rudders
    water_density: float = 1000.0
    prop_diameter: float = 0.1
    prop_kt: float = 0.3
    thrust_deduction: float = 0.1
    jet_deflection_gain: float = 1.2
    rudder_interaction: float = 0.2
    rudder_y: float = 0.1
    rudder_x: float = -1.5
    rudder_lift: float = 5.0
    rudder_drag: float = 5.0
    # bow thruster
    thruster_gain: float = 1.0 / 900.0
    thruster_x: float = 1.2
    thruster_fade_speed: float = 0.3
    # hull damping
    X_u: float = 2.0
    X_uu: float = 10.0
    Y_v: float = 10.0
    Y_vv: float = 300.0
    N_r: float = 60.0
    N_rr: float = 250.0
    # wind
    air_density: float = 1.2
    frontal_area: float = 0.07
    lateral_area: float = 0.4
    wind_cx: tuple = field(default_factory=lambda: _default_wind_table(0.7, "x"))
    wind_cy: tuple = field(default_factory=lambda: _default_wind_table(0.9, "y"))
    wind_cn: tuple = field(default_factory=lambda: _default_wind_table(0.1, "n"))
    # integration and noise
    rudder_rate: float = 20.0
    dt_sim: float = 0.1
    sigma_sys: tuple = (0.0, 0.0, 0.0, 1.0e-8, 1.0e-8, 1.0e-6)
    sigma_obs: tuple = (0.03 ** 2, 0.03 ** 2, 0.2 ** 2, 0.02 ** 2, 0.02 ** 2, 0.2 ** 2)
    force_model: str = "surrogate"
    linear_decay: float = 0.5

    def __post_init__(self):
        if self.dt_sim <= 0 or self.rudder_rate <= 0:
            raise ValueError("dt_sim and rudder_rate must be positive")
        if len(self.sigma_sys) != 6 or len(self.sigma_obs) != 6:
            raise ValueError("noise variances need 6 entries")
        if min(self.sigma_sys) < 0 or min(self.sigma_obs) < 0:
            raise ValueError("noise variances must be non-negative")
        if self.force_model not in _MODES:
            raise ValueError(f"unknown force_model {self.force_model!r}")
        for name in ("wind_cx", "wind_cy", "wind_cn"):
            if len(getattr(self, name)) != 37:
                raise ValueError(f"{name} needs 37 entries (0..360 deg every 10 deg)")
        object.__setattr__(self, "_packed", self._pack())
        object.__setattr__(self, "_wtab", np.array([self.wind_cx, self.wind_cy, self.wind_cn], dtype=float))

    def _pack(self):
        K = kernels
        p = np.zeros(K.N_PARAMS)
        p[K.P_M] = self.mass
        p[K.P_IZ] = self.inertia_z
        p[K.P_MX] = self.added_mass_x
        p[K.P_MY] = self.added_mass_y
        p[K.P_JZ] = self.added_inertia_z
        p[K.P_L] = self.length
        p[K.P_RHO] = self.water_density
        p[K.P_DP] = self.prop_diameter
        p[K.P_KT] = self.prop_kt
        p[K.P_TP] = self.thrust_deduction
        p[K.P_KAPPA] = self.jet_deflection_gain
        p[K.P_AINT] = self.rudder_interaction
        p[K.P_YR] = self.rudder_y
        p[K.P_XR] = self.rudder_x
        p[K.P_CL] = self.rudder_lift
        p[K.P_CD] = self.rudder_drag
        p[K.P_CBT] = self.thruster_gain
        p[K.P_XBT] = self.thruster_x
        p[K.P_UBT] = self.thruster_fade_speed
        p[K.P_XU] = self.X_u
        p[K.P_XUU] = self.X_uu
        p[K.P_YV] = self.Y_v
        p[K.P_YVV] = self.Y_vv
        p[K.P_NR] = self.N_r
        p[K.P_NRR] = self.N_rr
        p[K.P_RHOA] = self.air_density
        p[K.P_AF] = self.frontal_area
        p[K.P_AL] = self.lateral_area
        p[K.P_MODE] = _MODES[self.force_model]
        p[K.P_DECAY] = self.linear_decay
        return p

    @property
    def packed(self) -> np.ndarray:
        return self._packed

    @property
    def wind_table(self) -> np.ndarray:
        return self._wtab

    @property
    def obs_std(self) -> np.ndarray:
        s = np.sqrt(np.asarray(self.sigma_obs, dtype=float))
        s[2] = math.radians(s[2])
        s[5] = math.radians(s[5])
        return s

    @property
    def sys_std_per_substep(self) -> np.ndarray:
        return np.sqrt(np.asarray(self.sigma_sys, dtype=float) * self.dt_sim)

    def replace(self, **kw) -> "DynamicsConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v)
                for f in dataclasses.fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "DynamicsConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown dynamics keys: {sorted(unknown)}")
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})


def clip_actuator(a) -> np.ndarray:
    return np.clip(np.asarray(a, dtype=float), ACT_LOW, ACT_HIGH)


def _check_bounds(a):
    a = np.asarray(a, dtype=float)
    if np.any(a < ACT_LOW - 1e-9) or np.any(a > ACT_HIGH + 1e-9):
        raise ValueError(f"actuator {tuple(a)} outside limits")


def state_derivative(x: VesselState, u: ActuatorState, w: Wind, cfg: DynamicsConfig) -> np.ndarray:
    """Time derivative of (x0, y0, psi, u, vm, r)."""
    xa = x.as_array() if isinstance(x, VesselState) else np.asarray(x, dtype=float)
    if not np.all(np.isfinite(xa)):
        raise ValueError("non-finite vessel state")
    _check_bounds(u)
    return kernels.state_derivative_py(xa, tuple(float(v) for v in u), float(w[0]), float(w[1]),
                                       cfg.packed, cfg.wind_table)


def rudder_step(delta: float, delta_cmd: float, K: float, dt: float) -> float:
    """Exact solution of d(delta)/dt = K sign(cmd - delta) over ``dt``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    step = K * dt
    return delta + min(max(delta_cmd - delta, -step), step)


def wind_step(state: Wind, spec: WindSpec, dt: float, rng: np.random.Generator) -> Wind:
    """One Euler-Maruyama step of the gust process on the wind speed."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    tau = spec.correlation_time
    sigma = spec.gust_gain * spec.mean_speed
    U = state[0] + (spec.mean_speed - state[0]) * dt / tau + sigma * math.sqrt(2.0 * dt / tau) * rng.standard_normal()
    return Wind(max(U, 0.0), spec.mean_direction % (2 * math.pi))


def wind_series(U0: float, spec: WindSpec, dt: float, n: int, rng) -> np.ndarray:
    """Speeds after each of ``n`` successive :func:`wind_step` calls."""
    tau = spec.correlation_time
    sigma = spec.gust_gain * spec.mean_speed
    z = rng.standard_normal(n)
    a = dt / tau
    g = sigma * math.sqrt(2.0 * dt / tau)
    out = np.empty(n)
    U = U0
    for i in range(n):
        U = U + (spec.mean_speed - U) * a + g * z[i]
        if U < 0.0:
            U = 0.0
        out[i] = U
    return out


def n_substeps(dt: float, dt_sim: float) -> int:
    n = int(round(dt / dt_sim))
    if n < 1 or abs(n * dt_sim - dt) > 1e-9 * max(1.0, dt):
        raise ValueError(f"dt={dt} is not a positive multiple of dt_sim={dt_sim}")
    return n


def advance(x: np.ndarray, act: np.ndarray, cmd: np.ndarray, wind_speeds: np.ndarray, wind_dir: float,
            cfg: DynamicsConfig, rng=None):
    """Array-level integration over ``len(wind_speeds)`` sub-steps.

    Returns the final state, the final actuator state and the state after
    every sub-step.
    """
    nsub = len(wind_speeds)
    std = cfg.sys_std_per_substep
    if rng is not None and np.any(std > 0):
        noise = rng.standard_normal((nsub, 6)) * std
    else:
        noise = np.zeros((nsub, 6))
    c = clip_actuator(cmd)
    x1, a1, path = kernels.integrate(np.asarray(x, dtype=float), np.asarray(act, dtype=float), c,
                                     cfg.packed, cfg.wind_table, float(cfg.rudder_rate), float(cfg.dt_sim),
                                     np.asarray(wind_speeds, dtype=float), float(wind_dir), noise)
    if not np.all(np.isfinite(x1)):
        raise FloatingPointError("vessel state became non-finite")
    return x1, a1, path


def integrate_step(x: VesselState, u_act: ActuatorState, u_cmd: ControlCommand, w: Wind,
                   cfg: DynamicsConfig, dt: float, rng=None):
    """Advance the vessel and actuators by ``dt`` under constant wind ``w``.

    Rudders follow their rate limit analytically, the thruster follows its
    command instantly and the hull is integrated with classical RK4 in
    sub-steps of ``cfg.dt_sim``. Process noise is drawn from ``rng`` when
    given.
    """
    nsub = n_substeps(dt, cfg.dt_sim)
    xa = x.as_array() if isinstance(x, VesselState) else np.asarray(x, dtype=float)
    x1, a1, _ = advance(xa, np.asarray(u_act, dtype=float), np.asarray(u_cmd, dtype=float),
                        np.full(nsub, float(w[0])), float(w[1]), cfg, rng)
    return VesselState.from_array(x1), ActuatorState(*(float(v) for v in a1))


def observe(x: VesselState, sigma_obs, rng) -> VesselState:
    """Noisy copy of ``x``.

    ``sigma_obs`` is either a :class:`DynamicsConfig` or six variances in
    state order with the angular entries in degrees.
    """
    if isinstance(sigma_obs, DynamicsConfig):
        std = sigma_obs.obs_std
    else:
        std = np.sqrt(np.asarray(sigma_obs, dtype=float))
        std[2] = math.radians(std[2])
        std[5] = math.radians(std[5])
    xa = x.as_array() if isinstance(x, VesselState) else np.asarray(x, dtype=float)
    if not np.any(std > 0):
        return VesselState.from_array(xa)
    return VesselState.from_array(xa + rng.standard_normal(6) * std)


def kinetic_energy(x, cfg: DynamicsConfig) -> float:
    xa = x.as_array() if isinstance(x, VesselState) else np.asarray(x, dtype=float)
    u, v, r = xa[3:]
    return 0.5 * ((cfg.mass + cfg.added_mass_x) * u * u + (cfg.mass + cfg.added_mass_y) * v * v
                  + (cfg.inertia_z + cfg.added_inertia_z) * r * r)
