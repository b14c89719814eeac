"""Reinforcement-learning trajectory tracking for berthing with obstacle-aware rewards."""
from .geometry import ObstacleSet, Pose, ShipGeometry, VesselState, Velocity
from .dynamics import ActuatorState, ControlCommand, DynamicsConfig, Wind, WindSpec
from .scenario import DesiredTrajectory
from .env import EpisodeConfig, RewardConfig, StepOutcome, Termination, TrackingEnv

__version__ = "0.1.0"
