"""Constrained hindsight planning for a free-floating dual-arm manipulator,
with point-cloud spin estimation and Kalman prediction of moving targets."""

from .agent import CherAgent, CherNetworks, ReplayBuffer, Transition, her_relabel, train
from .config import AgentConfig, ConfigError, EncoderConfig, EnvConfig, ScenarioConfig, load_config
from .dynamics import KinematicChain, Simulator, SystemState, planar_dual_arm, ur5_dual_arm
from .env import ReachEnv

__version__ = "0.1.0"

__all__ = [
    "AgentConfig", "CherAgent", "CherNetworks", "ConfigError", "EncoderConfig", "EnvConfig", "KinematicChain",
    "ReachEnv", "ReplayBuffer", "ScenarioConfig", "Simulator", "SystemState", "Transition", "her_relabel",
    "load_config", "planar_dual_arm", "train", "ur5_dual_arm",
]
