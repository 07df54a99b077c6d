"""Run configuration: dataclasses with strict YAML loading.

A config file is a YAML mapping with optional sections ``env``, ``agent``,
``scenario`` and ``encoder``. Unknown keys are rejected with
:class:`ConfigError` so that typos never silently fall back to defaults.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml


class ConfigError(ValueError):
    pass


@dataclass
class EnvConfig:
    kind: str = "planar"
    dt: float = 0.05
    substeps: int = 4
    noise_std: float = 0.0
    horizon: int | None = None
    threshold1: float = 0.05
    threshold2: float = 0.05
    kappa: float | None = None
    orientation_weight: float = 0.5
    workspace1: list | None = None
    workspace2: list | None = None
    home1: list | None = None
    home2: list | None = None
    # actuation
    joint_angle_limit: float = float(np.pi)
    joint_rate_limit: float = 1.0
    torque_limit: float = 150.0
    kp: float = 20.0
    kd: float = 1.0
    keep_out_radius: float | None = None
    # structure
    base_mass: float | None = None
    link_masses: list | None = None
    link_lengths: list | None = None

    def __post_init__(self):
        if self.kind not in ("planar", "full"):
            raise ConfigError(f"env.kind must be 'planar' or 'full', got {self.kind!r}")
        defaults = PLANAR_DEFAULTS if self.kind == "planar" else FULL_DEFAULTS
        for k, v in defaults.items():
            if getattr(self, k) is None:
                setattr(self, k, v)
        if self.dt <= 0 or self.substeps < 1 or self.horizon < 1:
            raise ConfigError("dt, substeps and horizon must be positive")
        if min(self.threshold1, self.threshold2) <= 0 or self.kappa < 0:
            raise ConfigError("thresholds must be positive and kappa non-negative")
        for name in ("workspace1", "workspace2"):
            box = np.asarray(getattr(self, name), float)
            if box.shape != (3, 2) or np.any(box[:, 1] < box[:, 0]):
                raise ConfigError(f"env.{name} must be [[xmin,xmax],[ymin,ymax],[zmin,zmax]]")


PLANAR_DEFAULTS = {
    "horizon": 60,
    # calibrated so the fixed 0.5 penalty trades off against reaching instead of freezing the arms
    "kappa": 0.05,
    "workspace1": [[0.9, 1.4], [-0.2, 0.5], [0.0, 0.0]],
    "workspace2": [[0.9, 1.4], [-0.5, 0.2], [0.0, 0.0]],
    "home1": [0.9, -1.8],
    "home2": [-0.9, 1.8],
    "keep_out_radius": 0.45,
    "base_mass": 50.0,
    "link_masses": [2.0, 2.0],
    "link_lengths": [0.6, 0.6],
}

FULL_DEFAULTS = {
    "horizon": 100,
    "kappa": 1.0,
    "workspace1": [[0.53, 1.33], [-0.16, 0.64], [0.09, 0.89]],
    "workspace2": [[0.53, 1.33], [-0.86, -0.06], [0.09, 0.89]],
    "home1": [0.0, -1.5707963267948966, 1.5707963267948966, -1.5707963267948966, -1.5707963267948966, 0.0],
    "home2": [0.0, -1.5707963267948966, 1.5707963267948966, -1.5707963267948966, -1.5707963267948966, 0.0],
    "keep_out_radius": 0.55,
    "base_mass": 400.0,
    "link_masses": [3.7, 8.4, 2.3, 1.2, 1.2, 0.25],
    "link_lengths": None,
}


@dataclass
class AgentConfig:
    gamma_r: float = 0.98
    gamma_c: float = 0.98
    cost_limit: float = 0.0
    mode: str = "penalty"
    lambda_p: float = 0.5
    lambda_init: float = 0.0
    lambda_lr: float = 0.01
    noise_std: float = 0.2
    random_eps: float = 0.2
    batch_size: int = 256
    updates_per_episode: int = 40
    polyak: float = 0.995
    buffer_size: int = 200_000
    hidden: int = 256
    layers: int = 4
    lr_critic: float = 1e-3
    lr_actor: float = 1e-4
    her: bool = True
    goal_delta: bool = True
    action_l2: float = 1.0
    clip_return: bool = True
    norm_clip: float = 5.0
    episodes: int = 200
    eval_episodes: int = 20
    eval_every: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.mode not in ("penalty", "lagrangian"):
            raise ConfigError(f"agent.mode must be 'penalty' or 'lagrangian', got {self.mode!r}")
        if not (0 <= self.gamma_r < 1 and 0 <= self.gamma_c < 1):
            raise ConfigError("discount factors must lie in [0, 1)")
        if self.lambda_p < 0 or self.lambda_init < 0 or self.lambda_lr <= 0:
            raise ConfigError("lambda_p, lambda_init must be >= 0 and lambda_lr > 0")
        if not 0 <= self.polyak <= 1:
            raise ConfigError("polyak must lie in [0, 1]")
        if self.layers < 2 or self.hidden < 1 or self.batch_size < 1:
            raise ConfigError("network and batch sizes must be positive")


# Desk-scale training preset for the planar env: a narrower network, faster
# target tracking and a larger actor step than the full-size defaults.
DESK_AGENT = {
    "hidden": 64,
    "batch_size": 128,
    "updates_per_episode": 20,
    "polyak": 0.95,
    "lr_actor": 1e-3,
    "episodes": 600,
    "eval_episodes": 20,
}


def desk_agent_config(**overrides) -> AgentConfig:
    return from_dict(AgentConfig, {**DESK_AGENT, **overrides})


@dataclass
class ScenarioConfig:
    omega: float = 0.5
    radius: float = 0.15
    # spin axis and a point on it; None picks a default matching the env kind
    axis: list | None = None
    center: list | None = None
    # per-target phase (rad) and position along the axis (m)
    phases: list = field(default_factory=lambda: [float(np.pi / 2), float(-np.pi / 2)])
    offsets: list | None = None
    shape: str = "box"
    shape_dims: list = field(default_factory=lambda: [1.0, 0.6, 0.35])
    meas_noise: float = 0.005
    cloud_noise: float = 0.002
    n_points: int = 128
    frame_interval: int = 10
    steps: int = 240
    joint_rate_limit: float | None = None
    estimator: str = "kabsch"
    encoder_checkpoint: str | None = None
    burn_in: int = 20
    fit_window: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.omega < 0:
            raise ConfigError("scenario.omega must be >= 0")
        if self.radius <= 0:
            raise ConfigError("scenario.radius must be > 0")
        if self.frame_interval < 1 or self.steps < 1:
            raise ConfigError("frame_interval and steps must be >= 1")
        if self.estimator not in ("kabsch", "encoder"):
            raise ConfigError("scenario.estimator must be 'kabsch' or 'encoder'")
        if len(self.phases) != 2 or (self.offsets is not None and len(self.offsets) != 2):
            raise ConfigError("scenario.phases and scenario.offsets need one entry per arm")
        if self.joint_rate_limit is not None and self.joint_rate_limit <= 0:
            raise ConfigError("scenario.joint_rate_limit must be > 0")


SCENARIO_DEFAULTS = {
    # planar arms reach the z = 0 plane, so the object spins about z there
    "planar": {"axis": [0.0, 0.0, 1.0], "center": [1.15, 0.0, 0.0], "offsets": [0.0, 0.0]},
    # full arms: a long object spinning about y, one target circle per arm
    "full": {"axis": [0.0, 1.0, 0.0], "center": [0.93, 0.0, 0.49], "offsets": [0.24, -0.46]},
}


def scenario_geometry(sc: ScenarioConfig, kind: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(axis, center, offsets)`` with env-kind defaults filled in."""
    d = SCENARIO_DEFAULTS[kind]
    axis = np.asarray(sc.axis if sc.axis is not None else d["axis"], float)
    center = np.asarray(sc.center if sc.center is not None else d["center"], float)
    offsets = np.asarray(sc.offsets if sc.offsets is not None else d["offsets"], float)
    if axis.shape != (3,) or np.linalg.norm(axis) == 0 or center.shape != (3,):
        raise ConfigError("scenario axis/center must be 3-vectors with a non-zero axis")
    return axis / np.linalg.norm(axis), center, offsets


@dataclass
class EncoderConfig:
    shape: str = "box"
    shape_dims: list = field(default_factory=lambda: [1.0, 0.6, 0.35])
    n_points: int = 128
    noise: float = 0.01
    max_angle: float = 1.3
    point_layers: list = field(default_factory=lambda: [64, 128, 256])
    head_layers: list = field(default_factory=lambda: [256, 128])
    batch_size: int = 32
    iterations: int = 4000
    lr: float = 3e-3
    seed: int = 0


SECTIONS = {"env": EnvConfig, "agent": AgentConfig, "scenario": ScenarioConfig, "encoder": EncoderConfig}


def from_dict(cls, data: dict[str, Any] | None):
    data = dict(data or {})
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} key(s): {', '.join(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> dict[str, Any]:
    """Parse a YAML run config into ``{section: dataclass}``."""
    try:
        raw = yaml.safe_load(Path(path).read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    unknown = sorted(set(raw) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(unknown)}")
    return {name: from_dict(cls, raw.get(name)) for name, cls in SECTIONS.items()}


def dump_config(sections: dict[str, Any], path: str | Path) -> None:
    out = {k: dataclasses.asdict(v) for k, v in sections.items()}
    Path(path).write_text(yaml.safe_dump(out, sort_keys=False))
