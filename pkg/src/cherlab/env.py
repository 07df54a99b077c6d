"""Goal-conditioned constrained MDP around the manipulator simulator.

Observations are flat arrays ``[theta1, dtheta1, theta2, dtheta2, p_e1, p_e2]``;
the goal pair travels separately as a ``(2, 3)`` array so that hindsight
relabeling can swap it without touching the simulator.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .config import EnvConfig
from .dynamics import (ActuationLimits, SystemState, Simulator, make_state, planar_dual_arm, ur5_dual_arm)
from .so3 import quat_angle


def build_simulator(cfg: EnvConfig, base_mass_scale: float = 1.0) -> Simulator:
    if cfg.kind == "planar":
        chain = planar_dual_arm(link_lengths=tuple(cfg.link_lengths), link_masses=tuple(cfg.link_masses),
                                base_mass=cfg.base_mass * base_mass_scale)
    else:
        chain = ur5_dual_arm(base_mass=cfg.base_mass * base_mass_scale, masses=list(cfg.link_masses))
    limits = ActuationLimits(joint_angle=cfg.joint_angle_limit, joint_rate=cfg.joint_rate_limit,
                             torque=cfg.torque_limit, kp=cfg.kp, kd=cfg.kd, keep_out_radius=cfg.keep_out_radius)
    return Simulator(chain, limits, substeps=cfg.substeps, noise_std=cfg.noise_std)


def observation(state: SystemState) -> np.ndarray:
    return np.concatenate([state.theta1, state.theta_dot1, state.theta2, state.theta_dot2, state.p_e1, state.p_e2])


def split_observation(obs: np.ndarray, dof: int) -> dict[str, np.ndarray]:
    """Named views of an observation (or a batch of them along the last axis)."""
    obs = np.asarray(obs)
    i = 0
    out = {}
    for name, width in (("theta1", dof), ("theta_dot1", dof), ("theta2", dof), ("theta_dot2", dof),
                        ("p_e1", 3), ("p_e2", 3)):
        out[name] = obs[..., i:i + width]
        i += width
    return out


def achieved_goals(obs: np.ndarray) -> np.ndarray:
    """End-effector positions of an observation batch as ``(..., 2, 3)``."""
    obs = np.asarray(obs)
    return obs[..., -6:].reshape(obs.shape[:-1] + (2, 3))


def goal_errors(obs: np.ndarray, goals: np.ndarray) -> np.ndarray:
    """``(..., 2)`` distances between end-effectors and goals."""
    return np.linalg.norm(achieved_goals(obs) - np.asarray(goals), axis=-1)


def reward(obs: np.ndarray, goals: np.ndarray, thresholds=(0.05, 0.05)) -> np.ndarray:
    """Sparse reward: 0 when both end-effectors are within threshold, else -1.

    Depends only on the end-effector entries of ``obs`` and on ``goals``, so
    it can be recomputed for substituted goals. Broadcasts over batches.
    """
    e = goal_errors(obs, goals)
    ok = (e[..., 0] <= thresholds[0]) & (e[..., 1] <= thresholds[1])
    return np.where(ok, 0.0, -1.0)


def pose_deviation(state: SystemState, initial: SystemState, orientation_weight: float = 0.5) -> float:
    trans = float(np.linalg.norm(state.base_pos - initial.base_pos))
    return trans + orientation_weight * quat_angle(state.base_quat, initial.base_quat)


def cost(state: SystemState, t: int, initial: SystemState, kappa: float = 1.0, orientation_weight: float = 0.5) -> float:
    """Base-motion cost ``kappa * |pose(t) - pose(0)| * t``."""
    if t < 0:
        raise ValueError("step index must be non-negative")
    return kappa * pose_deviation(state, initial, orientation_weight) * t


@dataclass
class StepResult:
    obs: np.ndarray
    reward: float
    cost: float
    collision: bool
    success: bool
    errors: np.ndarray
    state: SystemState


class ReachEnv:
    """Two-goal reaching task with sparse reward and base-motion cost.

    Episodes last exactly ``cfg.horizon`` steps; success is reported as a
    flag and never terminates the episode early.
    """

    def __init__(self, cfg: EnvConfig | None = None, base_mass_scale: float = 1.0):
        self.cfg = cfg or EnvConfig()
        self.sim = build_simulator(self.cfg, base_mass_scale)
        self.dof = self.sim.chain.dof
        self.thresholds = (self.cfg.threshold1, self.cfg.threshold2)
        self.workspaces = (np.asarray(self.cfg.workspace1, float), np.asarray(self.cfg.workspace2, float))
        self.home = make_state(self.sim.chain, self.cfg.home1, self.cfg.home2)
        self.rng = np.random.default_rng()
        self.state: SystemState | None = None
        self.initial: SystemState | None = None
        self.goals: np.ndarray | None = None
        self.t = 0

    @property
    def obs_dim(self) -> int:
        return 4 * self.dof + 6

    @property
    def action_dim(self) -> int:
        return 2 * self.dof

    @property
    def max_action(self) -> float:
        return self.cfg.joint_rate_limit

    @property
    def horizon(self) -> int:
        return self.cfg.horizon

    def seed(self, seed: int | None) -> None:
        self.rng = np.random.default_rng(seed)

    def sample_goals(self, rng: np.random.Generator | None = None) -> np.ndarray:
        """Uniform goals in each workspace box, rejecting points in the keep-out sphere."""
        rng = rng or self.rng
        goals = np.empty((2, 3))
        for i, box in enumerate(self.workspaces):
            while True:
                g = box[:, 0] + rng.random(3) * (box[:, 1] - box[:, 0])
                if np.linalg.norm(g - self.home.base_pos) >= self.sim.limits.keep_out_radius:
                    break
            goals[i] = g
        return goals

    def reset(self, seed: int | None = None, goals=None, start: SystemState | None = None):
        if seed is not None:
            self.seed(seed)
        self.state = (start or self.home).copy()
        self.state.t = 0.0
        self.initial = self.state.copy()
        self.goals = self.sample_goals() if goals is None else np.array(goals, dtype=float).reshape(2, 3)
        self.t = 0
        return observation(self.state), self.goals.copy()

    def reward(self, obs, goals) -> float:
        return float(reward(obs, goals, self.thresholds))

    def cost(self, state: SystemState, t: int) -> float:
        return cost(state, t, self.initial, self.cfg.kappa, self.cfg.orientation_weight)

    def step(self, action) -> StepResult:
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        if self.t >= self.cfg.horizon:
            raise RuntimeError("episode exhausted; call reset()")
        action = np.asarray(action, float)
        if action.shape != (self.action_dim,):
            raise ValueError(f"action must have shape ({self.action_dim},), got {action.shape}")
        nxt, collided = self.sim.step(self.state, action, self.cfg.dt, self.rng)
        c = self.cost(nxt, self.t)
        self.state = nxt
        self.t += 1
        obs = observation(nxt)
        r = self.reward(obs, self.goals)
        return StepResult(obs, r, c, collided, r == 0.0, goal_errors(obs, self.goals), nxt)

    def random_start(self, rng: np.random.Generator | None = None, spread: float = 0.5) -> SystemState:
        """Home configuration perturbed uniformly by up to ``spread`` rad per joint, collision free."""
        rng = rng or self.rng
        while True:
            th1 = np.asarray(self.cfg.home1) + rng.uniform(-spread, spread, self.dof)
            th2 = np.asarray(self.cfg.home2) + rng.uniform(-spread, spread, self.dof)
            s = make_state(self.sim.chain, th1, th2)
            if not self.sim.collides(s):
                return s


EPISODE_COLUMNS = ["t", "r_t", "c_t", "e1", "e2"]


def write_episode_trace(results: list[StepResult], path, dt: float) -> None:
    """Per-step CSV ``t, r_t, c_t, e1, e2`` of one episode."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EPISODE_COLUMNS)
        for k, r in enumerate(results):
            w.writerow([(k + 1) * dt, r.reward, r.cost, float(r.errors[0]), float(r.errors[1])])
