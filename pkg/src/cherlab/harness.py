"""End-to-end scenarios: tracking a spinning object, convergence-time bound,
policy evaluation and base-mass sweeps."""

from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ekf
from .agent import CherAgent
from .config import ConfigError, EnvConfig, ScenarioConfig, scenario_geometry
from .env import ReachEnv
from .pose import (EncoderNet, PointCloud, RotationEstimate, angular_rate, axis_angle_from_rotation, kabsch_estimate,
                   sample_surface)
from .so3 import rodrigues

log = logging.getLogger(__name__)


@dataclass
class EpisodeMetrics:
    e1: np.ndarray
    e2: np.ndarray
    success: bool
    cost_value: float
    convergence_step: int | None = None
    t_b: tuple[float, float] = (float("inf"), float("inf"))
    divergent: bool = False
    epsilon: float = 0.0
    theorem1: list = field(default_factory=list)

    @property
    def total_error(self) -> np.ndarray:
        return self.e1 + self.e2

    @property
    def converged(self) -> bool:
        return self.convergence_step is not None


def divergence_slope(err: np.ndarray) -> float:
    """Least-squares slope (per step) of ``err`` over its final third."""
    err = np.asarray(err, float)
    tail = err[len(err) - max(len(err) // 3, 2):]
    if len(tail) < 2:
        return 0.0
    return float(np.polyfit(np.arange(len(tail)), tail, 1)[0])


def convergence_step(err: np.ndarray, level: float) -> int | None:
    """First step after which ``err`` stays at or below ``level`` until the end."""
    above = np.nonzero(np.asarray(err) > level)[0]
    if len(above) == 0:
        return 0
    k = int(above[-1]) + 1
    return k if k < len(err) else None


def theorem1_bound(t: np.ndarray, ee_speed: np.ndarray, target_speed: np.ndarray, d_e: float,
                   t0: float | None = None) -> float:
    """Smallest ``T_B`` with ``d_e <= integral_{t0}^{T_B} (ee_speed - target_speed)``.

    Profiles are sampled on the grid ``t``; the integral is the trapezoid rule
    with linear interpolation inside the crossing interval. Returns ``inf``
    when the integral never reaches ``d_e`` on the grid.
    """
    if d_e < 0:
        raise ValueError("initial gap must be non-negative")
    t = np.asarray(t, float)
    g = np.asarray(ee_speed, float) - np.asarray(target_speed, float)
    if t.shape != g.shape or t.ndim != 1 or len(t) < 1:
        raise ValueError("speed profiles must be 1-D and match the time grid")
    if t0 is not None:
        keep = t >= t0
        t, g = t[keep], g[keep]
        if len(t) == 0:
            return float("inf")
    if d_e == 0:
        return float(t[0])
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (g[1:] + g[:-1]) * np.diff(t))])
    hit = np.nonzero(cum >= d_e)[0]
    if len(hit) == 0:
        return float("inf")
    k = int(hit[0])
    # inside [t_{k-1}, t_k] the integrand is linear, so the integral is quadratic
    t_a, g_a, g_b = t[k - 1], g[k - 1], g[k]
    h = t[k] - t_a
    need = d_e - cum[k - 1]
    slope = (g_b - g_a) / h
    if abs(slope) < 1e-15:
        return float(t_a + need / g_a)
    disc = max(g_a * g_a + 2.0 * slope * need, 0.0)
    return float(t_a + (-g_a + np.sqrt(disc)) / slope)


# ---------------------------------------------------------------------------
# tracking scenario


@dataclass
class TrackingResult:
    metrics: EpisodeMetrics
    trace: list[dict]
    trackers: list
    estimates: list[RotationEstimate]

    def write_trace(self, path) -> None:
        if not self.trace:
            return
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(self.trace[0]))
            w.writeheader()
            w.writerows(self.trace)


class SpinningObject:
    """Rigid body spinning at ``omega`` about a fixed axis, carrying two target points."""

    def __init__(self, axis, center, omega: float, radius: float, phases, offsets, cloud_points):
        self.axis, self.center, self.omega = np.asarray(axis, float), np.asarray(center, float), float(omega)
        u, v, n = ekf.plane_basis(self.axis)
        self.targets0 = np.array([self.center + off * n + radius * (np.cos(ph) * u + np.sin(ph) * v)
                                  for ph, off in zip(phases, offsets)])
        self.cloud0 = np.asarray(cloud_points, float)

    def rotation(self, t: float) -> np.ndarray:
        return rodrigues(self.axis, self.omega * t)

    def targets(self, t: float) -> np.ndarray:
        R = self.rotation(t)
        return self.center + (self.targets0 - self.center) @ R.T

    def cloud(self, t: float) -> np.ndarray:
        return self.center + (self.cloud0 - self.center) @ self.rotation(t).T


def run_tracking_scenario(agent: CherAgent, env_cfg: EnvConfig, sc: ScenarioConfig,
                          encoder: EncoderNet | None = None) -> TrackingResult:
    """Track two target points on a spinning object with a reach policy.

    Each control step: measure both targets (true position + noise), refresh
    the spin estimate every ``frame_interval`` steps from two point-cloud
    frames, run the per-target filters and feed their one-step-ahead
    predictions to the policy as goals.
    """
    if sc.estimator == "encoder" and encoder is None:
        raise ConfigError("encoder estimator selected but no encoder supplied")
    rng = np.random.default_rng(sc.seed)
    overrides = {"horizon": sc.steps}
    if sc.joint_rate_limit is not None:
        overrides["joint_rate_limit"] = sc.joint_rate_limit
    cfg = dataclasses.replace(env_cfg, **overrides)
    env = ReachEnv(cfg)
    env.seed(sc.seed)
    dt = cfg.dt
    axis, center, offsets = scenario_geometry(sc, cfg.kind)
    shape_cloud = sample_surface(sc.shape, sc.n_points, 0.0, seed=sc.seed, dims=sc.shape_dims)
    obj = SpinningObject(axis, center, sc.omega, sc.radius, sc.phases, offsets, shape_cloud.points * 0.3 + center)
    interval = sc.frame_interval * dt

    meas_hist: list[list[np.ndarray]] = [[], []]
    estimates: list[RotationEstimate] = []
    trackers: list[ekf.TargetTracker | None] = [None, None]
    rate, est_axis = 0.0, None

    def measure(t):
        return obj.targets(t) + rng.normal(0.0, sc.meas_noise, (2, 3))

    def frame_for(i):
        pts = np.array(meas_hist[i][-sc.fit_window:])
        try:
            return ekf.build_plane_frame(est_axis, pts)
        except ekf.FitError:
            u, v, n = ekf.plane_basis(est_axis)
            m = pts.mean(axis=0)
            c = m - (m @ n) * n
            return ekf.PlaneFrame(n, c, u, v, float(m @ n), float("nan"))

    z = measure(0.0)
    for i in range(2):
        meas_hist[i].append(z[i])
    goals = z.copy()
    obs, _ = env.reset(goals=goals)
    prev_cloud = obj.cloud(0.0) + rng.normal(0.0, sc.cloud_noise, obj.cloud0.shape)
    rows, e_hist, pred_errs, cost_hist = [], [], [], []
    ee_prev = obs[-6:].reshape(2, 3).copy()
    ee_speed, tgt_speed = [], []
    tracker_start = None
    for k in range(sc.steps):
        t_next = (k + 1) * dt
        a = agent.act(obs, goals, explore=False)
        res = env.step(a)
        obs = res.obs
        true_next = obj.targets(t_next)
        ee = obs[-6:].reshape(2, 3)
        e = np.linalg.norm(ee - true_next, axis=1)
        pred_err = np.linalg.norm(goals - true_next, axis=1)
        e_hist.append(e)
        pred_errs.append(pred_err)
        cost_hist.append(res.cost)
        ee_speed.append(np.linalg.norm(ee - ee_prev, axis=1) / dt)
        tgt_speed.append(np.full(2, sc.omega * sc.radius))
        ee_prev = ee.copy()

        # perception at t_next
        z = measure(t_next)
        for i in range(2):
            meas_hist[i].append(z[i])
        if (k + 1) % sc.frame_interval == 0:
            cloud = obj.cloud(t_next) + rng.normal(0.0, sc.cloud_noise, obj.cloud0.shape)
            if sc.estimator == "kabsch":
                R = kabsch_estimate(prev_cloud, cloud)
            else:
                scale = np.max(np.linalg.norm(obj.cloud0 - center, axis=1))
                ca = PointCloud((prev_cloud - center) / scale, shape_cloud.rotated(obj.rotation(t_next - interval)).normals)
                cb = PointCloud((cloud - center) / scale, shape_cloud.rotated(obj.rotation(t_next)).normals)
                R, _ = encoder.estimate(ca, cb)
            prev_cloud = cloud
            estimates.append(axis_angle_from_rotation(R, interval))
            try:
                rate, est_axis = angular_rate(estimates[-20:], interval)
            except ValueError:
                rate, est_axis = 0.0, None
            if est_axis is not None:
                for i in range(2):
                    frame = frame_for(i)
                    if trackers[i] is None:
                        trackers[i] = ekf.TargetTracker(frame, rate, dt, meas_std=sc.meas_noise)
                        # seed the filter with the previous measurement for the initial heading
                        trackers[i].update(meas_hist[i][-2])
                        tracker_start = k + 1 if tracker_start is None else tracker_start
                    else:
                        trackers[i].set_model(frame, rate)
        if all(tr is not None for tr in trackers):
            goals = np.array([trackers[i].update(z[i]) for i in range(2)])
        else:
            # no spin estimate yet (or static object): aim at the running mean of measurements
            goals = np.array([np.mean(meas_hist[i][-sc.frame_interval:], axis=0) for i in range(2)])
        rows.append({"step": k + 1, "t": t_next, "e1": e[0], "e2": e[1], "goal_err1": pred_err[0],
                     "goal_err2": pred_err[1], "rate_est": rate, "cost": res.cost,
                     "ee1_x": ee[0, 0], "ee1_y": ee[0, 1], "ee1_z": ee[0, 2],
                     "ee2_x": ee[1, 0], "ee2_y": ee[1, 1], "ee2_z": ee[1, 2]})

    e_hist = np.array(e_hist)
    pred_errs = np.array(pred_errs)
    start = tracker_start if tracker_start is not None else 0
    burn = pred_errs[start:start + sc.burn_in].ravel()
    eps = float(np.percentile(burn, 95)) if len(burn) else 0.0
    u_e = max(env.thresholds)
    total = e_hist.sum(axis=1)
    conv = convergence_step(total, 2.0 * (u_e + eps))
    t_grid = dt * np.arange(1, sc.steps + 1)
    ee_speed, tgt_speed = np.array(ee_speed), np.array(tgt_speed)
    checks, t_bs = [], []
    for i in range(2):
        chk = theorem1_check(t_grid, ee_speed[:, i], tgt_speed[:, i], e_hist[:, i], u_e, eps)
        checks.append(chk)
        t_bs.append(chk["t_b"])
    final = e_hist[-1]
    metrics = EpisodeMetrics(e_hist[:, 0], e_hist[:, 1], bool(final[0] <= env.thresholds[0] and final[1] <= env.thresholds[1]),
                             float(np.sum(agent.cfg.gamma_c ** np.arange(len(cost_hist)) * np.array(cost_hist))),
                             conv, tuple(t_bs), divergence_slope(total) > 0, eps, checks)
    return TrackingResult(metrics, rows, trackers, estimates)


def theorem1_check(t, ee_speed, target_speed, err, u_e: float, eps: float) -> dict:
    """Bound from the first instant the end-effector outruns the target.

    ``premise`` records whether the speed premise held on the whole interval
    up to ``T_B``; ``consistent`` is the error-at-``T_B`` check, vacuous when
    ``T_B`` is infinite or the premise fails.
    """
    ok = np.nonzero(ee_speed >= target_speed)[0]
    out = {"t0": float("nan"), "d_e": float("nan"), "t_b": float("inf"), "premise": False,
           "err_at_tb": float("nan"), "consistent": True}
    if len(ok) == 0:
        return out
    k0 = int(ok[0])
    t0, d_e = float(t[k0]), float(err[k0])
    t_b = theorem1_bound(t, ee_speed, target_speed, d_e, t0=t0)
    out.update(t0=t0, d_e=d_e, t_b=t_b)
    if np.isfinite(t_b):
        span = (t >= t0) & (t <= t_b + 1e-12)
        kb = min(int(np.searchsorted(t, t_b)), len(t) - 1)
        span[kb] = True
        premise = bool(np.all(ee_speed[span] >= target_speed[span]))
        e_tb = float(np.interp(t_b, t, err))
        out.update(premise=premise, err_at_tb=e_tb, consistent=(not premise) or e_tb <= u_e + eps)
    return out


# ---------------------------------------------------------------------------
# policy evaluation


def evaluate_policy(agent: CherAgent, env_cfg: EnvConfig, n_episodes: int, seed: int = 10_000,
                    random_start: bool = False, base_mass_scale: float = 1.0) -> dict[str, float]:
    """Mean and std of final errors, cost value and success over seeded episodes."""
    if n_episodes <= 0:
        raise ValueError("n_episodes must be positive; nothing to report")
    env = ReachEnv(env_cfg, base_mass_scale=base_mass_scale)
    rows = [agent.evaluate_episode(env, seed=seed + i, random_start=random_start) for i in range(n_episodes)]
    out = {"episodes": n_episodes, "base_mass_scale": base_mass_scale}
    for key in ("e1", "e2", "cost_value", "success"):
        vals = np.array([r[key] for r in rows])
        out[key] = float(vals.mean())
        out[key + "_std"] = float(vals.std())
    out["success_rate"] = out.pop("success")
    out.pop("success_std")
    return out


def mass_sweep(agent: CherAgent, env_cfg: EnvConfig, n_episodes: int, scales=(0.5, 0.75, 1.0, 1.25, 1.5),
               seed: int = 10_000) -> list[dict[str, float]]:
    return [evaluate_policy(agent, env_cfg, n_episodes, seed=seed, base_mass_scale=s) for s in scales]


def load_agent(path) -> tuple[CherAgent, EnvConfig]:
    """Agent and the env config stored alongside it in a checkpoint."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    agent = CherAgent.load(path)
    env_cfg = EnvConfig(**agent.meta["env_config"]) if "env_config" in agent.meta else EnvConfig()
    return agent, env_cfg
