"""Constrained hindsight experience replay (CHER).

A deterministic goal-conditioned policy is trained against two critics: a
reward critic on the sparse reaching reward and a cost critic on the
base-motion cost. The policy loss is

    mean(-Q_r(s, pi(s, g), g) + lam * (Q_c(s, pi(s, g), g) - C_s))

with ``lam`` either a fixed penalty coefficient or a Lagrange multiplier
updated by projected dual ascent. Every finished episode is stored twice:
once with its sampled goals and once relabeled with the final end-effector
positions as goals.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import env as envlib
from .config import AgentConfig, EnvConfig
from .nn import (AdamState, DenseNet, adam_step, backward, forward, load_checkpoint, polyak_update, read_manifest,
                 save_checkpoint)

log = logging.getLogger(__name__)


class DivergenceError(FloatingPointError):
    pass


@dataclass
class Transition:
    obs: np.ndarray
    action: np.ndarray
    goals: np.ndarray
    reward: float
    cost: float
    next_obs: np.ndarray
    final: bool = False


def her_relabel(episode: list[Transition], thresholds=(0.05, 0.05)) -> list[Transition]:
    """Copy of ``episode`` with goals set to the final end-effector positions.

    Rewards are recomputed for the new goals; observations, actions and costs
    are carried over unchanged.
    """
    if not episode:
        raise ValueError("cannot relabel an empty episode")
    new_goals = envlib.achieved_goals(episode[-1].next_obs)
    return [
        replace(tr, goals=new_goals.copy(), reward=float(envlib.reward(tr.next_obs, new_goals, thresholds)))
        for tr in episode
    ]


class ReplayBuffer:
    """Fixed-capacity ring buffer of transitions with seeded uniform sampling."""

    def __init__(self, capacity: int, obs_dim: int, action_dim: int):
        self.capacity = int(capacity)
        self.obs = np.zeros((capacity, obs_dim), np.float32)
        self.next_obs = np.zeros((capacity, obs_dim), np.float32)
        self.actions = np.zeros((capacity, action_dim), np.float32)
        self.goals = np.zeros((capacity, 6), np.float32)
        self.rewards = np.zeros(capacity, np.float32)
        self.costs = np.zeros(capacity, np.float32)
        self.final = np.zeros(capacity, bool)
        self.ptr = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, tr: Transition) -> None:
        i = self.ptr
        self.obs[i] = tr.obs
        self.next_obs[i] = tr.next_obs
        self.actions[i] = tr.action
        self.goals[i] = np.asarray(tr.goals).ravel()
        self.rewards[i] = tr.reward
        self.costs[i] = tr.cost
        self.final[i] = tr.final
        self.ptr = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def extend(self, transitions) -> None:
        for tr in transitions:
            self.add(tr)

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, self.size, size=batch_size)
        return {"obs": self.obs[idx], "action": self.actions[idx], "goals": self.goals[idx],
                "reward": self.rewards[idx], "cost": self.costs[idx], "next_obs": self.next_obs[idx]}


class Normalizer:
    """Running mean/std with clipping; statistics accumulate in float64."""

    def __init__(self, size: int, clip: float = 5.0, eps: float = 1e-2):
        self.size, self.clip, self.eps = size, clip, eps
        self.sum = np.zeros(size)
        self.sumsq = np.zeros(size)
        self.count = 0
        self.mean = np.zeros(size, np.float32)
        self.std = np.ones(size, np.float32)

    def update(self, x: np.ndarray) -> None:
        x = np.asarray(x, np.float64).reshape(-1, self.size)
        self.sum += x.sum(axis=0)
        self.sumsq += np.square(x).sum(axis=0)
        self.count += x.shape[0]
        mean = self.sum / self.count
        var = np.maximum(self.eps**2, self.sumsq / self.count - mean**2)
        self.mean = mean.astype(np.float32)
        self.std = np.sqrt(var).astype(np.float32)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.clip((np.asarray(x, np.float32) - self.mean) / self.std, -self.clip, self.clip)


class CherNetworks:
    """Policy, reward critic, cost critic, their targets, input normalizers and the multiplier."""

    NAMES = ("policy", "q_reward", "q_cost", "policy_target", "q_reward_target", "q_cost_target")

    def __init__(self, obs_dim: int, action_dim: int, hidden: int = 256, layers: int = 4, seed: int = 0,
                 clip: float = 5.0, dtype=np.float32, goal_delta: bool = True):
        self.obs_dim, self.action_dim = obs_dim, action_dim
        self.goal_delta = goal_delta
        x_dim = obs_dim + (12 if goal_delta else 6)
        mid = [hidden] * (layers - 1)
        self.policy = DenseNet([x_dim, *mid, action_dim], "relu", "tanh", dtype=dtype, seed=seed)
        self.q_reward = DenseNet([x_dim + action_dim, *mid, 1], "relu", "identity", dtype=dtype, seed=seed + 1)
        self.q_cost = DenseNet([x_dim + action_dim, *mid, 1], "relu", "identity", dtype=dtype, seed=seed + 2)
        self.policy_target = self.policy.copy()
        self.q_reward_target = self.q_reward.copy()
        self.q_cost_target = self.q_cost.copy()
        self.obs_norm = Normalizer(obs_dim, clip)
        self.goal_norm = Normalizer(6, clip)
        self.delta_norm = Normalizer(6, clip)
        self.lam = 0.0

    def inputs(self, obs, goals) -> np.ndarray:
        """Network input: normalized observation, goals and (optionally) goal minus achieved position."""
        goals = np.asarray(goals).reshape(np.shape(obs)[:-1] + (6,))
        parts = [self.obs_norm(obs), self.goal_norm(goals)]
        if self.goal_delta:
            parts.append(self.delta_norm(goals - np.asarray(obs)[..., -6:]))
        return np.concatenate(parts, axis=-1)

    def nets(self) -> dict[str, DenseNet]:
        return {n: getattr(self, n) for n in self.NAMES}

    def save(self, path, meta: dict | None = None) -> None:
        extra = {
            "lambda_l": np.array([self.lam], np.float32),
            "obs_norm/mean": self.obs_norm.mean, "obs_norm/std": self.obs_norm.std,
            "goal_norm/mean": self.goal_norm.mean, "goal_norm/std": self.goal_norm.std,
            "delta_norm/mean": self.delta_norm.mean, "delta_norm/std": self.delta_norm.std,
        }
        save_checkpoint(self.nets(), path, extra=extra,
                        meta={"obs_dim": self.obs_dim, "action_dim": self.action_dim, "goal_delta": self.goal_delta,
                              **(meta or {})})

    @classmethod
    def load(cls, path) -> "CherNetworks":
        nets, extra, meta = load_checkpoint(path)
        self = cls.__new__(cls)
        self.obs_dim, self.action_dim = int(meta["obs_dim"]), int(meta["action_dim"])
        self.goal_delta = bool(meta.get("goal_delta", False))
        for name in cls.NAMES:
            setattr(self, name, nets[name])
        self.obs_norm = Normalizer(self.obs_dim)
        self.goal_norm = Normalizer(6)
        self.delta_norm = Normalizer(6)
        if self.goal_delta:
            self.delta_norm.mean, self.delta_norm.std = extra["delta_norm/mean"], extra["delta_norm/std"]
        self.obs_norm.mean, self.obs_norm.std = extra["obs_norm/mean"], extra["obs_norm/std"]
        self.goal_norm.mean, self.goal_norm.std = extra["goal_norm/mean"], extra["goal_norm/std"]
        self.lam = float(extra["lambda_l"][0])
        return self


@dataclass
class EpisodeLog:
    episode: int
    mean_e1: float
    mean_e2: float
    success_rate: float
    cost_value: float
    lam: float
    loss_q_reward: float
    loss_q_cost: float
    loss_policy: float
    mean_q_cost: float = float("nan")


LOG_COLUMNS = ["episode", "mean_e1", "mean_e2", "success_rate", "cost_value", "lambda",
               "loss_q_reward", "loss_q_cost", "loss_policy", "mean_q_cost"]


def write_log(rows: list[EpisodeLog], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for r in rows:
            w.writerow([r.episode, r.mean_e1, r.mean_e2, r.success_rate, r.cost_value, r.lam,
                        r.loss_q_reward, r.loss_q_cost, r.loss_policy, r.mean_q_cost])


class CherAgent:
    def __init__(self, obs_dim: int, action_dim: int, max_action: float, cfg: AgentConfig | None = None,
                 seed: int = 0, thresholds=(0.05, 0.05)):
        self.cfg = cfg or AgentConfig()
        self.max_action = float(max_action)
        self.thresholds = thresholds
        self.seed = seed
        self.nets = CherNetworks(obs_dim, action_dim, self.cfg.hidden, self.cfg.layers, seed=seed,
                                 clip=self.cfg.norm_clip, goal_delta=self.cfg.goal_delta)
        self.nets.lam = self.cfg.lambda_init if self.cfg.mode == "lagrangian" else 0.0
        self.opt_policy = AdamState(lr=self.cfg.lr_actor)
        self.opt_q_reward = AdamState(lr=self.cfg.lr_critic)
        self.opt_q_cost = AdamState(lr=self.cfg.lr_critic)
        self.rng = np.random.default_rng(seed)
        self.buffer = ReplayBuffer(self.cfg.buffer_size, obs_dim, action_dim)
        self.meta: dict = {}
        # per-iteration multiplier trace: (lambda_before, mean(Q_c - C_s), lambda_after)
        self.multiplier_trace: list[tuple[float, float, float]] = []

    # -- acting -------------------------------------------------------------

    def act(self, obs, goals, explore: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
        """Joint-rate command. Exploration adds Gaussian noise and, with
        probability ``random_eps``, replaces the action by a uniform one."""
        u = forward(self.nets.policy, self.nets.inputs(obs, goals)).astype(np.float64)
        if explore:
            rng = rng or self.rng
            u = np.clip(u + self.cfg.noise_std * rng.standard_normal(u.shape), -1.0, 1.0)
            if rng.random() < self.cfg.random_eps:
                u = rng.uniform(-1.0, 1.0, u.shape)
        return u * self.max_action

    # -- critic -------------------------------------------------------------

    def _batch_inputs(self, batch):
        x = self.nets.inputs(batch["obs"], batch["goals"])
        x2 = self.nets.inputs(batch["next_obs"], batch["goals"])
        return x, x2

    def critic_target(self, batch) -> tuple[np.ndarray, np.ndarray]:
        """TD targets ``(y_reward, y_cost)`` from the target networks."""
        _, x2 = self._batch_inputs(batch)
        u2 = forward(self.nets.policy_target, x2)
        xa2 = np.concatenate([x2, u2], axis=-1)
        qr = forward(self.nets.q_reward_target, xa2)[:, 0].astype(np.float64)
        qc = forward(self.nets.q_cost_target, xa2)[:, 0].astype(np.float64)
        return self.reward_target(batch["reward"], qr), self.cost_target(batch["cost"], qc)

    def reward_target(self, r, q_next) -> np.ndarray:
        y = np.asarray(r, np.float64) + self.cfg.gamma_r * np.asarray(q_next, np.float64)
        if self.cfg.clip_return:
            y = np.clip(y, -1.0 / (1.0 - self.cfg.gamma_r), 0.0)
        return y

    def cost_target(self, c, q_next) -> np.ndarray:
        return np.maximum(np.asarray(c, np.float64) + self.cfg.gamma_c * np.asarray(q_next, np.float64), 0.0)

    def _critic_step(self, net, opt, xa, y) -> float:
        q, cache = forward(net, xa, return_cache=True)
        err = q[:, 0].astype(np.float64) - y
        loss = float(0.5 * np.mean(err**2))
        if not np.isfinite(loss):
            raise DivergenceError("critic loss is not finite")
        g = (err / len(y))[:, None]
        grads, _ = backward(net, xa, g, cache)
        adam_step(net.params(), grads, opt)
        return loss

    def update_critics(self, batch) -> tuple[float, float]:
        y_r, y_c = self.critic_target(batch)
        x, _ = self._batch_inputs(batch)
        xa = np.concatenate([x, np.asarray(batch["action"], np.float32)], axis=-1)
        lr = self._critic_step(self.nets.q_reward, self.opt_q_reward, xa, y_r)
        lc = self._critic_step(self.nets.q_cost, self.opt_q_cost, xa, y_c)
        return lr, lc

    # -- policy -------------------------------------------------------------

    def policy_objective(self, batch, lam: float) -> tuple[float, np.ndarray]:
        """Scalar policy loss and its gradient w.r.t. the normalized actions."""
        x, _ = self._batch_inputs(batch)
        u = forward(self.nets.policy, x)
        xa = np.concatenate([x, u], axis=-1)
        n = x.shape[0]
        qr, cr = forward(self.nets.q_reward, xa, return_cache=True)
        qc, cc = forward(self.nets.q_cost, xa, return_cache=True)
        loss = float(np.mean(-qr[:, 0].astype(np.float64) + lam * (qc[:, 0].astype(np.float64) - self.cfg.cost_limit)))
        ones = np.full((n, 1), 1.0 / n, dtype=x.dtype)
        _, gin_r = backward(self.nets.q_reward, xa, -ones, cr)
        _, gin_c = backward(self.nets.q_cost, xa, ones, cc)
        du = gin_r[:, -self.nets.action_dim:] + lam * gin_c[:, -self.nets.action_dim:]
        if self.cfg.action_l2:
            # keeps the tanh pre-activations out of saturation
            loss += float(self.cfg.action_l2 * np.mean(np.sum(np.square(u, dtype=np.float64), axis=-1)))
            du = du + (2.0 * self.cfg.action_l2 / n) * u
        return loss, du

    def policy_gradient(self, batch, lam: float) -> tuple[float, list[np.ndarray]]:
        x, _ = self._batch_inputs(batch)
        loss, du = self.policy_objective(batch, lam)
        grads, _ = backward(self.nets.policy, x, du.astype(self.nets.policy.dtype))
        return loss, grads

    def ddpg_policy_gradient(self, batch) -> list[np.ndarray]:
        """Unconstrained deterministic policy gradient of ``mean(-Q_r)``."""
        x, _ = self._batch_inputs(batch)
        u = forward(self.nets.policy, x)
        xa = np.concatenate([x, u], axis=-1)
        n = x.shape[0]
        _, cr = forward(self.nets.q_reward, xa, return_cache=True)
        _, gin = backward(self.nets.q_reward, xa, -np.full((n, 1), 1.0 / n, dtype=x.dtype), cr)
        du = gin[:, -self.nets.action_dim:]
        if self.cfg.action_l2:
            du = du + (2.0 * self.cfg.action_l2 / n) * u
        grads, _ = backward(self.nets.policy, x, du)
        return grads

    def _policy_step(self, batch, lam: float) -> float:
        loss, grads = self.policy_gradient(batch, lam)
        if not np.isfinite(loss):
            raise DivergenceError("policy loss is not finite")
        adam_step(self.nets.policy.params(), grads, self.opt_policy)
        return loss

    def update_policy_penalty(self, batch, lambda_p: float | None = None) -> float:
        return self._policy_step(batch, self.cfg.lambda_p if lambda_p is None else lambda_p)

    def update_policy_lagrangian(self, batch, lambda_l: float | None = None) -> float:
        return self._policy_step(batch, self.nets.lam if lambda_l is None else lambda_l)

    def mean_cost_value(self, batch) -> float:
        x, _ = self._batch_inputs(batch)
        u = forward(self.nets.policy, x)
        qc = forward(self.nets.q_cost, np.concatenate([x, u], axis=-1))
        return float(np.mean(qc[:, 0], dtype=np.float64))

    def update_multiplier(self, batch, lambda_l: float | None = None, lr: float | None = None) -> float:
        """Projected ascent ``lam <- max(0, lam + lr * mean(Q_c - C_s))``."""
        lam = self.nets.lam if lambda_l is None else lambda_l
        lr = self.cfg.lambda_lr if lr is None else lr
        violation = self.mean_cost_value(batch) - self.cfg.cost_limit
        new = max(0.0, lam + lr * violation)
        self.multiplier_trace.append((lam, violation, new))
        self.nets.lam = new
        return new

    def update(self, batch) -> tuple[float, float, float]:
        """One optimisation iteration on a minibatch."""
        lr, lc = self.update_critics(batch)
        if self.cfg.mode == "penalty":
            lp = self.update_policy_penalty(batch)
        else:
            lp = self.update_policy_lagrangian(batch)
            self.update_multiplier(batch)
        for tgt, src in (("policy_target", "policy"), ("q_reward_target", "q_reward"), ("q_cost_target", "q_cost")):
            polyak_update(getattr(self.nets, tgt), getattr(self.nets, src), self.cfg.polyak)
        return lr, lc, lp

    # -- persistence --------------------------------------------------------

    def save(self, path, env_cfg: EnvConfig | None = None, meta: dict | None = None) -> None:
        """Checkpoint networks, normalizers and multiplier with enough metadata to rebuild the agent."""
        info = {"max_action": self.max_action, "thresholds": list(self.thresholds),
                "agent_config": dataclasses.asdict(self.cfg)}
        if env_cfg is not None:
            info["env_config"] = dataclasses.asdict(env_cfg)
        self.nets.save(path, meta={**info, **(meta or {})})

    @classmethod
    def load(cls, path) -> "CherAgent":
        meta = read_manifest(path).get("meta", {})
        cfg = AgentConfig(**meta.get("agent_config", {}))
        agent = cls(int(meta["obs_dim"]), int(meta["action_dim"]), float(meta["max_action"]), cfg,
                    thresholds=tuple(meta.get("thresholds", (0.05, 0.05))))
        agent.nets = CherNetworks.load(path)
        agent.meta = meta
        return agent

    # -- episodes -----------------------------------------------------------

    def run_episode(self, env: envlib.ReachEnv, explore: bool, goals=None, start=None, seed=None):
        obs, g = env.reset(seed=seed, goals=goals, start=start)
        episode, errors, costs = [], [], []
        for t in range(env.horizon):
            a = self.act(obs, g, explore=explore)
            res = env.step(a)
            episode.append(Transition(obs.astype(np.float32), (a / self.max_action).astype(np.float32), g.copy(),
                                      res.reward, res.cost, res.obs.astype(np.float32), t == env.horizon - 1))
            errors.append(res.errors)
            costs.append(res.cost)
            obs = res.obs
        return episode, np.array(errors), np.array(costs)

    def store(self, episode: list[Transition]) -> None:
        self.buffer.extend(episode)
        stored = [episode]
        if self.cfg.her:
            relabeled = her_relabel(episode, self.thresholds)
            self.buffer.extend(relabeled)
            stored.append(relabeled)
        obs = np.array([tr.obs for ep in stored for tr in ep] + [episode[-1].next_obs])
        goals = np.array([np.ravel(tr.goals) for ep in stored for tr in ep])
        self.nets.obs_norm.update(obs)
        self.nets.goal_norm.update(goals)
        if self.nets.goal_delta:
            self.nets.delta_norm.update(goals - obs[:-1, -6:])

    def discounted(self, costs) -> float:
        return float(np.sum(self.cfg.gamma_c ** np.arange(len(costs)) * costs))

    def evaluate(self, env: envlib.ReachEnv, n: int, seed: int = 10_000, **kw) -> dict[str, float]:
        rows = [self.evaluate_episode(env, seed=seed + i, **kw) for i in range(n)]
        if not rows:
            raise ValueError("no evaluation episodes requested")
        keys = rows[0].keys()
        return {k: float(np.mean([r[k] for r in rows])) for k in keys}

    def evaluate_episode(self, env, seed: int, random_start: bool = False) -> dict[str, float]:
        rng = np.random.default_rng(seed)
        goals = env.sample_goals(rng)
        start = env.random_start(rng) if random_start else None
        _, errors, costs = self.run_episode(env, explore=False, goals=goals, start=start)
        e1, e2 = errors[-1]
        return {"e1": float(e1), "e2": float(e2), "success": float(e1 <= self.thresholds[0] and e2 <= self.thresholds[1]),
                "cost_value": self.discounted(costs)}


def make_agent(env: envlib.ReachEnv, cfg: AgentConfig, seed: int = 0) -> CherAgent:
    return CherAgent(env.obs_dim, env.action_dim, env.max_action, cfg, seed=seed, thresholds=env.thresholds)


@dataclass
class TrainResult:
    agent: CherAgent
    log: list[EpisodeLog]
    evals: list[dict] = field(default_factory=list)
    seconds: float = 0.0


def train(env: envlib.ReachEnv, cfg: AgentConfig, seed: int = 0, checkpoint_dir=None, progress: bool = False) -> TrainResult:
    """Run the CHER training loop for ``cfg.episodes`` episodes."""
    t0 = time.perf_counter()
    agent = make_agent(env, cfg, seed)
    env.seed(seed)
    rows, evals = [], []
    for m in range(cfg.episodes):
        episode, errors, costs = agent.run_episode(env, explore=True)
        agent.store(episode)
        losses = []
        for _ in range(cfg.updates_per_episode):
            batch = agent.buffer.sample(cfg.batch_size, agent.rng)
            losses.append(agent.update(batch))
        losses = np.array(losses) if losses else np.full((1, 3), np.nan)
        e1, e2 = errors[-1]
        row = EpisodeLog(m, float(e1), float(e2), float(e1 <= env.thresholds[0] and e2 <= env.thresholds[1]),
                         agent.discounted(costs), agent.nets.lam, *map(float, losses.mean(axis=0)))
        if agent.multiplier_trace:
            row.mean_q_cost = agent.multiplier_trace[-1][1] + cfg.cost_limit
        rows.append(row)
        if cfg.eval_every and (m + 1) % cfg.eval_every == 0:
            ev = agent.evaluate(env, cfg.eval_episodes)
            ev["episode"] = m
            evals.append(ev)
            if progress:
                log.info("episode %d eval %s", m, ev)
        if checkpoint_dir and cfg.checkpoint_every and (m + 1) % cfg.checkpoint_every == 0:
            Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
            agent.save(Path(checkpoint_dir) / f"episode_{m + 1:05d}.ckpt", env.cfg, meta={"episode": m + 1})
    return TrainResult(agent, rows, evals, time.perf_counter() - t0)
