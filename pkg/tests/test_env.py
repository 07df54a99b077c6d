from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cherlab.config import EnvConfig
from cherlab.dynamics import make_state
from cherlab.env import (EPISODE_COLUMNS, ReachEnv, achieved_goals, cost, goal_errors, observation, reward,
                         split_observation, write_episode_trace)
from cherlab.so3 import quat_from_rotvec


def obs_with_ee(p1, p2, dof=2):
    return np.concatenate([np.zeros(4 * dof), p1, p2])


def test_reward_inside_thresholds():
    g = np.zeros((2, 3))
    obs = obs_with_ee([0.03, 0, 0], [0, 0.04, 0])
    assert reward(obs, g, (0.05, 0.05)) == 0.0


def test_reward_one_arm_outside():
    g = np.zeros((2, 3))
    assert reward(obs_with_ee([0.06, 0, 0], [0.01, 0, 0]), g, (0.05, 0.05)) == -1.0


def test_reward_boundary_counts_as_success():
    g = np.zeros((2, 3))
    assert reward(obs_with_ee([0.05, 0, 0], [0, 0, 0]), g, (0.05, 0.05)) == 0.0


@given(st.lists(st.floats(-1, 1, allow_nan=False), min_size=12, max_size=12))
@settings(max_examples=50, deadline=None)
def test_reward_is_binary_and_depends_only_on_positions(vals):
    v = np.array(vals)
    obs = obs_with_ee(v[:3], v[3:6])
    goals = v[6:].reshape(2, 3)
    r = reward(obs, goals)
    assert r in (0.0, -1.0)
    other = obs.copy()
    other[:8] = 123.0
    assert reward(other, goals) == r


def test_reward_batched_goals_relabel():
    obs = np.stack([obs_with_ee([0, 0, 0], [1, 0, 0]), obs_with_ee([1, 0, 0], [1, 0, 0])])
    goals = np.stack([achieved_goals(o) for o in obs])
    np.testing.assert_array_equal(reward(obs, goals), [0.0, 0.0])


def make_env(kind="planar", **kw):
    return ReachEnv(EnvConfig(kind=kind, **kw))


def test_cost_zero_without_base_motion():
    env = make_env()
    s = env.home.copy()
    for t in range(5):
        assert cost(s, t, env.home) == 0.0


def test_cost_zero_at_first_step():
    env = make_env()
    s = env.home.copy()
    s.base_pos = s.base_pos + 0.3
    assert cost(s, 0, env.home) == 0.0


def test_cost_translation_example():
    env = make_env()
    s = env.home.copy()
    s.base_pos = s.base_pos + np.array([0.1, 0.0, 0.0])
    assert cost(s, 10, env.home, kappa=1.0) == pytest.approx(1.0, abs=1e-12)


def test_cost_orientation_weight():
    env = make_env()
    s = env.home.copy()
    s.base_quat = quat_from_rotvec(np.array([0.0, 0.0, 0.2]))
    assert cost(s, 2, env.home, kappa=1.0, orientation_weight=0.5) == pytest.approx(0.5 * 0.2 * 2, abs=1e-12)


def test_reset_is_deterministic():
    env = make_env()
    o1, g1 = env.reset(seed=3)
    o2, g2 = env.reset(seed=3)
    np.testing.assert_array_equal(o1, o2)
    np.testing.assert_array_equal(g1, g2)


def test_reset_goal_override():
    env = make_env()
    goals = np.array([[1.0, 0.2, 0.0], [1.0, -0.2, 0.0]])
    _, g = env.reset(seed=0, goals=goals)
    np.testing.assert_array_equal(g, goals)


@pytest.mark.parametrize("kind", ["planar", "full"])
def test_goal_sampling_respects_workspace_and_keep_out(kind):
    env = make_env(kind)
    rng = np.random.default_rng(0)
    r = env.sim.limits.keep_out_radius
    for _ in range(10_000 // 2):
        g = env.sample_goals(rng)
        for i, box in enumerate(env.workspaces):
            assert np.all(g[i] >= box[:, 0]) and np.all(g[i] <= box[:, 1])
            assert np.linalg.norm(g[i] - env.home.base_pos) >= r


def test_observation_roundtrip():
    env = make_env("full")
    obs, _ = env.reset(seed=1)
    for a in np.random.default_rng(1).uniform(-1, 1, (5, 12)):
        res = env.step(a)
    parts = split_observation(res.obs, 6)
    s = env.state
    for name in ("theta1", "theta_dot1", "theta2", "theta_dot2", "p_e1", "p_e2"):
        np.testing.assert_allclose(parts[name], getattr(s, name), atol=1e-12)
    # 30 state entries; with the goal pair carried alongside the policy sees 36
    assert res.obs.shape == (30,)
    assert res.obs.size + env.goals.size == 36


def test_step_reward_matches_errors_and_success_flag():
    env = make_env()
    env.reset(seed=0)
    for a in np.random.default_rng(0).uniform(-1, 1, (10, 4)):
        res = env.step(a)
        assert res.success == (res.reward == 0.0)
        np.testing.assert_allclose(res.errors, goal_errors(res.obs, env.goals))


def test_first_step_cost_zero():
    env = make_env()
    env.reset(seed=0)
    assert env.step(np.ones(4)).cost == 0.0


def test_already_at_goal_gives_success():
    env = make_env()
    home = env.home
    goals = np.stack([home.p_e1, home.p_e2])
    env.reset(seed=0, goals=goals)
    res = env.step(np.zeros(4))
    assert res.reward == 0.0 and res.success


def test_episode_bounds_and_exhaustion():
    env = make_env()
    env.reset(seed=2)
    rng = np.random.default_rng(2)
    rs, cs = [], []
    for _ in range(env.horizon):
        res = env.step(rng.uniform(-1, 1, 4))
        rs.append(res.reward)
        cs.append(res.cost)
    assert -env.horizon <= sum(rs) <= 0
    assert np.all(np.array(cs) >= 0)
    assert np.isfinite(np.sum(0.98 ** np.arange(len(cs)) * cs))
    with pytest.raises(RuntimeError):
        env.step(np.zeros(4))


def test_step_rejects_wrong_action_length():
    env = make_env()
    env.reset(seed=0)
    with pytest.raises(ValueError):
        env.step(np.zeros(5))


def test_step_before_reset():
    with pytest.raises(RuntimeError):
        make_env().step(np.zeros(4))


def test_default_horizons():
    assert EnvConfig(kind="planar").horizon == 60
    assert EnvConfig(kind="full").horizon == 100


def test_random_start_is_collision_free():
    env = make_env()
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert not env.sim.collides(env.random_start(rng))


def test_episode_trace_csv(tmp_path):
    env = make_env()
    env.reset(seed=0)
    results = [env.step(np.full(4, 0.3)) for _ in range(4)]
    path = tmp_path / "ep.csv"
    write_episode_trace(results, path, env.cfg.dt)
    rows = path.read_text().splitlines()
    assert rows[0].split(",") == EPISODE_COLUMNS
    assert len(rows) == 5
    last = np.array(rows[-1].split(","), float)
    assert last[0] == pytest.approx(4 * env.cfg.dt)
    assert last[2] == pytest.approx(results[-1].cost)


def test_observation_of_state():
    env = make_env()
    s = make_state(env.sim.chain, [0.1, 0.2], [0.3, 0.4])
    o = observation(s)
    np.testing.assert_array_equal(o[:2], [0.1, 0.2])
    np.testing.assert_array_equal(o[-6:-3], s.p_e1)
