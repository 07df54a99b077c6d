from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from cherlab.agent import make_agent
from cherlab.config import AgentConfig, ConfigError, EnvConfig, ScenarioConfig
from cherlab.env import ReachEnv
from cherlab.harness import (SpinningObject, convergence_step, divergence_slope, evaluate_policy, load_agent,
                             mass_sweep, run_tracking_scenario, theorem1_bound, theorem1_check)

from oracles import rodrigues_angle


# ---------------------------------------------------------------------------
# convergence-time bound


def test_static_target_bound_is_closed_form():
    t = np.linspace(0.0, 10.0, 1001)
    v, d_e = 0.3, 0.42
    t_b = theorem1_bound(t, np.full_like(t, v), np.zeros_like(t), d_e, t0=1.5)
    assert t_b == pytest.approx(1.5 + d_e / v, abs=1e-12)


def test_bound_zero_gap_is_start():
    t = np.linspace(0.0, 1.0, 11)
    assert theorem1_bound(t, np.ones(11), np.zeros(11), 0.0, t0=0.3) == pytest.approx(0.3)


def test_bound_infinite_when_never_caught():
    t = np.linspace(0.0, 5.0, 51)
    assert theorem1_bound(t, np.full(51, 0.1), np.full(51, 0.2), 0.05) == float("inf")
    assert theorem1_bound(t, np.full(51, 1.0), np.zeros(51), 100.0) == float("inf")
    assert theorem1_bound(t, np.ones(51), np.zeros(51), 0.1, t0=6.0) == float("inf")


def test_bound_rejects_bad_input():
    t = np.linspace(0.0, 1.0, 5)
    with pytest.raises(ValueError):
        theorem1_bound(t, np.ones(5), np.zeros(5), -0.1)
    with pytest.raises(ValueError):
        theorem1_bound(t, np.ones(4), np.zeros(5), 0.1)


@given(st.integers(0, 10_000), st.floats(0.01, 2.0))
@settings(max_examples=40, deadline=None)
def test_bound_integral_matches_quadrature(seed, d_e):
    rng = np.random.default_rng(seed)
    t = np.sort(np.concatenate([[0.0], rng.uniform(0, 8.0, 30)]))
    ee = rng.uniform(0.2, 1.5, t.size)
    tgt = rng.uniform(0.0, 0.2, t.size)
    t_b = theorem1_bound(t, ee, tgt, d_e)
    total = quad(lambda s: np.interp(s, t, ee - tgt), t[0], t[-1], points=t, limit=200)[0]
    if total < d_e:
        assert t_b == float("inf")
        return
    reached = quad(lambda s: np.interp(s, t, ee - tgt), t[0], t_b, points=t[t < t_b], limit=200)[0]
    assert reached == pytest.approx(d_e, abs=1e-8)


def test_check_premise_and_consistency():
    t = np.linspace(0.0, 4.0, 401)
    ee = np.where(t < 1.0, 0.0, 0.5)
    tgt = np.full_like(t, 0.1)
    err = np.where(t < 1.0, 0.2, np.maximum(0.2 - 0.4 * (t - 1.0), 0.01))
    out = theorem1_check(t, ee, tgt, err, u_e=0.05, eps=0.0)
    assert out["t0"] == pytest.approx(1.0)
    assert out["t_b"] == pytest.approx(1.0 + 0.2 / 0.4, abs=1e-9)
    assert out["premise"] and out["consistent"]
    assert out["err_at_tb"] == pytest.approx(0.01)


def test_check_never_faster():
    t = np.linspace(0.0, 1.0, 11)
    out = theorem1_check(t, np.zeros(11), np.ones(11), np.ones(11), 0.05, 0.0)
    assert out["t_b"] == float("inf") and not out["premise"] and out["consistent"]


def test_check_flags_violation():
    t = np.linspace(0.0, 2.0, 201)
    err = np.full_like(t, 0.3)
    out = theorem1_check(t, np.ones_like(t), np.zeros_like(t), err, 0.05, 0.01)
    assert out["premise"] and not out["consistent"]


# ---------------------------------------------------------------------------
# convergence and divergence


def test_convergence_step():
    err = np.array([1.0, 0.5, 0.2, 0.05, 0.04, 0.03])
    assert convergence_step(err, 0.1) == 3
    assert convergence_step(np.full(4, 0.01), 0.1) == 0
    assert convergence_step(np.array([0.01, 0.01, 0.5]), 0.1) is None
    assert convergence_step(np.array([0.01, 0.5, 0.01]), 0.1) == 2


def test_divergence_slope_sign():
    k = np.arange(90, dtype=float)
    assert divergence_slope(0.01 * k) == pytest.approx(0.01)
    assert divergence_slope(1.0 - 0.002 * k) == pytest.approx(-0.002)
    assert divergence_slope(np.ones(90)) == pytest.approx(0.0, abs=1e-12)
    assert divergence_slope(np.array([1.0])) == 0.0


# ---------------------------------------------------------------------------
# spinning object


def test_spinning_object_geometry():
    axis = np.array([0.0, 0.0, 1.0])
    center = np.array([1.0, 0.0, 0.0])
    obj = SpinningObject(axis, center, 0.5, 0.15, [np.pi / 2, -np.pi / 2], [0.0, 0.1], np.zeros((3, 3)) + center)
    for t in (0.0, 0.7, 3.1):
        p = obj.targets(t)
        rel = p - center
        np.testing.assert_allclose(np.linalg.norm(rel[:, :2], axis=1), 0.15, atol=1e-12)
        np.testing.assert_allclose(rel[:, 2], [0.0, 0.1], atol=1e-12)
    a0, a1 = obj.targets(0.0)[0] - center, obj.targets(2.0)[0] - center
    ang = np.arctan2(a0[0] * a1[1] - a0[1] * a1[0], a0[:2] @ a1[:2])
    assert ang == pytest.approx(1.0, abs=1e-12)
    assert rodrigues_angle(obj.rotation(1.0), np.eye(3)) == pytest.approx(0.5, abs=1e-12)


def test_spinning_object_static():
    obj = SpinningObject([0, 0, 1], [0, 0, 0], 0.0, 0.2, [0.0], [0.0], np.eye(3))
    np.testing.assert_array_equal(obj.targets(5.0), obj.targets(0.0))
    np.testing.assert_array_equal(obj.cloud(5.0), obj.cloud(0.0))


# ---------------------------------------------------------------------------
# scenario and evaluation with a small untrained agent


@pytest.fixture(scope="module")
def small_agent():
    env_cfg = EnvConfig(kind="planar")
    agent = make_agent(ReachEnv(env_cfg), AgentConfig(hidden=16, layers=3), seed=0)
    return agent, env_cfg


def test_tracking_is_deterministic(small_agent):
    agent, env_cfg = small_agent
    sc = ScenarioConfig(steps=40, seed=3)
    a = run_tracking_scenario(agent, env_cfg, sc)
    b = run_tracking_scenario(agent, env_cfg, sc)
    assert a.trace == b.trace
    assert len(a.trace) == 40
    assert len(a.estimates) == 4
    assert a.metrics.e1.shape == (40,)


def test_tracking_rate_estimate(small_agent):
    agent, env_cfg = small_agent
    res = run_tracking_scenario(agent, env_cfg, ScenarioConfig(steps=60, omega=0.5, seed=1))
    assert all(tr is not None for tr in res.trackers)
    assert res.trace[-1]["rate_est"] == pytest.approx(0.5, abs=0.05)


def test_tracking_static_object(small_agent):
    agent, env_cfg = small_agent
    res = run_tracking_scenario(agent, env_cfg, ScenarioConfig(steps=60, omega=0.0, seed=2))
    # cloud noise gives a small spurious rate; the filtered goals still sit on the fixed points
    assert max(abs(r["rate_est"]) for r in res.trace) < 0.02
    errs = np.array([[r["goal_err1"], r["goal_err2"]] for r in res.trace[20:]])
    assert errs.mean() < 0.005


def test_tracking_trace_file(small_agent, tmp_path):
    agent, env_cfg = small_agent
    res = run_tracking_scenario(agent, env_cfg, ScenarioConfig(steps=12, seed=0))
    path = tmp_path / "trace.csv"
    res.write_trace(path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("step,t,e1,e2")
    assert len(lines) == 13


def test_encoder_estimator_requires_encoder(small_agent):
    agent, env_cfg = small_agent
    with pytest.raises(ConfigError):
        run_tracking_scenario(agent, env_cfg, ScenarioConfig(estimator="encoder", steps=5))


def test_evaluate_policy_rejects_zero_episodes(small_agent):
    agent, env_cfg = small_agent
    with pytest.raises(ValueError):
        evaluate_policy(agent, env_cfg, 0)


def test_evaluate_policy_deterministic_and_keys(small_agent):
    agent, env_cfg = small_agent
    a = evaluate_policy(agent, env_cfg, 3, seed=5)
    b = evaluate_policy(agent, env_cfg, 3, seed=5)
    assert a == b
    for k in ("e1", "e2", "e1_std", "e2_std", "cost_value", "cost_value_std", "success_rate", "episodes"):
        assert k in a
    assert 0.0 <= a["success_rate"] <= 1.0


def test_mass_sweep_scales(small_agent):
    agent, env_cfg = small_agent
    rows = mass_sweep(agent, env_cfg, 2, scales=(0.5, 2.0))
    assert [r["base_mass_scale"] for r in rows] == [0.5, 2.0]
    assert rows[0]["e1"] != rows[1]["e1"]


def test_load_agent_roundtrip(small_agent, tmp_path):
    agent, env_cfg = small_agent
    path = tmp_path / "a.ckpt"
    agent.save(path, env_cfg)
    loaded, cfg = load_agent(path)
    assert cfg == env_cfg
    assert evaluate_policy(loaded, cfg, 2) == evaluate_policy(agent, env_cfg, 2)
    with pytest.raises(FileNotFoundError):
        load_agent(tmp_path / "missing.ckpt")
