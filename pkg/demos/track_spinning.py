"""Follow two points on a spinning box with the planar reach policy.

    python3 demos/track_spinning.py [checkpoint]

Without a checkpoint a policy is trained first. The object is observed as a
noisy point cloud every ten control steps; Kabsch estimates give the spin
rate, per-point filters predict where the targets will be one step ahead,
and those predictions are the policy's goals.
"""

from __future__ import annotations

import dataclasses
import sys

import numpy as np

from cherlab.agent import train
from cherlab.config import EnvConfig, ScenarioConfig, desk_agent_config
from cherlab.env import ReachEnv
from cherlab.harness import load_agent, run_tracking_scenario


def main(checkpoint: str | None = None) -> None:
    if checkpoint:
        agent, env_cfg = load_agent(checkpoint)
    else:
        env_cfg = EnvConfig(kind="planar")
        agent = train(ReachEnv(env_cfg), desk_agent_config(), seed=0).agent
    base = ScenarioConfig()
    cases = [("slow spin", dict(omega=0.5)), ("fast spin, capped joints", dict(omega=2.5, joint_rate_limit=0.1))]
    for name, over in cases:
        m = run_tracking_scenario(agent, env_cfg, dataclasses.replace(base, **over)).metrics
        total = m.total_error
        print(f"{name}: e1+e2 {total[0]:.3f} -> {total[-1]:.3f} m, prediction bound eps {m.epsilon * 1e3:.1f} mm, "
              f"converged at step {m.convergence_step}, diverging {m.divergent}")
        for i, chk in enumerate(m.theorem1):
            if np.isfinite(chk["t_b"]):
                print(f"  arm {i + 1}: catch-up bound T_B {chk['t_b']:.2f} s, error there {chk['err_at_tb']:.3f} m")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else None)
