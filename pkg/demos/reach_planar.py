"""Train a constrained reach policy on the planar dual-arm base and compare
the base-disturbance cost with and without the penalty.

    python3 demos/reach_planar.py [episodes]

Each run takes a minute or two on one core at the default 600 episodes.
"""

from __future__ import annotations

import sys

from cherlab.agent import train
from cherlab.config import EnvConfig, desk_agent_config
from cherlab.env import ReachEnv


def main(episodes: int = 600) -> None:
    env = ReachEnv(EnvConfig(kind="planar"))
    print(f"planar env: {env.action_dim} joint-rate commands, horizon {env.horizon}, thresholds {env.thresholds}")
    for lam in (0.0, 0.5):
        res = train(env, desk_agent_config(lambda_p=lam, episodes=episodes), seed=0)
        ev = res.agent.evaluate(env, 20)
        # the penalty weighs the cost critic against the reward critic in the actor loss
        print(f"lambda_p={lam}: success {ev['success']:.2f}, final errors {ev['e1']:.3f}/{ev['e2']:.3f} m, "
              f"discounted base cost {ev['cost_value']:.3f}  ({res.seconds:.0f} s)")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 600)
