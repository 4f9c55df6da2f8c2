"""
The particle world and the coverage metric
==========================================

Resets both scenarios, shows the observation layouts, rolls out a random
policy and scores it with the coverage rate.
"""

from __future__ import annotations

import argparse
from dataclasses import replace

import numpy as np

from lero import particle_env as pe


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--episodes", type=int, default=20)
    args = parser.parse_args()

    for name in ("spread", "reference"):
        config = pe.ScenarioConfig.make(name)
        state = pe.reset(config, args.seed)
        obs = pe.all_observations(state)
        print(f"{name}: {config.n_agents} agents, {config.n_landmarks} landmarks, "
              f"{config.n_actions} actions, observation length {obs.shape[1]}")
        print("  agent 0 observes", np.round(obs[0], 3))

        # a random policy rarely parks an agent within 0.1 of a landmark
        rng = np.random.default_rng(args.seed)
        rates = []
        for k in range(args.episodes):
            actions = rng.integers(0, config.n_actions, size=(config.horizon, config.n_agents))
            states = pe.rollout(config, args.seed * 1000 + k, actions)[1:]
            rates.append(pe.coverage_rate(states))
        print(f"  random policy coverage over {args.episodes} episodes: {np.mean(rates):.4f}")

    # parking agents on landmarks covers them; two agents on one landmark count once
    config = pe.ScenarioConfig.make("spread")
    state = pe.reset(config, args.seed)
    lm = state.landmark_positions()
    idle = [[0] * config.n_agents] * config.horizon
    agents = tuple(replace(a, position=p.copy()) for a, p in zip(state.agents, [lm[0], lm[0], lm[1]]))
    parked = replace(state, agents=agents)
    states = [parked]
    for a in idle:
        states.append(pe.step(states[-1], a)[0])
    print(f"two agents on landmark 0, one on landmark 1: coverage {pe.coverage_rate(states[1:]):.4f} (2 of 3)")


if __name__ == "__main__":
    main()
