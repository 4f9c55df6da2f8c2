"""
Reward and observation scripts
==============================

Candidates are small sandboxed scripts. This walks through parsing,
probing, evaluating the shipped reference scripts and blending local and
team rewards.
"""

from __future__ import annotations

import argparse

import numpy as np

from lero import particle_env as pe
from lero.candidates import HybridRewardSpec, Kind, builtin, builtin_candidate, eval_oef, parse_candidate, validate
from lero.candidates.engine import eval_hybrid_reward, reward_terms

GOOD = """
fn local_reward(i) {
    let best = norm(agent_pos(i) - landmark_pos(0));
    for k in range(1, num_landmarks()) {
        best = min(best, norm(agent_pos(i) - landmark_pos(k)));
    }
    return -best;
}

fn global_reward() {
    return 0.0;
}
"""

# divides by the agent's speed, which is zero right after a reset
FRAGILE = """
fn enhance(i) {
    return [1 / norm(self_vel(obs(i)))];
}
"""


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--scenario", default="reference", choices=["spread", "reference"])
    args = parser.parse_args()
    config = pe.ScenarioConfig.make(args.scenario)
    state = pe.reset(config, 4)
    obs = pe.all_observations(state)

    cand = validate(parse_candidate(GOOD, Kind.HRF, id="nearest"), config)
    print(f"candidate 'nearest': {cand.status.value}")
    spec = HybridRewardSpec.make(cand, cand, 0.5, config.n_agents)
    local, team = reward_terms(spec, state, obs, [0] * config.n_agents)
    print("  local terms", np.round(local, 4), "team term", round(team, 4))

    # scripts are rejected before training when a probe state breaks them
    for source, kind in ((FRAGILE, Kind.OEF), ("fn local_reward(i) { return ; }", Kind.HRF)):
        bad = validate(parse_candidate(source, kind, id="bad"), config)
        print(f"rejected: {bad.reason} (probe {bad.failed_probe})")

    for name in ("reward_v0", "reward_evo"):
        local, team = reward_terms(builtin(name, config), state, obs, [0] * config.n_agents)
        print(f"{name}: local {np.round(local, 3)}, team {team:.3f}")
    for name in ("oef_v0", "oef_evo"):
        out = eval_oef(builtin_candidate(name, config), config, obs)
        print(f"{name}: {out.extra_len} extra features, agent 0 gets {np.round(out.global_info[0], 3)}")

    # the blend is affine in alpha: alpha 1 is purely local, alpha 0 purely team
    evo = builtin_candidate("reward_evo", config)
    for alpha in (0.0, 0.5, 1.0):
        r = eval_hybrid_reward(HybridRewardSpec.make(evo, evo, alpha, config.n_agents), state, obs, [0] * config.n_agents)
        print(f"alpha {alpha:.1f}: rewards {np.round(r, 3)}")


if __name__ == "__main__":
    main()
