from __future__ import annotations

import math
from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lero import particle_env as pe
from lero.candidates import (
    BUILTIN_NAMES,
    CandidateRuntimeFault,
    HybridRewardSpec,
    Kind,
    ObservationHistory,
    Status,
    builtin,
    builtin_candidate,
    builtin_source,
    enhance_observations,
    eval_hybrid_reward,
    eval_oef,
    parse_candidate,
    validate,
)
from lero.candidates.engine import (
    PROBE_COUNT,
    PROBE_SEED_BASE,
    load_record,
    reward_terms,
    save_record,
)

REF = pe.ScenarioConfig.make("reference")
SPREAD = pe.ScenarioConfig.make("spread")
SPREAD2 = pe.ScenarioConfig.make("spread", n_agents=2, n_landmarks=2)


# ---------------------------------------------------------------------------
# State construction
# ---------------------------------------------------------------------------


def make_ref_state(agent_pos, landmark_pos, targets, agent_vel=None, comm=None, step_index=0):
    agent_vel = np.zeros((2, 2)) if agent_vel is None else agent_vel
    comm = np.zeros((2, pe.COMM_DIM)) if comm is None else comm
    agents = tuple(
        pe.AgentState(
            np.array(agent_pos[i], dtype=float),
            np.array(agent_vel[i], dtype=float),
            goal_partner_index=1 - i,
            goal_landmark_index=int(targets[i]),
            comm_channel=np.array(comm[i], dtype=float),
        )
        for i in range(2)
    )
    landmarks = tuple(
        pe.LandmarkState(np.array(p, dtype=float), pe.REFERENCE_COLORS[k].copy())
        for k, p in enumerate(landmark_pos)
    )
    return pe.WorldState(REF, step_index, agents, landmarks)


def make_spread_state(config, agent_pos, landmark_pos, agent_vel=None):
    agent_vel = np.zeros((config.n_agents, 2)) if agent_vel is None else agent_vel
    agents = tuple(
        pe.AgentState(np.array(p, dtype=float), np.array(v, dtype=float))
        for p, v in zip(agent_pos, agent_vel)
    )
    landmarks = tuple(
        pe.LandmarkState(np.array(p, dtype=float), pe.SPREAD_COLOR.copy()) for p in landmark_pos
    )
    return pe.WorldState(config, 0, agents, landmarks)


def at_offset(origin, dist, angle):
    return np.asarray(origin, dtype=float) + dist * np.array([math.cos(angle), math.sin(angle)])


def crafted_states() -> list[pe.WorldState]:
    """Reference states that land on every bonus tier and proximity band."""
    rng = np.random.default_rng(7)
    lms = np.array([[0.6, -0.4], [-0.5, 0.5], [0.1, 0.8]])
    out = []
    # (partner distance to target, guide distance to partner, partner speed)
    cases = [
        (0.05, 0.2, 0.01),
        (0.05, 0.4, 0.2),
        (0.15, 0.7, 0.0),
        (0.25, 0.2, 0.03),
        (0.45, 0.45, 0.01),
        (0.08, 0.9, 0.04),
        (0.19, 0.1, 0.3),
        (0.29, 0.35, 0.02),
    ]
    for d_target, d_partner, speed in cases:
        targets = rng.integers(0, 3, size=2)
        p1 = at_offset(lms[targets[0]], d_target, rng.uniform(0, 2 * np.pi))
        p0 = at_offset(p1, d_partner, rng.uniform(0, 2 * np.pi))
        vel = np.array([[0.02, -0.01], at_offset([0, 0], speed, rng.uniform(0, 2 * np.pi))])
        comm = np.zeros((2, pe.COMM_DIM))
        comm[0, rng.integers(10)] = 1.0
        comm[1, rng.integers(10)] = 1.0
        out.append(make_ref_state([p0, p1], lms, targets, vel, comm))
    # both pairs on target: the team bonus
    for targets in ([0, 2], [1, 1]):
        p1 = at_offset(lms[targets[0]], 0.04, 1.0)
        p0 = at_offset(lms[targets[1]], 0.07, 2.0)
        out.append(make_ref_state([p0, p1], lms, targets, np.full((2, 2), 0.01)))
    # one pair on target, the other not
    out.append(make_ref_state([at_offset(lms[2], 0.5, 0.0), at_offset(lms[0], 0.03, 0.0)], lms, [0, 2]))
    # agents on top of each other
    out.append(make_ref_state([[0.0, 0.0], [0.0, 0.0]], lms, [1, 0]))
    return out


def golden_states() -> list[pe.WorldState]:
    """Twenty fixed Reference states: rolled-out episodes plus crafted tiers."""
    states = []
    for seed in range(8):
        rng = np.random.default_rng(1000 + seed)
        actions = rng.integers(0, REF.n_actions, size=(seed * 2, 2))
        states.append(pe.rollout(REF, seed, actions)[-1] if len(actions) else pe.reset(REF, seed))
    states += crafted_states()
    assert len(states) == 20
    return states


GOLDEN = golden_states()


def test_golden_states_reach_every_tier():
    d = [
        np.linalg.norm(s.agents[1].position - s.landmarks[s.agents[0].goal_landmark_index].position)
        for s in GOLDEN
    ]
    assert any(x < 0.1 for x in d)
    assert any(0.1 <= x < 0.2 for x in d)
    assert any(0.2 <= x < 0.3 for x in d)
    assert any(x >= 0.3 for x in d)


# ---------------------------------------------------------------------------
# Independent transcriptions of the reference reward and observation functions,
# written against an object world with goal_a (partner) and goal_b (landmark).
# ---------------------------------------------------------------------------


def as_world(state: pe.WorldState) -> SimpleNamespace:
    agents = [
        SimpleNamespace(state=SimpleNamespace(p_pos=a.position, p_vel=a.velocity)) for a in state.agents
    ]
    landmarks = [SimpleNamespace(state=SimpleNamespace(p_pos=lm.position)) for lm in state.landmarks]
    for view, a in zip(agents, state.agents):
        view.goal_a = None if a.goal_partner_index is None else agents[a.goal_partner_index]
        view.goal_b = None if a.goal_landmark_index is None else landmarks[a.goal_landmark_index]
    return SimpleNamespace(agents=agents, landmarks=landmarks)


def oracle_v0_agent(agent, world):
    if agent.goal_a is None or agent.goal_b is None:
        return 0.0
    dist = np.linalg.norm(agent.goal_a.state.p_pos - agent.goal_b.state.p_pos)
    reward = -dist
    if dist < 0.1:
        reward += 10.0
    return reward


def oracle_v0_global(world):
    total = 0.0
    for agent in world.agents:
        if agent.goal_a is None or agent.goal_b is None:
            continue
        dist = np.linalg.norm(agent.goal_a.state.p_pos - agent.goal_b.state.p_pos)
        total += -dist
        if dist < 0.1:
            total += 10.0
    return total


def oracle_evo_agent(agent, world):
    if agent.goal_a is None or agent.goal_b is None:
        return 0.0
    d_target = ((agent.goal_a.state.p_pos - agent.goal_b.state.p_pos) ** 2).sum() ** 0.5
    rew = -2.0 * d_target
    if d_target < 0.1:
        rew += 15.0
    elif d_target < 0.2:
        rew += 8.0
    elif d_target < 0.3:
        rew += 4.0
    d_partner = ((agent.state.p_pos - agent.goal_a.state.p_pos) ** 2).sum() ** 0.5
    if d_partner < 0.3:
        rew += 3.0
    elif d_partner < 0.5:
        rew += 1.5
    else:
        rew -= 2.0
    speed = ((agent.goal_a.state.p_vel) ** 2).sum() ** 0.5
    if d_target < 0.1 and speed < 0.05:
        rew += 5.0
    return rew


def oracle_evo_global(world):
    total, success = 0.0, 0
    for agent in world.agents:
        if agent.goal_a is None or agent.goal_b is None:
            continue
        d_target = ((agent.goal_a.state.p_pos - agent.goal_b.state.p_pos) ** 2).sum() ** 0.5
        total += -2.0 * d_target
        if d_target < 0.1:
            total += 15.0
            success += 1
        elif d_target < 0.2:
            total += 8.0
        elif d_target < 0.3:
            total += 4.0
    if success == len(world.agents) and len(world.agents) > 0:
        total += 20.0
    return total


COLORS = np.array([[0.75, 0.25, 0.25], [0.25, 0.75, 0.25], [0.25, 0.25, 0.75]])


def oracle_oef_v0(obs: np.ndarray) -> np.ndarray:
    n = obs.shape[0]
    rel = obs[:, 2:8].reshape(n, 3, 2)
    dists = np.linalg.norm(rel, axis=-1)
    if n == 2:
        avg = (rel[0] - rel[1]).mean(axis=0)
        partner = np.full((n, 1), np.linalg.norm(avg))
    else:
        partner = np.zeros((n, 1))
    return np.concatenate([dists, partner], axis=-1)


def oracle_oef_evo(obs: np.ndarray) -> np.ndarray:
    n = obs.shape[0]

    def assigned(o):
        rel = o[:, 2:8].reshape(n, 3, 2)
        dists = np.linalg.norm(rel, axis=-1)
        angles = np.arctan2(rel[..., 1], rel[..., 0])
        err = ((o[:, None, 8:11] - COLORS[None]) ** 2).sum(-1)
        idx = err.argmin(-1)
        rows = np.arange(n)
        return dists[rows, idx][:, None], angles[rows, idx][:, None]

    self_d, self_a = assigned(obs)
    margin = np.clip(0.1 - self_d, 0, None)
    if n == 2:
        partner = np.roll(obs, 1, axis=0)
        p_d, p_a = assigned(partner)
        p_vel = np.linalg.norm(partner[:, 0:2], axis=-1, keepdims=True)
        p_comm = np.linalg.norm(partner[:, 11:21], axis=-1, keepdims=True)
    else:
        p_d = p_a = p_vel = p_comm = np.zeros((n, 1))
    self_vel = np.linalg.norm(obs[:, 0:2], axis=-1, keepdims=True)
    return np.concatenate([self_d, self_a, margin, p_d, p_a, self_d - p_d, self_vel, p_vel, p_comm], -1)


# ---------------------------------------------------------------------------
# Golden equivalence
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "name,agent_fn,global_fn",
    [("reward_v0", oracle_v0_agent, oracle_v0_global), ("reward_evo", oracle_evo_agent, oracle_evo_global)],
)
def test_reward_builtin_matches_oracle(name, agent_fn, global_fn):
    spec = builtin(name, REF)
    for state in GOLDEN:
        world = as_world(state)
        local, team = reward_terms(spec, state, pe.all_observations(state), [0, 0])
        want_local = [agent_fn(a, world) for a in world.agents]
        np.testing.assert_allclose(local, want_local, rtol=0, atol=1e-9)
        assert team == pytest.approx(global_fn(world), abs=1e-9)


@pytest.mark.parametrize("name,oracle", [("oef_v0", oracle_oef_v0), ("oef_evo", oracle_oef_evo)])
def test_oef_builtin_matches_oracle(name, oracle):
    cand = builtin(name, REF)
    for state in GOLDEN:
        obs = pe.all_observations(state)
        out = eval_oef(cand, REF, obs)
        np.testing.assert_allclose(out.global_info, oracle(obs), rtol=0, atol=1e-9)


def test_golden_states_exercise_team_bonus():
    totals = [oracle_evo_global(as_world(s)) for s in GOLDEN]
    assert any(t > 20.0 for t in totals)


# ---------------------------------------------------------------------------
# Hand-evaluated examples
# ---------------------------------------------------------------------------

LMS = np.array([[0.5, 0.0], [0.0, 0.3], [-0.9, 0.0]])


def test_reward_v0_partner_on_target():
    # partner 0.05 from agent 0's target: -0.05 + 10
    p1 = LMS[0] + [0.05, 0.0]
    state = make_ref_state([[-0.5, -0.5], p1], LMS, [0, 2])
    local, _ = reward_terms(builtin("reward_v0", REF), state, pe.all_observations(state), [0, 0])
    assert local[0] == pytest.approx(9.95, abs=1e-12)


def test_reward_evo_hand_value():
    # d_target 0.05, d_partner 0.2, partner speed 0.01: -0.1 + 15 + 3 + 5
    p1 = LMS[0] + [0.05, 0.0]
    p0 = p1 + [0.0, 0.2]
    state = make_ref_state([p0, p1], LMS, [0, 2], agent_vel=[[0.0, 0.0], [0.01, 0.0]])
    local, _ = reward_terms(builtin("reward_evo", REF), state, pe.all_observations(state), [0, 0])
    assert local[0] == pytest.approx(22.9, abs=1e-12)


def test_reward_evo_team_bonus_when_all_pairs_succeed():
    p1 = LMS[0] + [0.05, 0.0]
    p0 = LMS[2] + [0.0, 0.02]
    state = make_ref_state([p0, p1], LMS, [0, 2])
    _, team = reward_terms(builtin("reward_evo", REF), state, pe.all_observations(state), [0, 0])
    assert team == pytest.approx(-2 * 0.05 + 15 - 2 * 0.02 + 15 + 20.0, abs=1e-12)
    # move one partner out of range: the team bonus disappears
    far = make_ref_state([p0 + [0.5, 0.0], p1], LMS, [0, 2])
    _, team_far = reward_terms(builtin("reward_evo", REF), far, pe.all_observations(far), [0, 0])
    assert team_far < 20.0


def test_oef_v0_landmark_distances():
    state = make_ref_state([[0.0, 0.0], [0.4, 0.4]], LMS, [0, 1])
    out = eval_oef(builtin("oef_v0", REF), REF, pe.all_observations(state))
    np.testing.assert_allclose(out.global_info[0, :3], [0.5, 0.3, 0.9], atol=1e-15)
    assert out.global_info[0, 3] == pytest.approx(math.hypot(0.4, 0.4), abs=1e-12)


def test_oef_extra_lengths():
    state = pe.reset(REF, 3)
    obs = pe.all_observations(state)
    assert eval_oef(builtin("oef_v0", REF), REF, obs).extra_len == 4
    assert eval_oef(builtin("oef_evo", REF), REF, obs).extra_len == 9
    assert builtin("oef_v0", REF).extra_len == 4
    assert builtin("oef_evo", REF).extra_len == 9


@settings(max_examples=80, deadline=None)
@given(
    st.lists(st.floats(-1, 1), min_size=10, max_size=10),
    st.lists(st.integers(0, 2), min_size=2, max_size=2),
)
def test_oef_v0_partner_distance_identity(coords, targets):
    c = np.array(coords).reshape(5, 2)
    state = make_ref_state(c[:2], c[2:], targets)
    out = eval_oef(builtin("oef_v0", REF), REF, pe.all_observations(state)).global_info
    true = np.linalg.norm(c[0] - c[1])
    np.testing.assert_allclose(out[:, 3], [true, true], rtol=0, atol=1e-9)


def test_spread_branches_hand_values():
    # agent 0 sits 0.05 from a landmark at rest; agents far from each other
    state = make_spread_state(
        SPREAD2, [[0.05, 0.0], [0.9, 0.9]], [[0.0, 0.0], [-0.6, 0.8]]
    )
    obs = pe.all_observations(state)
    local, team = reward_terms(builtin("reward_v0", SPREAD2), state, obs, [0, 0])
    assert local[0] == pytest.approx(9.95, abs=1e-12)
    d1 = min(np.linalg.norm([0.9, 0.9]), np.linalg.norm([1.5, 0.1]))
    assert local[1] == pytest.approx(-d1, abs=1e-12)
    # landmark 0 covered by agent 0, landmark 1's nearest agent is agent 0 as well
    d_l1 = min(np.linalg.norm([0.65, -0.8]), np.linalg.norm([1.5, 0.1]))
    assert team == pytest.approx(-0.05 + 10.0 - d_l1, abs=1e-12)

    local, team = reward_terms(builtin("reward_evo", SPREAD2), state, obs, [0, 0])
    assert local[0] == pytest.approx(-0.1 + 15.0 + 5.0, abs=1e-12)
    assert team == pytest.approx(-0.1 + 15.0 - 2 * d_l1, abs=1e-12)


def test_spread_team_bonus_requires_every_landmark():
    state = make_spread_state(SPREAD2, [[0.05, 0.0], [-0.6, 0.75]], [[0.0, 0.0], [-0.6, 0.8]])
    _, team = reward_terms(builtin("reward_evo", SPREAD2), state, pe.all_observations(state), [0, 0])
    assert team == pytest.approx(-0.1 + 15 - 0.1 + 15 + 20.0, abs=1e-12)


@pytest.mark.parametrize("config", [REF, SPREAD, SPREAD2])
@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_builtins_valid_everywhere(name, config):
    cand = builtin_candidate(name, config)
    assert cand.valid
    assert cand.id == f"builtin:{name}"
    assert cand.kind is (Kind.HRF if name.startswith("reward") else Kind.OEF)


def test_reward_builtins_are_specs_with_half_alpha():
    spec = builtin("reward_evo", REF)
    assert isinstance(spec, HybridRewardSpec)
    np.testing.assert_array_equal(spec.alpha, [0.5, 0.5])
    assert spec.id == "builtin:reward_evo"


def test_unknown_builtin():
    with pytest.raises(KeyError):
        builtin_source("reward_v9")


# ---------------------------------------------------------------------------
# Blending
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("name", ["reward_v0", "reward_evo"])
def test_blend_is_affine_in_alpha(name):
    cand = builtin_candidate(name, REF)
    for state in GOLDEN[:10]:
        obs = pe.all_observations(state)
        at = {
            a: eval_hybrid_reward(HybridRewardSpec.make(cand, cand, a, 2), state, obs, [0, 0])
            for a in (0.0, 0.25, 0.5, 0.75, 1.0)
        }
        local, team = reward_terms(HybridRewardSpec.make(cand, cand, 1.0, 2), state, obs, [0, 0])
        np.testing.assert_array_equal(at[1.0], local)
        np.testing.assert_array_equal(at[0.0], [team, team])
        for a, got in at.items():
            np.testing.assert_allclose(got, a * at[1.0] + (1 - a) * at[0.0], rtol=0, atol=1e-12)


def test_blend_arithmetic_with_constant_terms():
    src = "fn local_reward(i) { return 2; } fn global_reward() { return 4; }"
    cand = validate(parse_candidate(src, Kind.HRF), REF)
    state = pe.reset(REF, 0)
    out = eval_hybrid_reward(HybridRewardSpec.make(cand, cand, 0.5, 2), state, pe.all_observations(state), [0, 0])
    np.testing.assert_array_equal(out, [3.0, 3.0])


def test_per_agent_alpha_and_split_candidates():
    local = validate(parse_candidate("fn local_reward(i) { return i + 1; } fn global_reward() { return 0; }", "hrf"), REF)
    team = validate(parse_candidate("fn local_reward(i) { return 0; } fn global_reward() { return 10; }", "hrf"), REF)
    spec = HybridRewardSpec.make(local, team, [1.0, 0.25])
    state = pe.reset(REF, 0)
    out = eval_hybrid_reward(spec, state, pe.all_observations(state), [0, 0])
    np.testing.assert_allclose(out, [1.0, 0.25 * 2 + 0.75 * 10], atol=1e-15)
    assert spec.id == f"{local.id}+{team.id}"


@pytest.mark.parametrize("alpha", [-0.1, 1.5, float("nan")])
def test_alpha_out_of_range_rejected(alpha):
    cand = builtin_candidate("reward_v0", REF)
    with pytest.raises(ValueError):
        HybridRewardSpec.make(cand, cand, alpha, 2)


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 1), st.integers(0, 10_000))
def test_blend_finite_whenever_terms_finite(alpha, seed):
    cand = builtin_candidate("reward_evo", REF)
    state = pe.reset(REF, seed)
    out = eval_hybrid_reward(HybridRewardSpec.make(cand, cand, alpha, 2), state, pe.all_observations(state), [3, 7])
    assert np.all(np.isfinite(out))


# ---------------------------------------------------------------------------
# Parsing and validation
# ---------------------------------------------------------------------------

HRF_OK = "fn local_reward(i) { return -norm(agent_pos(i)); } fn global_reward() { return 0; }"


def test_parse_well_formed_is_unvalidated():
    cand = parse_candidate(HRF_OK, Kind.HRF)
    assert cand.status is Status.UNVALIDATED
    assert cand.lineage == [] and cand.generation_index == 0


@pytest.mark.parametrize(
    "source,reason",
    [
        ("fn local_reward(i) { return 1; ", "syntax"),
        ("", "syntax"),
        ("fn local_reward(i) { return system(1); } fn global_reward() { return 0; }", "unknown symbol"),
        ("fn local_reward(i) { return 1; }", "missing entry point"),
        ("fn local_reward() { return 1; } fn global_reward() { return 0; }", "missing entry point"),
    ],
)
def test_parse_failures_encoded_in_status(source, reason):
    cand = parse_candidate(source, Kind.HRF)
    assert cand.status is Status.INVALID
    assert cand.reason == reason


@pytest.mark.parametrize("name", ["clock", "time", "getenv", "open", "read_file", "socket", "random"])
def test_sandbox_rejects_environment_access(name):
    src = f"fn local_reward(i) {{ return {name}(); }} fn global_reward() {{ return 0; }}"
    cand = validate(parse_candidate(src, Kind.HRF), REF)
    assert cand.status is Status.INVALID and cand.reason == "unknown symbol"


def test_oef_api_has_no_world_state():
    src = "fn enhance(i) { return agent_pos(i); }"
    assert parse_candidate(src, Kind.OEF).reason == "unknown symbol"


def test_validate_marks_valid_and_keeps_original():
    cand = parse_candidate(HRF_OK, Kind.HRF)
    out = validate(cand, REF)
    assert out.valid and cand.status is Status.UNVALIDATED


def test_shape_drift_detected():
    src = """
    fn enhance(i) {
        if norm(self_vel(obs(0))) + norm(self_vel(obs(1))) == 0 { return zeros(4); }
        return zeros(5);
    }
    """
    cand = validate(parse_candidate(src, Kind.OEF), REF)
    assert cand.status is Status.INVALID and cand.reason == "shape drift"
    assert PROBE_SEED_BASE < cand.failed_probe < PROBE_SEED_BASE + PROBE_COUNT


def test_per_agent_length_mismatch_is_shape_drift():
    cand = validate(parse_candidate("fn enhance(i) { return zeros(i + 1); }", Kind.OEF), REF)
    assert cand.reason == "shape drift" and cand.failed_probe == PROBE_SEED_BASE


def test_zero_norm_division_is_non_finite():
    src = "fn local_reward(i) { return 1 / norm(agent_vel(i)); } fn global_reward() { return 0; }"
    cand = validate(parse_candidate(src, Kind.HRF), REF)
    assert cand.status is Status.INVALID and cand.reason == "non-finite output"
    assert cand.failed_probe == PROBE_SEED_BASE
    oef = validate(parse_candidate("fn enhance(i) { return self_vel(obs(i)) / norm(self_vel(obs(i))); }", "oef"), REF)
    assert oef.reason == "non-finite output"


@pytest.mark.parametrize(
    "source,reason",
    [
        ("fn local_reward(i) { return agent_pos(i); } fn global_reward() { return 0; }", "type"),
        ("fn local_reward(i) { return 1; } fn global_reward() { return 1 > 0; }", "type"),
        (
            "fn local_reward(i) { let s = 0; for k in range(100000) { s += 1; } return s; }"
            " fn global_reward() { return 0; }",
            "budget",
        ),
        ("fn local_reward(i) { return agent_pos(7)[0]; } fn global_reward() { return 0; }", "index"),
        ("fn local_reward(i) { let x = 1; } fn global_reward() { return 0; }", "missing return"),
    ],
)
def test_runtime_failures_invalidate(source, reason):
    cand = validate(parse_candidate(source, Kind.HRF), SPREAD)
    assert cand.status is Status.INVALID and cand.reason == reason
    assert cand.failed_probe == PROBE_SEED_BASE


def test_budget_is_configurable():
    src = "fn local_reward(i) { let s = 0; for k in range(50) { s += 1; } return s; } fn global_reward() { return 0; }"
    assert validate(parse_candidate(src, Kind.HRF), REF).valid
    assert validate(parse_candidate(src, Kind.HRF), REF, budget=20).reason == "budget"


def test_runtime_fault_raised_during_evaluation():
    src = "fn local_reward(i) { return 1 / (step_index() - 3); } fn global_reward() { return 0; }"
    cand = parse_candidate(src, Kind.HRF)
    cand.status = Status.VALID
    spec = HybridRewardSpec.make(cand, cand, 0.5, 2)
    state = replace(pe.reset(REF, 0), step_index=3)
    with pytest.raises(CandidateRuntimeFault) as info:
        eval_hybrid_reward(spec, state, pe.all_observations(state), [0, 0])
    assert info.value.reason == "non-finite output"


def test_scalar_oef_output_becomes_one_column():
    cand = validate(parse_candidate("fn enhance(i) { return norm(self_vel(obs(i))); }", "oef"), SPREAD)
    assert cand.valid and cand.extra_len == 1


def test_declared_extra_len_is_enforced_at_runtime():
    src = "fn enhance(i) { if history_len() > 1 { return zeros(3); } return zeros(2); }"
    cand = validate(parse_candidate(src, "oef"), REF)
    assert cand.valid and cand.extra_len == 2
    history = ObservationHistory(2, depth=2)
    obs = pe.all_observations(pe.reset(REF, 0))
    history.push(obs)
    history.push(obs)
    with pytest.raises(CandidateRuntimeFault) as info:
        eval_oef(cand, REF, obs, history)
    assert info.value.reason == "shape drift"


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_builtins_are_deterministic(name):
    cand = builtin_candidate(name, REF)
    for state in GOLDEN[:5]:
        obs = pe.all_observations(state)
        if cand.kind is Kind.HRF:
            spec = HybridRewardSpec.make(cand, cand, 0.5, 2)
            a = eval_hybrid_reward(spec, state, obs, [1, 2])
            b = eval_hybrid_reward(spec, state, obs, [1, 2])
        else:
            a = eval_oef(cand, REF, obs).global_info
            b = eval_oef(cand, REF, obs).global_info
        assert a.tobytes() == b.tobytes()


def test_record_round_trip(tmp_path):
    cand = parse_candidate(HRF_OK, Kind.HRF, id="g1-hrf-0", lineage=["g0-hrf-1"], generation_index=1)
    path = tmp_path / "c.json"
    save_record(cand, path)
    back = load_record(path)
    assert back.to_record() == cand.to_record()
    assert set(cand.to_record()) == {"id", "kind", "generation", "lineage", "source"}


# ---------------------------------------------------------------------------
# History
# ---------------------------------------------------------------------------


def test_history_ring_buffer_evicts_oldest():
    h = ObservationHistory(2, depth=3)
    for t in range(5):
        h.push(np.full((2, 4), float(t)))
    assert len(h) == 3
    assert h.get(0, 0)[0] == 4.0
    assert h.get(1, 2)[0] == 2.0
    # lags past the stored depth repeat the oldest entry
    assert h.get(0, 7)[0] == 2.0
    h.clear()
    assert len(h) == 0


@pytest.mark.parametrize("depth", [0, 9])
def test_history_depth_bounds(depth):
    with pytest.raises(ValueError):
        ObservationHistory(2, depth)


def test_oef_reads_history():
    src = "fn enhance(i) { return self_vel(obs(i)) - self_vel(history(i, 1)); }"
    cand = validate(parse_candidate(src, "oef"), REF, history_depth=2)
    assert cand.valid and cand.extra_len == 2
    states = pe.rollout(REF, 0, [[1, 3], [1, 3]])
    history = ObservationHistory(2, depth=2)
    for s in states[1:]:
        history.push(pe.all_observations(s))
    obs = pe.all_observations(states[-1])
    out = enhance_observations(cand, REF, obs, history)
    assert out.shape == (2, REF.obs_len + 2)
    np.testing.assert_array_equal(out[:, : REF.obs_len], obs)
    want = obs[:, 0:2] - pe.all_observations(states[1])[:, 0:2]
    np.testing.assert_allclose(out[:, REF.obs_len :], want, atol=1e-15)


def test_enhance_observations_identity_without_candidate():
    obs = pe.all_observations(pe.reset(SPREAD, 0))
    assert enhance_observations(None, SPREAD, obs) is obs
