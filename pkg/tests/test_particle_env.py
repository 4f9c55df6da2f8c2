from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lero import particle_env as pe

SPREAD = pe.ScenarioConfig.make("spread")
REFERENCE = pe.ScenarioConfig.make("reference")


def brute_force_coverage(states) -> float:
    covered = 0
    m = len(states[0].landmarks)
    for s in states:
        for lm in s.landmarks:
            hit = False
            for a in s.agents:
                dx = a.position[0] - lm.position[0]
                dy = a.position[1] - lm.position[1]
                if (dx * dx + dy * dy) ** 0.5 < pe.COVERAGE_RADIUS:
                    hit = True
            covered += hit
    return covered / (m * len(states))


def random_episode(config, seed, steps=25):
    rng = np.random.default_rng(seed)
    actions = rng.integers(0, config.n_actions, size=(steps, config.n_agents))
    return pe.rollout(config, seed, actions)[1:]


def place(state, agent_positions, landmark_positions=None):
    agents = tuple(replace(a, position=np.asarray(p, float)) for a, p in zip(state.agents, agent_positions))
    landmarks = state.landmarks
    if landmark_positions is not None:
        landmarks = tuple(replace(l, position=np.asarray(p, float)) for l, p in zip(landmarks, landmark_positions))
    return replace(state, agents=agents, landmarks=landmarks)


def test_reset_spread_sizes():
    s = pe.reset("spread", 42)
    assert len(s.agents) == 3 and len(s.landmarks) == 3
    assert s.step_index == 0
    for a in s.agents:
        assert a.goal_partner_index is None and a.goal_landmark_index is None
        assert not a.comm_channel.any()


def test_reset_is_deterministic():
    assert pe.reset("reference", 7).same_as(pe.reset("reference", 7))
    assert not pe.reset("reference", 7).same_as(pe.reset("reference", 8))


@pytest.mark.parametrize("seed", range(20))
def test_reference_goals(seed):
    s = pe.reset("reference", seed)
    assert [a.goal_partner_index for a in s.agents] == [1, 0]
    for a in s.agents:
        assert 0 <= a.goal_landmark_index < 3
    for lm, color in zip(s.landmarks, pe.REFERENCE_COLORS):
        assert np.array_equal(lm.color, color)


def test_reset_accepts_64_bit_seed():
    s = pe.reset("spread", 2**64 - 1)
    assert np.all(np.abs(s.agent_positions()) <= 1.0)


def test_step_analytic_velocity_and_position():
    s = pe.reset("spread", 0)
    s = replace(s, agents=(replace(s.agents[0], velocity=np.array([1.0, 0.0])),) + s.agents[1:])
    nxt, _, _ = pe.step(s, [0, 0, 0])
    assert np.allclose(nxt.agents[0].velocity, [0.75, 0.0], atol=1e-15)
    assert np.allclose(nxt.agents[0].position - s.agents[0].position, [0.075, 0.0], atol=1e-15)
    assert nxt.step_index == 1


def test_step_force_direction():
    s = pe.reset("spread", 1)
    nxt, _, _ = pe.step(s, [1, 2, 3])
    assert np.allclose(nxt.agents[0].velocity, [0.1, 0.0])
    assert np.allclose(nxt.agents[1].velocity, [-0.1, 0.0])
    assert np.allclose(nxt.agents[2].velocity, [0.0, 0.1])


def test_done_at_horizon():
    s = replace(pe.reset("spread", 0), step_index=24)
    _, _, done = pe.step(s, [0, 0, 0])
    assert done
    _, _, done = pe.step(replace(s, step_index=23), [0, 0, 0])
    assert not done


def test_step_does_not_mutate_and_is_deterministic():
    s = pe.reset("reference", 3)
    before = pe.reset("reference", 3)
    a, _, _ = pe.step(s, [17, 32])
    b, _, _ = pe.step(s, [17, 32])
    assert a.same_as(b)
    assert s.same_as(before)


def test_out_of_range_action_names_agent():
    s = pe.reset("spread", 0)
    with pytest.raises(pe.OutOfRangeAction) as err:
        pe.step(s, [0, 5, 0])
    assert err.value.agent_index == 1
    with pytest.raises(pe.OutOfRangeAction):
        pe.step(pe.reset("reference", 0), [50, 0])


def test_reference_comm_is_partner_symbol():
    s = pe.reset("reference", 0)
    # agent 0 sends symbol 7 (action 7*5 + move), agent 1 sends symbol 2
    nxt, _, _ = pe.step(s, [7 * 5 + 1, 2 * 5 + 0])
    assert np.argmax(nxt.agents[0].comm_channel) == 2
    assert np.argmax(nxt.agents[1].comm_channel) == 7
    assert nxt.agents[0].comm_channel.sum() == 1.0


def test_decode_action():
    assert pe.decode_action(REFERENCE, 49) == (4, 9)
    assert pe.decode_action(REFERENCE, 12) == (2, 2)
    assert pe.decode_action(SPREAD, 3) == (3, 0)
    assert SPREAD.n_actions == 5 and REFERENCE.n_actions == 50


def test_observation_lengths():
    assert pe.native_observation(pe.reset("reference", 0), 0).shape == (21,)
    # oracle: self_vel + self_pos + landmarks + other agents
    assert pe.native_observation(pe.reset("spread", 0), 0).shape == (2 + 2 + 2 * 3 + 2 * 2,)
    small = pe.ScenarioConfig.make("spread", n_agents=2, n_landmarks=2)
    assert pe.native_observation(pe.reset(small, 0), 1).shape == (small.obs_len,) == (10,)


def test_reference_observation_layout():
    s = pe.reset("reference", 5)
    s = place(s, [[0, 0], [0.5, 0.5]], [[0.3, -0.4], [0.1, 0.2], [-0.5, 0.9]])
    o = pe.native_observation(s, 0)
    assert np.allclose(o[2:4], [0.3, -0.4])
    assert np.allclose(o[4:6], [0.1, 0.2])
    # goal colour is the colour of the landmark the partner must reach
    assert np.array_equal(o[8:11], pe.REFERENCE_COLORS[s.agents[0].goal_landmark_index])
    assert np.array_equal(o[11:21], s.agents[0].comm_channel)


def test_spread_observation_layout():
    s = place(pe.reset("spread", 5), [[0.1, 0.2], [0.4, 0.2], [0, -1]], [[1, 1], [0, 0], [-1, 0]])
    o = pe.native_observation(s, 0)
    assert np.allclose(o[2:4], [0.1, 0.2])
    assert np.allclose(o[4:10], [0.9, 0.8, -0.1, -0.2, -1.1, -0.2])
    assert np.allclose(o[10:14], [0.3, 0.0, -0.1, -1.2])


def test_spread_reward_zero_when_every_landmark_occupied():
    s = place(pe.reset("spread", 0), [[1, 1], [0, 0], [-1, 0]], [[1, 1], [0, 0], [-1, 0]])
    assert np.array_equal(pe.native_reward(s), np.zeros(3))


def test_spread_collision_penalty_once_per_pair():
    lms = [[5, 5], [6, 6], [7, 7]]
    far = place(pe.reset("spread", 0), [[0, 0], [1, 0], [-1, 0]], lms)
    near = place(pe.reset("spread", 0), [[0, 0], [0.2, 0], [-1, 0]], lms)
    lm = far.landmark_positions()
    base = -sum(min(np.linalg.norm(a - l) for a in near.agent_positions()) for l in lm)
    assert pe.native_reward(near)[0] == pytest.approx(base - 1.0)
    assert pe.count_collisions(near.agent_positions()) == 1
    assert pe.count_collisions(far.agent_positions()) == 0


def test_reference_reward_is_partner_distance():
    s = pe.reset("reference", 0)
    target0 = s.agents[0].goal_landmark_index
    lm = s.landmarks[target0].position
    s = place(s, [s.agents[0].position, lm + np.array([0.3, 0.4])])
    assert pe.native_reward(s)[0] == pytest.approx(-0.5)


def test_coverage_full_and_empty():
    s = place(pe.reset("spread", 0), [[1, 1], [0, 0], [-1, 0]], [[1, 1], [0, 0], [-1, 0]])
    assert pe.coverage_rate([s, s, s]) == 1.0
    with pytest.raises(pe.EmptyEpisode):
        pe.coverage_rate([])


def test_coverage_counts_landmark_once():
    s = place(pe.reset("spread", 0), [[0, 0], [0.05, 0], [3, 3]], [[0, 0], [1, 1], [-1, -1]])
    assert pe.coverage_rate([s]) == pytest.approx(1 / 3)


@pytest.mark.parametrize("seed", range(10))
def test_coverage_matches_brute_force_on_short_episodes(seed):
    states = random_episode(SPREAD, seed, steps=5)
    assert pe.coverage_rate(states) == brute_force_coverage(states)


def test_coverage_matches_brute_force_when_agents_sit_on_landmarks():
    s = pe.reset("spread", 11)
    lm = s.landmark_positions()
    s = place(s, [lm[0] + 0.05, lm[1] + [0, 0.099], lm[1]])
    states = [s] + pe.rollout(SPREAD, 0, [[0, 0, 0]] * 3)[1:]
    assert pe.coverage_rate(states) == brute_force_coverage(states)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**63), st.sampled_from(["spread", "reference"]))
def test_coverage_bounded(seed, kind):
    states = random_episode(pe.ScenarioConfig.make(kind), seed)
    assert 0.0 <= pe.coverage_rate(states) <= 1.0
    assert 0.0 <= pe.final_step_coverage(states) <= 1.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32), st.integers(0, 2))
def test_duplicating_an_agent_keeps_coverage(seed, who):
    states = random_episode(SPREAD, seed)
    dup_cfg = replace(SPREAD, n_agents=4)

    def dup(s):
        return replace(s, config=dup_cfg, agents=s.agents + (s.agents[who],))

    assert pe.coverage_rate([dup(s) for s in states]) == pe.coverage_rate(states)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32), st.floats(-0.05, 0.05), st.floats(-0.05, 0.05))
def test_spread_reward_continuity(seed, dx, dy):
    s = pe.reset("spread", seed)
    moved = place(s, [s.agents[0].position + [dx, dy], s.agents[1].position, s.agents[2].position])

    def distance_term(state):
        return pe.native_reward(state)[0] + pe.COLLISION_PENALTY * pe.count_collisions(state.agent_positions())

    eps = float(np.hypot(dx, dy))
    assert abs(distance_term(moved) - distance_term(s)) <= eps * 3 + 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**63))
def test_trajectory_determinism(seed):
    rng = np.random.default_rng(seed % 2**32)
    actions = rng.integers(0, 50, size=(25, 2))
    a = pe.rollout(REFERENCE, seed, actions)
    b = pe.rollout(REFERENCE, seed, actions)
    assert all(x.same_as(y) for x, y in zip(a, b))
    assert [s.step_index for s in a] == list(range(26))
    assert all(np.isfinite(s.agent_positions()).all() for s in a)


def test_trace_round_trip(tmp_path):
    actions = [[1, 2, 3]] * 4
    states = pe.rollout(SPREAD, 4, actions)[1:]
    rewards = [pe.native_reward(s) for s in states]
    path = tmp_path / "trace.jsonl"
    pe.write_trace(path, states, actions, rewards)
    rows = pe.read_trace(path)
    assert [r["t"] for r in rows] == [1, 2, 3, 4]
    assert rows[0]["actions"] == [1, 2, 3]
    for row, s in zip(rows, states):
        mask = pe.covered_landmarks(s)
        assert row["covered_mask"] == sum(1 << k for k in range(3) if mask[k])
        assert np.allclose(row["positions"], s.agent_positions())
