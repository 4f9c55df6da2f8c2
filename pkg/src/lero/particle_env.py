"""Deterministic 2D particle world with the spread and reference scenarios.

States are plain values: :func:`step` never mutates its input and always
returns a fresh :class:`WorldState`. All randomness happens in :func:`reset`.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

DT = 0.1
DAMPING = 0.25
MASS = 1.0
FORCE = 1.0
HORIZON = 25
COVERAGE_RADIUS = 0.1
COLLISION_RADIUS = 0.3
COLLISION_PENALTY = 1.0
COMM_DIM = 10
NUM_MOVES = 5

# noop, +x, -x, +y, -y
MOVE_VECTORS = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])

REFERENCE_COLORS = np.array(
    [[0.75, 0.25, 0.25], [0.25, 0.75, 0.25], [0.25, 0.25, 0.75]]
)
SPREAD_COLOR = np.array([0.25, 0.25, 0.25])


class Scenario(str, enum.Enum):
    SPREAD = "spread"
    REFERENCE = "reference"


class OutOfRangeAction(ValueError):
    def __init__(self, agent_index: int, action: int, n_actions: int):
        super().__init__(
            f"agent {agent_index}: action {action} outside [0, {n_actions})"
        )
        self.agent_index = agent_index


class EmptyEpisode(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    """Scenario kind plus the sizes that may be overridden for small runs."""

    kind: Scenario
    n_agents: int
    n_landmarks: int = 3
    horizon: int = HORIZON

    @classmethod
    def make(
        cls,
        kind: Scenario | str,
        n_agents: int | None = None,
        n_landmarks: int | None = None,
        horizon: int | None = None,
    ) -> "ScenarioConfig":
        kind = Scenario(kind)
        if n_agents is None:
            n_agents = 3 if kind is Scenario.SPREAD else 2
        if kind is Scenario.REFERENCE and n_agents != 2:
            raise ValueError("the reference scenario has exactly two agents")
        return cls(
            kind,
            n_agents,
            3 if n_landmarks is None else n_landmarks,
            HORIZON if horizon is None else horizon,
        )

    @property
    def n_actions(self) -> int:
        return NUM_MOVES * COMM_DIM if self.kind is Scenario.REFERENCE else NUM_MOVES

    @property
    def obs_len(self) -> int:
        m, n = self.n_landmarks, self.n_agents
        if self.kind is Scenario.REFERENCE:
            return 2 + 2 * m + 3 + COMM_DIM
        return 2 + 2 + 2 * m + 2 * (n - 1)


@dataclass(frozen=True)
class AgentState:
    position: np.ndarray
    velocity: np.ndarray
    goal_partner_index: int | None = None
    goal_landmark_index: int | None = None
    comm_channel: np.ndarray = field(default_factory=lambda: np.zeros(COMM_DIM))


@dataclass(frozen=True)
class LandmarkState:
    position: np.ndarray
    color: np.ndarray


@dataclass(frozen=True)
class WorldState:
    config: ScenarioConfig
    step_index: int
    agents: tuple[AgentState, ...]
    landmarks: tuple[LandmarkState, ...]
    rng_state: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def scenario(self) -> Scenario:
        return self.config.kind

    def agent_positions(self) -> np.ndarray:
        return np.array([a.position for a in self.agents])

    def landmark_positions(self) -> np.ndarray:
        return np.array([lm.position for lm in self.landmarks])

    def same_as(self, other: "WorldState") -> bool:
        """Bitwise equality of every numeric field."""
        if self.step_index != other.step_index or self.config != other.config:
            return False
        for a, b in zip(self.agents, other.agents):
            if (
                a.goal_partner_index != b.goal_partner_index
                or a.goal_landmark_index != b.goal_landmark_index
            ):
                return False
            for x, y in ((a.position, b.position), (a.velocity, b.velocity),
                         (a.comm_channel, b.comm_channel)):
                if x.tobytes() != y.tobytes():
                    return False
        return all(
            a.position.tobytes() == b.position.tobytes()
            and a.color.tobytes() == b.color.tobytes()
            for a, b in zip(self.landmarks, other.landmarks)
        )


def reset(scenario: ScenarioConfig | Scenario | str, seed: int) -> WorldState:
    """Sample a fresh episode; agents and landmarks uniform in [-1, 1]^2."""
    cfg = scenario if isinstance(scenario, ScenarioConfig) else ScenarioConfig.make(scenario)
    rng = np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF)
    n, m = cfg.n_agents, cfg.n_landmarks
    agent_pos = rng.uniform(-1.0, 1.0, size=(n, 2))
    landmark_pos = rng.uniform(-1.0, 1.0, size=(m, 2))

    if cfg.kind is Scenario.REFERENCE:
        targets = rng.integers(0, m, size=n)
        # agent i guides its partner towards targets[i]
        agents = tuple(
            AgentState(
                agent_pos[i],
                np.zeros(2),
                goal_partner_index=1 - i,
                goal_landmark_index=int(targets[i]),
                comm_channel=np.zeros(COMM_DIM),
            )
            for i in range(n)
        )
        colors = [REFERENCE_COLORS[k % len(REFERENCE_COLORS)] for k in range(m)]
    else:
        agents = tuple(AgentState(agent_pos[i], np.zeros(2)) for i in range(n))
        colors = [SPREAD_COLOR] * m

    landmarks = tuple(
        LandmarkState(landmark_pos[k], np.array(colors[k], dtype=float)) for k in range(m)
    )
    return WorldState(cfg, 0, agents, landmarks, rng.bit_generator.state)


def decode_action(config: ScenarioConfig, action: int) -> tuple[int, int]:
    """Split a flat action index into (move, comm symbol)."""
    if config.kind is Scenario.REFERENCE:
        return action % NUM_MOVES, action // NUM_MOVES
    return action, 0


def step(
    state: WorldState, actions: Sequence[int]
) -> tuple[WorldState, np.ndarray, bool]:
    cfg = state.config
    if len(actions) != cfg.n_agents:
        raise ValueError(f"expected {cfg.n_agents} actions, got {len(actions)}")
    decoded = []
    for i, a in enumerate(actions):
        a = int(a)
        if not 0 <= a < cfg.n_actions:
            raise OutOfRangeAction(i, a, cfg.n_actions)
        decoded.append(decode_action(cfg, a))

    new_agents = []
    for i, agent in enumerate(state.agents):
        force = MOVE_VECTORS[decoded[i][0]] * FORCE
        vel = agent.velocity * (1.0 - DAMPING) + force * DT / MASS
        pos = agent.position + vel * DT
        comm = np.zeros(COMM_DIM)
        if cfg.kind is Scenario.REFERENCE:
            comm[decoded[agent.goal_partner_index][1]] = 1.0
        new_agents.append(replace(agent, position=pos, velocity=vel, comm_channel=comm))

    new_state = replace(state, step_index=state.step_index + 1, agents=tuple(new_agents))
    rewards = native_reward(new_state)
    return new_state, rewards, new_state.step_index >= cfg.horizon


def native_observation(state: WorldState, agent_index: int) -> np.ndarray:
    """Native observation vector of one agent.

    Reference layout: ``[self_vel, landmark_rel * M, goal_color, comm]``
    (21 values for M = 3). Spread layout: ``[self_vel, self_pos,
    landmark_rel * M, other_agent_rel * (N - 1)]``.
    """
    agent = state.agents[agent_index]
    landmark_rel = [lm.position - agent.position for lm in state.landmarks]
    if state.scenario is Scenario.REFERENCE:
        goal_color = state.landmarks[agent.goal_landmark_index].color
        parts = [agent.velocity, *landmark_rel, goal_color, agent.comm_channel]
    else:
        others = [
            other.position - agent.position
            for j, other in enumerate(state.agents)
            if j != agent_index
        ]
        parts = [agent.velocity, agent.position, *landmark_rel, *others]
    return np.concatenate(parts)


def all_observations(state: WorldState) -> np.ndarray:
    return np.stack([native_observation(state, i) for i in range(state.config.n_agents)])


def native_reward(state: WorldState) -> np.ndarray:
    cfg = state.config
    agent_pos = state.agent_positions()
    if cfg.kind is Scenario.REFERENCE:
        return np.array(
            [
                -float(
                    np.linalg.norm(
                        state.agents[a.goal_partner_index].position
                        - state.landmarks[a.goal_landmark_index].position
                    )
                )
                for a in state.agents
            ]
        )
    landmark_pos = state.landmark_positions()
    dists = np.linalg.norm(agent_pos[:, None, :] - landmark_pos[None, :, :], axis=-1)
    shared = -float(dists.min(axis=0).sum())
    shared -= COLLISION_PENALTY * count_collisions(agent_pos)
    return np.full(cfg.n_agents, shared)


def count_collisions(agent_pos: np.ndarray) -> int:
    n = len(agent_pos)
    hits = 0
    for i in range(n):
        for j in range(i + 1, n):
            if np.linalg.norm(agent_pos[i] - agent_pos[j]) < COLLISION_RADIUS:
                hits += 1
    return hits


def covered_landmarks(state: WorldState) -> np.ndarray:
    """Boolean mask over landmarks; a landmark counts once however many agents sit on it."""
    d = np.linalg.norm(
        state.agent_positions()[:, None, :] - state.landmark_positions()[None, :, :],
        axis=-1,
    )
    return (d < COVERAGE_RADIUS).any(axis=0)


def coverage_rate(episode_states: Sequence[WorldState]) -> float:
    """Time-averaged fraction of covered (landmark, timestep) pairs."""
    if len(episode_states) == 0:
        raise EmptyEpisode("coverage_rate needs at least one state")
    covered = sum(int(covered_landmarks(s).sum()) for s in episode_states)
    m = episode_states[0].config.n_landmarks
    return covered / (m * len(episode_states))


def final_step_coverage(episode_states: Sequence[WorldState]) -> float:
    if len(episode_states) == 0:
        raise EmptyEpisode("final_step_coverage needs at least one state")
    last = episode_states[-1]
    return float(covered_landmarks(last).sum()) / last.config.n_landmarks


def trace_record(
    state: WorldState,
    actions: Sequence[int] | None = None,
    rewards: Iterable[float] | None = None,
) -> dict:
    mask = covered_landmarks(state)
    return {
        "t": state.step_index,
        "positions": state.agent_positions().tolist(),
        "velocities": [a.velocity.tolist() for a in state.agents],
        "actions": None if actions is None else [int(a) for a in actions],
        "rewards": None if rewards is None else [float(r) for r in rewards],
        "covered_mask": int(sum(1 << k for k, c in enumerate(mask) if c)),
    }


def write_trace(
    path: str | Path | IO[str],
    states: Sequence[WorldState],
    actions: Sequence[Sequence[int] | None] | None = None,
    rewards: Sequence[Iterable[float] | None] | None = None,
) -> None:
    """Episode trace as JSONL, one object per timestep."""
    actions = actions or [None] * len(states)
    rewards = rewards or [None] * len(states)
    lines = [
        json.dumps(trace_record(s, a, r), sort_keys=True)
        for s, a, r in zip(states, actions, rewards)
    ]
    text = "\n".join(lines) + "\n"
    if hasattr(path, "write"):
        path.write(text)
    else:
        Path(path).write_text(text)


def read_trace(path: str | Path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line]


def rollout(
    config: ScenarioConfig, seed: int, actions: Sequence[Sequence[int]]
) -> list[WorldState]:
    """Reset then apply a fixed action sequence; returns every state including the initial one."""
    state = reset(config, seed)
    states = [state]
    for a in actions:
        state, _, _ = step(state, a)
        states.append(state)
    return states
