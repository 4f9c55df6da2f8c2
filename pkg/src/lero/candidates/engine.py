"""Generated reward / observation-enhancement candidates and their execution.

A hybrid reward candidate (kind ``hrf``) defines two entry points::

    fn local_reward(i) { ... }   // per-agent term, one scalar for agent i
    fn global_reward() { ... }   // team term, one scalar

An observation-enhancement candidate (kind ``oef``) defines::

    fn enhance(i) { ... }        // extra features for agent i, one vector

Host functions visible to scripts (indices are plain numbers):

=====================  ====  ===  ===========================================
name                   hrf   oef  returns
=====================  ====  ===  ===========================================
num_agents()           yes   yes  number of agents
num_landmarks()        yes   yes  number of landmarks
obs(j)                 yes   yes  native observation vector of agent j
landmark_rel(o, k)     yes   yes  slot of landmark k in observation ``o``
self_vel(o)            yes   yes  velocity slot of ``o``
self_pos(o)            yes   yes  position slot (spread only, zeros otherwise)
other_rel(o, j)        yes   yes  j-th other-agent slot (spread only)
goal_color(o)          yes   yes  goal colour slot (reference, zeros otherwise)
comm_channel(o)        yes   yes  communication slot (reference, zeros otherwise)
history(j, lag)        no    yes  observation of agent j ``lag`` steps ago
history_len()          no    yes  number of stored observations per agent
step_index()           yes   no   current timestep
agent_pos(j)           yes   no   world position of agent j
agent_vel(j)           yes   no   world velocity of agent j
landmark_pos(k)        yes   no   world position of landmark k
landmark_color(k)      yes   no   RGB colour of landmark k
goal_partner(j)        yes   no   agent guided by j, or -1
goal_landmark(j)       yes   no   landmark j's partner must reach, or -1
move(j), comm(j)       yes   no   decoded action of agent j
=====================  ====  ===  ===========================================
"""

from __future__ import annotations

import enum
import hashlib
import json
from collections import deque
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from lero import particle_env as pe
from lero.candidates.script import DEFAULT_BUDGET, Program, RuntimeFault, ScriptError

PROBE_COUNT = 16
PROBE_SEED_BASE = 90_210
MAX_HISTORY = 8
BUILTIN_VERSION = 1


class Kind(str, enum.Enum):
    HRF = "hrf"
    OEF = "oef"


class Status(str, enum.Enum):
    UNVALIDATED = "unvalidated"
    VALID = "valid"
    INVALID = "invalid"


ENTRY_POINTS = {
    Kind.HRF: {"local_reward": 1, "global_reward": 0},
    Kind.OEF: {"enhance": 1},
}

_OBS_API = {
    "num_agents": 0, "num_landmarks": 0, "obs": 1, "landmark_rel": 2,
    "self_vel": 1, "self_pos": 1, "other_rel": 2, "goal_color": 1,
    "comm_channel": 1,
}
API_ARITY = {
    Kind.HRF: {
        **_OBS_API, "step_index": 0, "agent_pos": 1, "agent_vel": 1,
        "landmark_pos": 1, "landmark_color": 1, "goal_partner": 1,
        "goal_landmark": 1, "move": 1, "comm": 1,
    },
    Kind.OEF: {**_OBS_API, "history": 2, "history_len": 0},
}


class CandidateRuntimeFault(RuntimeError):
    def __init__(self, candidate_id: str, reason: str, detail: str = ""):
        super().__init__(f"candidate {candidate_id}: {reason} {detail}".strip())
        self.candidate_id = candidate_id
        self.reason = reason


@dataclass
class Candidate:
    id: str
    kind: Kind
    source: str
    lineage: list[str] = field(default_factory=list)
    generation_index: int = 0
    status: Status = Status.UNVALIDATED
    reason: str | None = None
    failed_probe: int | None = None
    extra_len: int | None = None
    detail: str = ""
    program: Program | None = field(default=None, repr=False, compare=False)

    @property
    def valid(self) -> bool:
        return self.status is Status.VALID

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind.value,
            "generation": self.generation_index,
            "lineage": list(self.lineage),
            "source": self.source,
        }

    def summary(self) -> dict:
        return {
            **self.to_record(),
            "status": self.status.value,
            "reason": self.reason,
            "failed_probe": self.failed_probe,
            "extra_len": self.extra_len,
            "detail": self.detail,
        }


def parse_candidate(
    source: str,
    kind: Kind | str,
    *,
    id: str | None = None,
    lineage: Sequence[str] = (),
    generation_index: int = 0,
) -> Candidate:
    """Parse and statically check a script. Problems land in ``status``, never raised."""
    kind = Kind(kind)
    cid = id or f"{kind.value}-{hashlib.sha1(source.encode()).hexdigest()[:10]}"
    cand = Candidate(cid, kind, source, list(lineage), generation_index)
    if not source.strip():
        return _invalid(cand, "syntax", None)
    try:
        program = Program(source, API_ARITY[kind])
    except ScriptError as exc:
        return _invalid(cand, exc.category, None, detail=str(exc))
    for name, arity in ENTRY_POINTS[kind].items():
        if program.arity.get(name) != arity:
            return _invalid(cand, "missing entry point", None, detail=f"{name}/{arity}")
    cand.program = program
    return cand


def from_record(record: dict) -> Candidate:
    return parse_candidate(
        record["source"],
        record["kind"],
        id=record["id"],
        lineage=record.get("lineage", []),
        generation_index=record.get("generation", 0),
    )


def save_record(candidate: Candidate, path: str | Path) -> None:
    Path(path).write_text(json.dumps(candidate.to_record(), indent=2, sort_keys=True) + "\n")


def load_record(path: str | Path) -> Candidate:
    return from_record(json.loads(Path(path).read_text()))


def _invalid(
    cand: Candidate, reason: str, probe: int | None, detail: str = ""
) -> Candidate:
    cand.status = Status.INVALID
    cand.reason = reason
    cand.failed_probe = probe
    cand.detail = detail
    return cand


# ---------------------------------------------------------------------------
# Host API
# ---------------------------------------------------------------------------


class ObservationHistory:
    """Per-agent ring buffers of the last ``depth`` native observations."""

    def __init__(self, n_agents: int, depth: int = 1):
        if not 1 <= depth <= MAX_HISTORY:
            raise ValueError(f"history depth must be in [1, {MAX_HISTORY}]")
        self.depth = depth
        self.buffers: list[deque] = [deque(maxlen=depth) for _ in range(n_agents)]

    def push(self, all_obs: np.ndarray) -> None:
        for buf, o in zip(self.buffers, all_obs):
            buf.append(np.array(o, dtype=float))

    def clear(self) -> None:
        for buf in self.buffers:
            buf.clear()

    def __len__(self) -> int:
        return len(self.buffers[0]) if self.buffers else 0

    def get(self, agent: int, lag: int) -> np.ndarray:
        buf = self.buffers[agent]
        if not buf:
            raise RuntimeFault("history", "history is empty")
        # lags beyond what is stored repeat the oldest entry
        return buf[max(len(buf) - 1 - lag, 0)]


def _layout_api(config: pe.ScenarioConfig) -> dict[str, Callable]:
    n, m = config.n_agents, config.n_landmarks
    ref = config.kind is pe.Scenario.REFERENCE
    obs_len = config.obs_len
    lm_start = 2 if ref else 4

    def check(o: Any) -> np.ndarray:
        if not isinstance(o, np.ndarray) or len(o) != obs_len:
            raise RuntimeFault("type", f"expected an observation vector of length {obs_len}")
        return o

    def k_index(k: Any, limit: int, what: str) -> int:
        kk = float(k)
        if kk != int(kk) or not 0 <= kk < limit:
            raise RuntimeFault("index", f"{what} index {k} outside [0, {limit})")
        return int(kk)

    def landmark_rel(o: Any, k: Any) -> np.ndarray:
        k = k_index(k, m, "landmark")
        return check(o)[lm_start + 2 * k : lm_start + 2 * k + 2].copy()

    def other_rel(o: Any, j: Any) -> np.ndarray:
        if ref:
            return np.zeros(2)
        j = k_index(j, n - 1, "other agent")
        s = 4 + 2 * m + 2 * j
        return check(o)[s : s + 2].copy()

    def slot(start: int, width: int, present: bool) -> Callable:
        def get(o: Any) -> np.ndarray:
            o = check(o)
            return o[start : start + width].copy() if present else np.zeros(width)

        return get

    return {
        "num_agents": lambda: float(n),
        "num_landmarks": lambda: float(m),
        "landmark_rel": landmark_rel,
        "other_rel": other_rel,
        "self_vel": slot(0, 2, True),
        "self_pos": slot(2, 2, not ref),
        "goal_color": slot(2 + 2 * m, 3, ref),
        "comm_channel": slot(2 + 2 * m + 3, pe.COMM_DIM, ref),
    }


def _agent_index(j: Any, n: int) -> int:
    jj = float(j)
    if jj != int(jj) or not 0 <= jj < n:
        raise RuntimeFault("index", f"agent index {j} outside [0, {n})")
    return int(jj)


def hrf_api(
    state: pe.WorldState, all_obs: np.ndarray, actions: Sequence[int]
) -> dict[str, Callable]:
    cfg = state.config
    n, m = cfg.n_agents, cfg.n_landmarks
    decoded = [pe.decode_action(cfg, int(a)) for a in actions]

    def landmark(k: Any) -> pe.LandmarkState:
        return state.landmarks[_agent_index(k, m)]

    def agent(j: Any) -> pe.AgentState:
        return state.agents[_agent_index(j, n)]

    def goal(value: int | None) -> float:
        return -1.0 if value is None else float(value)

    api = _layout_api(cfg)
    api.update(
        obs=lambda j: all_obs[_agent_index(j, n)].copy(),
        step_index=lambda: float(state.step_index),
        agent_pos=lambda j: agent(j).position.copy(),
        agent_vel=lambda j: agent(j).velocity.copy(),
        landmark_pos=lambda k: landmark(k).position.copy(),
        landmark_color=lambda k: landmark(k).color.copy(),
        goal_partner=lambda j: goal(agent(j).goal_partner_index),
        goal_landmark=lambda j: goal(agent(j).goal_landmark_index),
        move=lambda j: float(decoded[_agent_index(j, n)][0]),
        comm=lambda j: float(decoded[_agent_index(j, n)][1]),
    )
    return api


def oef_api(
    config: pe.ScenarioConfig, all_obs: np.ndarray, history: ObservationHistory | None
) -> dict[str, Callable]:
    n = config.n_agents
    api = _layout_api(config)

    def hist(j: Any, lag: Any) -> np.ndarray:
        j = _agent_index(j, n)
        lag_f = float(lag)
        if lag_f != int(lag_f) or lag_f < 0:
            raise RuntimeFault("index", f"history lag {lag} must be a non-negative integer")
        if history is None or len(history) == 0:
            return all_obs[j].copy()
        return history.get(j, int(lag_f)).copy()

    api.update(
        obs=lambda j: all_obs[_agent_index(j, n)].copy(),
        history=hist,
        history_len=lambda: float(len(history) if history is not None else 1),
    )
    return api


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HybridRewardSpec:
    """R_i = alpha_i * local(o_i, S, a_i) + (1 - alpha_i) * global(S, a)."""

    local_fn: Candidate
    global_fn: Candidate
    alpha: np.ndarray

    @classmethod
    def from_candidate(
        cls, candidate: Candidate, alpha: float | Sequence[float] = 0.5, n_agents: int | None = None
    ) -> "HybridRewardSpec":
        return cls.make(candidate, candidate, alpha, n_agents)

    @classmethod
    def make(
        cls,
        local_fn: Candidate,
        global_fn: Candidate,
        alpha: float | Sequence[float] = 0.5,
        n_agents: int | None = None,
    ) -> "HybridRewardSpec":
        a = np.atleast_1d(np.asarray(alpha, dtype=float))
        if n_agents is not None and a.size == 1:
            a = np.full(n_agents, float(a[0]))
        if np.any(a < 0) or np.any(a > 1) or not np.all(np.isfinite(a)):
            raise ValueError(f"alpha must lie in [0, 1], got {a}")
        return cls(local_fn, global_fn, a)

    @property
    def id(self) -> str:
        if self.local_fn.id == self.global_fn.id:
            return self.local_fn.id
        return f"{self.local_fn.id}+{self.global_fn.id}"


def _run(
    candidate: Candidate, entry: str, args: tuple, api: dict, budget: int
) -> Any:
    if candidate.program is None:
        raise CandidateRuntimeFault(candidate.id, "not executable", candidate.reason or "")
    try:
        return candidate.program.call(entry, args, api, budget)
    except RuntimeFault as exc:
        raise CandidateRuntimeFault(candidate.id, exc.reason, str(exc)) from exc


def _finite_scalar(candidate: Candidate, value: Any, what: str) -> float:
    if isinstance(value, (bool, np.bool_, np.ndarray)):
        raise CandidateRuntimeFault(candidate.id, "type", f"{what} must return a number")
    v = float(value)
    if not np.isfinite(v):
        raise CandidateRuntimeFault(candidate.id, "non-finite output", what)
    return v


def reward_terms(
    spec: HybridRewardSpec,
    state: pe.WorldState,
    obs: np.ndarray,
    actions: Sequence[int],
    budget: int = DEFAULT_BUDGET,
) -> tuple[np.ndarray, float]:
    """Per-agent local terms and the team term, each checked for finiteness."""
    api = hrf_api(state, obs, actions)
    n = state.config.n_agents
    local = np.array(
        [
            _finite_scalar(
                spec.local_fn, _run(spec.local_fn, "local_reward", (float(i),), api, budget),
                "local_reward",
            )
            for i in range(n)
        ]
    )
    team = _finite_scalar(
        spec.global_fn, _run(spec.global_fn, "global_reward", (), api, budget), "global_reward"
    )
    return local, team


def blend(alpha: np.ndarray, local: np.ndarray, team: float) -> np.ndarray:
    return alpha * local + (1.0 - alpha) * team


def eval_hybrid_reward(
    spec: HybridRewardSpec,
    state: pe.WorldState,
    obs: np.ndarray,
    actions: Sequence[int],
    budget: int = DEFAULT_BUDGET,
) -> np.ndarray:
    local, team = reward_terms(spec, state, obs, actions, budget)
    alpha = spec.alpha if spec.alpha.size == len(local) else np.full(len(local), spec.alpha[0])
    return blend(alpha, local, team)


@dataclass(frozen=True)
class EnhancementOutput:
    global_info: np.ndarray
    extra_len: int


def eval_oef(
    candidate: Candidate,
    config: pe.ScenarioConfig,
    all_obs: np.ndarray,
    history: ObservationHistory | None = None,
    budget: int = DEFAULT_BUDGET,
) -> EnhancementOutput:
    api = oef_api(config, np.asarray(all_obs, dtype=float), history)
    rows = []
    for i in range(config.n_agents):
        out = _run(candidate, "enhance", (float(i),), api, budget)
        if not isinstance(out, np.ndarray):
            out = np.array([_finite_scalar(candidate, out, "enhance")])
        rows.append(out)
    lengths = {len(r) for r in rows}
    if len(lengths) != 1:
        raise CandidateRuntimeFault(candidate.id, "shape drift", f"per-agent lengths {sorted(lengths)}")
    extra = lengths.pop()
    if candidate.extra_len is not None and extra != candidate.extra_len:
        raise CandidateRuntimeFault(
            candidate.id, "shape drift", f"extra_len {extra} != declared {candidate.extra_len}"
        )
    info = np.stack(rows) if extra else np.zeros((config.n_agents, 0))
    if not np.all(np.isfinite(info)):
        raise CandidateRuntimeFault(candidate.id, "non-finite output", "enhance")
    return EnhancementOutput(info, extra)


def enhance_observations(
    candidate: Candidate | None,
    config: pe.ScenarioConfig,
    all_obs: np.ndarray,
    history: ObservationHistory | None = None,
) -> np.ndarray:
    """o'_i = concat(o_i, OEF output_i); the identity when no candidate is given."""
    if candidate is None:
        return all_obs
    out = eval_oef(candidate, config, all_obs, history)
    return np.concatenate([all_obs, out.global_info], axis=1)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def probe_states(
    config: pe.ScenarioConfig, count: int = PROBE_COUNT, seed_base: int = PROBE_SEED_BASE
) -> list[tuple[int, list[pe.WorldState], list[np.ndarray]]]:
    """Seeded probe episodes: (seed, states so far, joint actions taken).

    Probe j advances ``j`` random joint actions from reset so that velocities
    and communication slots are exercised.
    """
    probes = []
    for j in range(count):
        seed = seed_base + j
        rng = np.random.default_rng(seed)
        state = pe.reset(config, seed)
        states = [state]
        actions = [rng.integers(0, config.n_actions, config.n_agents)]
        for _ in range(j):
            state, _, _ = pe.step(state, actions[-1])
            states.append(state)
            actions.append(rng.integers(0, config.n_actions, config.n_agents))
        probes.append((seed, states, actions))
    return probes


def _probe_output(
    candidate: Candidate,
    config: pe.ScenarioConfig,
    states: list[pe.WorldState],
    actions: list[np.ndarray],
    history_depth: int,
    budget: int,
) -> np.ndarray:
    state = states[-1]
    obs = pe.all_observations(state)
    if candidate.kind is Kind.HRF:
        spec = HybridRewardSpec.from_candidate(candidate, 0.5, config.n_agents)
        local, team = reward_terms(spec, state, obs, actions[-1], budget)
        return np.append(local, team)
    history = ObservationHistory(config.n_agents, history_depth)
    for s in states[-history_depth:]:
        history.push(pe.all_observations(s))
    return eval_oef(candidate, config, obs, history, budget).global_info


def validate(
    candidate: Candidate,
    scenario: pe.ScenarioConfig | pe.Scenario | str,
    *,
    budget: int = DEFAULT_BUDGET,
    history_depth: int = 1,
    probes: int = PROBE_COUNT,
) -> Candidate:
    """Run the candidate on seeded probe states; returns a copy with its status set."""
    config = scenario if isinstance(scenario, pe.ScenarioConfig) else pe.ScenarioConfig.make(scenario)
    cand = replace(candidate)
    if cand.status is Status.INVALID:
        return cand
    extra_len = None
    for seed, states, actions in probe_states(config, probes):
        try:
            first = _probe_output(cand, config, states, actions, history_depth, budget)
            second = _probe_output(cand, config, states, actions, history_depth, budget)
        except CandidateRuntimeFault as exc:
            return _invalid(cand, exc.reason, seed, detail=str(exc))
        if first.tobytes() != second.tobytes():
            return _invalid(cand, "nondeterministic", seed)
        if cand.kind is Kind.OEF:
            if extra_len is None:
                extra_len = first.shape[1]
            elif first.shape[1] != extra_len:
                return _invalid(cand, "shape drift", seed, f"{extra_len} then {first.shape[1]}")
    cand.status = Status.VALID
    cand.reason = None
    cand.failed_probe = None
    cand.detail = ""
    cand.extra_len = extra_len
    return cand


# ---------------------------------------------------------------------------
# Builtins
# ---------------------------------------------------------------------------

BUILTIN_NAMES = ("reward_v0", "reward_evo", "oef_v0", "oef_evo")


def builtin_path(name: str) -> Path:
    if name not in BUILTIN_NAMES:
        raise KeyError(f"unknown builtin {name!r}; choose from {BUILTIN_NAMES}")
    return Path(str(resources.files("lero.candidates") / "builtins" / f"{name}.v{BUILTIN_VERSION}.cscript"))


def builtin_source(name: str) -> str:
    return builtin_path(name).read_text()


@lru_cache(maxsize=None)
def _builtin_candidate(name: str, scenario: pe.ScenarioConfig) -> Candidate:
    kind = Kind.HRF if name.startswith("reward") else Kind.OEF
    cand = parse_candidate(builtin_source(name), kind, id=f"builtin:{name}")
    cand = validate(cand, scenario)
    if not cand.valid:
        raise RuntimeError(f"builtin {name} failed validation: {cand.reason}")
    return cand


def builtin(
    name: str,
    scenario: pe.ScenarioConfig | pe.Scenario | str = pe.Scenario.REFERENCE,
    alpha: float = 0.5,
) -> Candidate | HybridRewardSpec:
    """Reference candidates shipped with the package.

    Reward builtins come back as a :class:`HybridRewardSpec` with a uniform
    ``alpha``; observation builtins as a validated :class:`Candidate`.
    """
    config = scenario if isinstance(scenario, pe.ScenarioConfig) else pe.ScenarioConfig.make(scenario)
    cand = replace(_builtin_candidate(name, config))
    if cand.kind is Kind.HRF:
        return HybridRewardSpec.from_candidate(cand, alpha, config.n_agents)
    return cand


def builtin_candidate(
    name: str, scenario: pe.ScenarioConfig | pe.Scenario | str = pe.Scenario.REFERENCE
) -> Candidate:
    config = scenario if isinstance(scenario, pe.ScenarioConfig) else pe.ScenarioConfig.make(scenario)
    return replace(_builtin_candidate(name, config))


def git_blob_hash(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()
