"""Fitness evaluation of a (reward, observation) candidate pair by training agents."""

from __future__ import annotations

import enum
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from lero import particle_env as pe
from lero.candidates.engine import (
    Candidate,
    CandidateRuntimeFault,
    HybridRewardSpec,
    ObservationHistory,
    enhance_observations,
    eval_hybrid_reward,
    eval_oef,
)
from lero.marl.mappo import DegenerateBatch, MappoLearner, PPOConfig, ppo_update
from lero.marl.mlp import save_snapshot
from lero.marl.value import LearnerConfig, ReplayBuffer, ValueLearner

# evaluation episodes use seeds at or above this; training seeds stay below 2**32
EVAL_SEED_OFFSET = 2**40
CURVE_SEED_OFFSET = 2**41


class Algorithm(str, enum.Enum):
    VDN = "vdn"
    QMIX = "qmix"
    MAPPO = "mappo"


@dataclass(frozen=True)
class TrainerSpec:
    algorithm: Algorithm = Algorithm.VDN
    total_env_steps: int = 30_000
    eval_episodes: int = 50
    seed: int = 0
    lr: float = 1e-3
    batch_size: int = 64
    gamma: float = 0.95
    buffer_size: int = 50_000
    learning_starts: int = 500
    updates_per_step: int = 4
    target_update_interval: int = 200
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_fraction: float = 0.3
    clip_ratio: float = 0.2
    gae_lambda: float = 0.95
    ppo_epochs: int = 4
    rollout_steps: int = 500
    entropy_coef: float = 0.01
    hidden_sizes: tuple[int, ...] = (64, 64)
    max_grad_norm: float = 10.0
    double_q: bool = True
    history_depth: int = 1
    curve_points: int = 10
    curve_eval_episodes: int = 10

    def __post_init__(self) -> None:
        object.__setattr__(self, "algorithm", Algorithm(self.algorithm))
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.total_env_steps <= 0:
            raise ValueError("total_env_steps must be positive")
        if self.eval_episodes <= 0:
            raise ValueError("eval_episodes must be positive")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")

    def epsilon(self, step: int) -> float:
        span = max(int(self.eps_fraction * self.total_env_steps), 1)
        frac = min(step / span, 1.0)
        return self.eps_start + frac * (self.eps_end - self.eps_start)


@dataclass
class EvalReport:
    pair_id: str
    hrf_id: str | None
    oef_id: str | None
    algorithm: str
    seed: int
    coverage_rate: float = 0.0
    final_step_coverage: float = 0.0
    cumulative_native_reward: float = 0.0
    convergence_stat: int = 0
    wall_time: float = 0.0
    status: str = "ok"
    reason: str | None = None
    failed_step: int | None = None
    curve: list[dict] = field(default_factory=list, repr=False)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def metrics(self) -> dict:
        """Deterministic part of the report (no wall time, no curve)."""
        d = asdict(self)
        d.pop("wall_time")
        d.pop("curve")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})


class Policy(Protocol):
    def act(self, obs: np.ndarray) -> np.ndarray: ...


class GreedyPolicy:
    def __init__(self, learner: ValueLearner | MappoLearner):
        self.learner = learner

    def act(self, obs: np.ndarray) -> np.ndarray:
        return self.learner.greedy(obs)


class RandomPolicy:
    def __init__(self, n_actions: int, seed: int = 0):
        self.n_actions = n_actions
        self.rng = np.random.default_rng(seed)

    def act(self, obs: np.ndarray) -> np.ndarray:
        return self.rng.integers(0, self.n_actions, len(obs))


class ConstantPolicy:
    def __init__(self, action: int = 0):
        self.action = action

    def act(self, obs: np.ndarray) -> np.ndarray:
        return np.full(len(obs), self.action)


class ObservationPipeline:
    """Native observations, optionally extended by an enhancement candidate."""

    def __init__(self, config: pe.ScenarioConfig, oef: Candidate | None, history_depth: int = 1):
        self.config = config
        self.oef = oef
        self.history = ObservationHistory(config.n_agents, history_depth)

    @property
    def obs_dim(self) -> int:
        extra = self.oef.extra_len if self.oef is not None else 0
        if self.oef is not None and extra is None:
            state = pe.reset(self.config, 0)
            extra = eval_oef(self.oef, self.config, pe.all_observations(state)).extra_len
        return self.config.obs_len + (extra or 0)

    def reset(self) -> None:
        self.history.clear()

    def __call__(self, state: pe.WorldState) -> tuple[np.ndarray, np.ndarray]:
        native = pe.all_observations(state)
        self.history.push(native)
        return native, enhance_observations(self.oef, self.config, native, self.history)


def evaluate_policy(
    policy: Policy,
    config: pe.ScenarioConfig,
    episodes: int,
    seed: int = 0,
    oef: Candidate | None = None,
    history_depth: int = 1,
    seed_offset: int = EVAL_SEED_OFFSET,
) -> tuple[float, float, float]:
    """(time-averaged coverage, cumulative native team reward, final-step coverage).

    Means over ``episodes`` episodes with fixed seeds; rewards are always the
    environment's own, whatever reward the policy was trained on.
    """
    pipeline = ObservationPipeline(config, oef, history_depth)
    coverages, returns, finals = [], [], []
    for k in range(episodes):
        state = pe.reset(config, seed_offset + seed * 100_003 + k)
        pipeline.reset()
        _, obs = pipeline(state)
        states, total, done = [], 0.0, False
        while not done:
            actions = policy.act(obs)
            state, native, done = pe.step(state, actions)
            total += float(np.mean(native))
            states.append(state)
            if not done:
                _, obs = pipeline(state)
        coverages.append(pe.coverage_rate(states))
        finals.append(pe.final_step_coverage(states))
        returns.append(total)
    return float(np.mean(coverages)), float(np.mean(returns)), float(np.mean(finals))


def _learner_config(spec: TrainerSpec) -> LearnerConfig:
    return LearnerConfig(
        hidden=spec.hidden_sizes,
        lr=spec.lr,
        gamma=spec.gamma,
        target_update_interval=spec.target_update_interval,
        max_grad_norm=spec.max_grad_norm,
        double_q=spec.double_q,
    )


def _ppo_config(spec: TrainerSpec) -> PPOConfig:
    return PPOConfig(
        hidden=spec.hidden_sizes,
        lr=spec.lr,
        gamma=spec.gamma,
        gae_lambda=spec.gae_lambda,
        clip=spec.clip_ratio,
        epochs=spec.ppo_epochs,
        entropy_coef=spec.entropy_coef,
        max_grad_norm=spec.max_grad_norm,
    )


def _curve_steps(spec: TrainerSpec) -> list[int]:
    points = max(spec.curve_points, 1)
    steps = sorted({max(int(round(spec.total_env_steps * (k + 1) / points)), 1) for k in range(points)})
    return steps


def convergence_steps(curve: Sequence[dict], final_coverage: float, total_steps: int) -> int:
    """First curve step reaching 80% of the final coverage."""
    if final_coverage <= 0.0:
        return total_steps
    target = 0.8 * final_coverage
    for point in curve:
        if point["eval_coverage"] >= target:
            return int(point["step"])
    return total_steps


class _Trainer:
    def __init__(
        self,
        config: pe.ScenarioConfig,
        hybrid: HybridRewardSpec | None,
        oef: Candidate | None,
        spec: TrainerSpec,
    ):
        self.config = config
        self.hybrid = hybrid
        self.oef = oef
        self.spec = spec
        self.rng = np.random.default_rng(spec.seed)
        self.pipeline = ObservationPipeline(config, oef, spec.history_depth)
        obs_dim = self.pipeline.obs_dim
        if spec.algorithm is Algorithm.MAPPO:
            self.learner: ValueLearner | MappoLearner = MappoLearner(
                obs_dim, config.n_agents, config.n_actions, _ppo_config(spec), self.rng
            )
        else:
            self.learner = ValueLearner(
                obs_dim, config.n_agents, config.n_actions, spec.algorithm.value, _learner_config(spec), self.rng
            )
        self.curve: list[dict] = []
        self.episode_returns: list[float] = []
        self.degenerate_batches = 0
        self.step_count = 0

    def training_reward(self, next_state: pe.WorldState, actions, native: np.ndarray) -> np.ndarray:
        """Candidate reward on the post-step state; it replaces the native one."""
        if self.hybrid is None:
            return native
        return eval_hybrid_reward(self.hybrid, next_state, pe.all_observations(next_state), actions)

    def new_episode(self) -> tuple[pe.WorldState, np.ndarray]:
        state = pe.reset(self.config, int(self.rng.integers(0, 2**32)))
        self.pipeline.reset()
        return state, self.pipeline(state)[1]

    def maybe_record_curve(self, checkpoints: list[int]) -> None:
        while checkpoints and self.step_count >= checkpoints[0]:
            step = checkpoints.pop(0)
            cov, _, _ = evaluate_policy(
                GreedyPolicy(self.learner),
                self.config,
                self.spec.curve_eval_episodes,
                seed=self.spec.seed,
                oef=self.oef,
                history_depth=self.spec.history_depth,
                seed_offset=CURVE_SEED_OFFSET,
            )
            recent = self.episode_returns[-10:]
            self.curve.append(
                {
                    "step": step,
                    "episodic_native_reward": float(np.mean(recent)) if recent else None,
                    "eval_coverage": cov,
                }
            )

    def run_value(self) -> None:
        spec = self.spec
        learner = self.learner
        assert isinstance(learner, ValueLearner)
        buffer = ReplayBuffer(min(spec.buffer_size, spec.total_env_steps), self.config.n_agents, self.pipeline.obs_dim)
        checkpoints = _curve_steps(spec)
        state, obs = self.new_episode()
        ep_native = 0.0
        while self.step_count < spec.total_env_steps:
            actions = learner.act(obs, spec.epsilon(self.step_count), self.rng)
            next_state, native, done = pe.step(state, actions)
            reward = self.training_reward(next_state, actions, native)
            ep_native += float(np.mean(native))
            next_obs = self.pipeline(next_state)[1]
            # the horizon is a time limit and observations carry no clock, so
            # targets bootstrap through it instead of treating it as terminal
            buffer.add(obs, actions, float(np.sum(reward)), next_obs, False)
            self.step_count += 1
            if buffer.size >= max(spec.learning_starts, spec.batch_size):
                for _ in range(spec.updates_per_step):
                    learner.update(buffer.sample(self.rng, spec.batch_size))
            if done:
                self.episode_returns.append(ep_native)
                ep_native = 0.0
                state, obs = self.new_episode()
            else:
                state, obs = next_state, next_obs
            self.maybe_record_curve(checkpoints)

    def run_mappo(self) -> None:
        spec = self.spec
        learner = self.learner
        assert isinstance(learner, MappoLearner)
        checkpoints = _curve_steps(spec)
        state, obs = self.new_episode()
        ep_native = 0.0
        while self.step_count < spec.total_env_steps:
            n = min(spec.rollout_steps, spec.total_env_steps - self.step_count)
            rollout = {k: [] for k in ("obs", "actions", "logp", "rewards", "values", "dones")}
            for _ in range(n):
                actions, logp = learner.act(obs, self.rng)
                values = learner.values(obs[None])[0]
                next_state, native, done = pe.step(state, actions)
                reward = self.training_reward(next_state, actions, native)
                ep_native += float(np.mean(native))
                if done:
                    # time-limit truncation: fold the bootstrap value into the last reward
                    reward = reward + spec.gamma * learner.values(self.pipeline(next_state)[1][None])[0]
                for key, val in (("obs", obs), ("actions", actions), ("logp", logp), ("rewards", reward), ("values", values), ("dones", done)):
                    rollout[key].append(val)
                self.step_count += 1
                if done:
                    self.episode_returns.append(ep_native)
                    ep_native = 0.0
                    state, obs = self.new_episode()
                else:
                    state, obs = next_state, self.pipeline(next_state)[1]
            batch = {k: np.array(v) for k, v in rollout.items()}
            batch["last_values"] = learner.values(obs[None])[0]
            try:
                ppo_update(batch, learner, self.rng)
            except DegenerateBatch:
                self.degenerate_batches += 1
            self.maybe_record_curve(checkpoints)


def _fingerprint_id(c: Candidate | HybridRewardSpec | None) -> str | None:
    return None if c is None else c.id


def train(
    scenario: pe.ScenarioConfig | pe.Scenario | str,
    hybrid: HybridRewardSpec | None,
    oef: Candidate | None,
    spec: TrainerSpec,
    *,
    pair_id: str = "native",
    snapshot_dir: str | Path | None = None,
) -> EvalReport:
    """Train agents with the candidate reward (replacing the native one) and
    candidate-enhanced observations, then score on native metrics only."""
    config = scenario if isinstance(scenario, pe.ScenarioConfig) else pe.ScenarioConfig.make(scenario)
    report = EvalReport(pair_id, _fingerprint_id(hybrid), _fingerprint_id(oef), spec.algorithm.value, spec.seed)
    t0 = time.perf_counter()
    trainer: _Trainer | None = None
    try:
        trainer = _Trainer(config, hybrid, oef, spec)
        if spec.algorithm is Algorithm.MAPPO:
            trainer.run_mappo()
        else:
            trainer.run_value()
        coverage, native_return, final = evaluate_policy(
            GreedyPolicy(trainer.learner), config, spec.eval_episodes, seed=spec.seed, oef=oef,
            history_depth=spec.history_depth,
        )
    except CandidateRuntimeFault as exc:
        report.status = "failed"
        report.reason = f"{exc.reason}: {exc}"
        report.failed_step = trainer.step_count if trainer is not None else 0
        report.wall_time = time.perf_counter() - t0
        report.curve = trainer.curve if trainer is not None else []
        return report
    report.coverage_rate = coverage
    report.cumulative_native_reward = native_return
    report.final_step_coverage = final
    report.curve = trainer.curve
    report.convergence_stat = convergence_steps(trainer.curve, coverage, spec.total_env_steps)
    report.wall_time = time.perf_counter() - t0
    if snapshot_dir is not None:
        save_snapshot(snapshot_dir, trainer.learner.online_nets)
    return report


def random_baseline(
    scenario: pe.ScenarioConfig, episodes: int = 50, seed: int = 0
) -> tuple[float, float, float]:
    """Random-action policy measured on the same evaluation seeds as :func:`train`."""
    return evaluate_policy(RandomPolicy(scenario.n_actions, seed), scenario, episodes, seed=seed)


def write_curve(path: str | Path, records: Sequence[dict]) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
