"""Value-decomposition learners: VDN (sum) and QMIX (monotonic hypernetwork mixer)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from lero.marl.mlp import Adam, Mlp, clip_by_global_norm


def vdn_joint_q(per_agent_q: Sequence[float] | np.ndarray) -> float | np.ndarray:
    """Q_tot = sum_i Q_i (last axis)."""
    q = np.asarray(per_agent_q, dtype=float)
    return q.sum(axis=-1) if q.ndim > 1 else float(q.sum())


def _elu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def _elu_grad(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


class QMixer:
    """Monotonic mixer whose weights come from state-conditioned hypernetworks.

    hidden = elu(q @ |W1(s)| + b1(s)); Q_tot = hidden . |w2(s)| + V(s)
    """

    def __init__(
        self,
        n_agents: int,
        state_dim: int,
        embed: int = 32,
        hyper_hidden: int = 64,
        rng: np.random.Generator | None = None,
    ):
        self.n_agents = n_agents
        self.state_dim = state_dim
        self.embed = embed
        self.hyper_w1 = Mlp([state_dim, hyper_hidden, n_agents * embed], rng)
        self.hyper_b1 = Mlp([state_dim, embed], rng)
        self.hyper_w2 = Mlp([state_dim, hyper_hidden, embed], rng)
        self.hyper_v = Mlp([state_dim, embed, 1], rng)

    @property
    def nets(self) -> list[Mlp]:
        return [self.hyper_w1, self.hyper_b1, self.hyper_w2, self.hyper_v]

    def copy(self) -> "QMixer":
        other = QMixer.__new__(QMixer)
        other.n_agents, other.state_dim, other.embed = self.n_agents, self.state_dim, self.embed
        other.hyper_w1, other.hyper_b1, other.hyper_w2, other.hyper_v = (n.copy() for n in self.nets)
        return other

    def load(self, other: "QMixer") -> None:
        for mine, theirs in zip(self.nets, other.nets):
            mine.load(theirs)

    def first_layer(self, q: np.ndarray, state: np.ndarray) -> np.ndarray:
        """Pre-activation of the hidden mixing layer, q @ |W1(s)| + b1(s)."""
        q, state = np.atleast_2d(q), np.atleast_2d(state)
        w1 = np.abs(self.hyper_w1.forward(state)).reshape(-1, self.n_agents, self.embed)
        return np.einsum("bn,bne->be", q, w1) + self.hyper_b1.forward(state)

    def forward_cache(self, q: np.ndarray, state: np.ndarray) -> tuple[np.ndarray, tuple]:
        q, state = np.atleast_2d(q), np.atleast_2d(state)
        raw_w1, c_w1 = self.hyper_w1.forward_cache(state)
        b1, c_b1 = self.hyper_b1.forward_cache(state)
        raw_w2, c_w2 = self.hyper_w2.forward_cache(state)
        v, c_v = self.hyper_v.forward_cache(state)
        w1 = np.abs(raw_w1).reshape(-1, self.n_agents, self.embed)
        pre = np.einsum("bn,bne->be", q, w1) + b1
        hidden = _elu(pre)
        w2 = np.abs(raw_w2)
        q_tot = (hidden * w2).sum(axis=1) + v[:, 0]
        cache = (q, raw_w1, w1, pre, hidden, raw_w2, w2, c_w1, c_b1, c_w2, c_v)
        return q_tot, cache

    def forward(self, q: np.ndarray, state: np.ndarray) -> np.ndarray:
        return self.forward_cache(q, state)[0]

    def backward(self, cache: tuple, d_qtot: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """Gradients for [w1, b1, w2, v] hypernetworks and dL/dq."""
        q, raw_w1, w1, pre, hidden, raw_w2, w2, c_w1, c_b1, c_w2, c_v = cache
        d = np.asarray(d_qtot, dtype=float).reshape(-1, 1)
        g_v = self.hyper_v.backward(c_v, d)[0]
        g_raw_w2 = d * hidden * np.sign(raw_w2)
        g_w2 = self.hyper_w2.backward(c_w2, g_raw_w2)[0]
        d_pre = d * w2 * _elu_grad(pre)
        g_b1 = self.hyper_b1.backward(c_b1, d_pre)[0]
        d_w1 = q[:, :, None] * d_pre[:, None, :]
        g_raw_w1 = (d_w1 * np.sign(raw_w1).reshape(w1.shape)).reshape(raw_w1.shape)
        g_w1 = self.hyper_w1.backward(c_w1, g_raw_w1)[0]
        d_q = np.einsum("bne,be->bn", w1, d_pre)
        return [g_w1, g_b1, g_w2, g_v], d_q


def qmix_mix(per_agent_q: Sequence[float] | np.ndarray, global_state: np.ndarray, mixer: QMixer) -> float:
    return float(mixer.forward(np.asarray(per_agent_q, dtype=float), global_state)[0])


class ReplayBuffer:
    def __init__(self, capacity: int, n_agents: int, obs_dim: int):
        self.capacity = capacity
        self.obs = np.zeros((capacity, n_agents, obs_dim))
        self.next_obs = np.zeros((capacity, n_agents, obs_dim))
        self.actions = np.zeros((capacity, n_agents), dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity)
        self.discounts = np.zeros(capacity)
        self.size = 0
        self.pos = 0

    def add(self, obs, actions, reward, next_obs, done, discount: float = float("nan")) -> None:
        """``discount`` is the factor on the bootstrap value (gamma**n for n-step
        returns); NaN means the learner's one-step gamma."""
        i = self.pos
        self.obs[i] = obs
        self.actions[i] = actions
        self.rewards[i] = reward
        self.next_obs[i] = next_obs
        self.dones[i] = float(done)
        self.discounts[i] = discount
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, rng: np.random.Generator, batch: int) -> np.ndarray:
        return rng.integers(0, self.size, size=batch)

    def sample(self, rng: np.random.Generator, batch: int) -> dict[str, np.ndarray]:
        idx = self.sample_indices(rng, batch)
        return {
            "obs": self.obs[idx],
            "actions": self.actions[idx],
            "rewards": self.rewards[idx],
            "next_obs": self.next_obs[idx],
            "dones": self.dones[idx],
            "discounts": self.discounts[idx],
        }


def with_agent_ids(obs: np.ndarray) -> np.ndarray:
    """Append a one-hot agent id to each agent's observation (shared parameters)."""
    n = obs.shape[-2]
    eye = np.broadcast_to(np.eye(n), obs.shape[:-2] + (n, n))
    return np.concatenate([obs, eye], axis=-1)


@dataclass
class LearnerConfig:
    hidden: tuple[int, ...] = (64, 64)
    lr: float = 5e-4
    gamma: float = 0.95
    target_update_interval: int = 200
    max_grad_norm: float = 10.0
    mixer_embed: int = 32
    hyper_hidden: int = 64
    double_q: bool = True


class ValueLearner:
    """Shared-parameter agent Q-network trained through a VDN or QMIX mixer."""

    def __init__(
        self,
        obs_dim: int,
        n_agents: int,
        n_actions: int,
        mixer: str,
        cfg: LearnerConfig,
        rng: np.random.Generator,
    ):
        if mixer not in ("vdn", "qmix"):
            raise ValueError(f"unknown mixer {mixer!r}")
        self.n_agents, self.n_actions, self.obs_dim = n_agents, n_actions, obs_dim
        self.cfg = cfg
        self.mixer_kind = mixer
        self.agent = Mlp([obs_dim + n_agents, *cfg.hidden, n_actions], rng)
        self.target_agent = self.agent.copy()
        self.mixer = QMixer(n_agents, n_agents * obs_dim, cfg.mixer_embed, cfg.hyper_hidden, rng) if mixer == "qmix" else None
        self.target_mixer = self.mixer.copy() if self.mixer is not None else None
        params = [self.agent.params] + ([n.params for n in self.mixer.nets] if self.mixer else [])
        self.optim = Adam(params, lr=cfg.lr)
        self.updates = 0
        self.syncs = 0

    @property
    def online_nets(self) -> dict[str, Mlp]:
        nets = {"agent": self.agent}
        if self.mixer is not None:
            nets.update(zip(("hyper_w1", "hyper_b1", "hyper_w2", "hyper_v"), self.mixer.nets))
        return nets

    @property
    def target_nets(self) -> dict[str, Mlp]:
        nets = {"agent": self.target_agent}
        if self.target_mixer is not None:
            nets.update(zip(("hyper_w1", "hyper_b1", "hyper_w2", "hyper_v"), self.target_mixer.nets))
        return nets

    def q_values(self, obs: np.ndarray) -> np.ndarray:
        return self.agent.forward(with_agent_ids(obs))

    def act(self, obs: np.ndarray, epsilon: float, rng: np.random.Generator) -> np.ndarray:
        greedy = self.q_values(obs).argmax(axis=-1)
        explore = rng.random(self.n_agents) < epsilon
        random_actions = rng.integers(0, self.n_actions, self.n_agents)
        return np.where(explore, random_actions, greedy)

    def greedy(self, obs: np.ndarray) -> np.ndarray:
        return self.q_values(obs).argmax(axis=-1)

    def _mix(self, q: np.ndarray, obs: np.ndarray, target: bool):
        if self.mixer is None:
            return vdn_joint_q(q), None
        mixer = self.target_mixer if target else self.mixer
        state = obs.reshape(len(obs), -1)
        return mixer.forward_cache(q, state)

    def loss_and_grads(self, batch: dict[str, np.ndarray]) -> tuple[float, list[np.ndarray]]:
        obs, actions = batch["obs"], batch["actions"]
        B, N = actions.shape
        x = with_agent_ids(obs).reshape(B * N, -1)
        q_all, cache = self.agent.forward_cache(x)
        q_all = q_all.reshape(B, N, -1)
        chosen = np.take_along_axis(q_all, actions[:, :, None], axis=2)[:, :, 0]

        next_x = with_agent_ids(batch["next_obs"]).reshape(B * N, -1)
        next_target = self.target_agent.forward(next_x).reshape(B, N, -1)
        if self.cfg.double_q:
            # online net picks the action, target net scores it
            pick = self.agent.forward(next_x).reshape(B, N, -1).argmax(axis=2)
            next_q = np.take_along_axis(next_target, pick[:, :, None], axis=2)[:, :, 0]
        else:
            next_q = next_target.max(axis=2)
        next_tot, _ = self._mix(next_q, batch["next_obs"], target=True)
        discount = batch.get("discounts")
        if discount is None:
            discount = np.full(B, self.cfg.gamma)
        else:
            discount = np.where(np.isnan(discount), self.cfg.gamma, discount)
        y = batch["rewards"] + discount * (1.0 - batch["dones"]) * next_tot

        q_tot, mix_cache = self._mix(chosen, obs, target=False)
        err = q_tot - y
        loss = float(np.mean(err**2))
        d_tot = 2.0 * err / B
        if self.mixer is None:
            d_chosen = np.repeat(d_tot[:, None], N, axis=1)
            mixer_grads: list[np.ndarray] = []
        else:
            mixer_grads, d_chosen = self.mixer.backward(mix_cache, d_tot)
        d_q = np.zeros_like(q_all)
        np.put_along_axis(d_q, actions[:, :, None], d_chosen[:, :, None], axis=2)
        g_agent = self.agent.backward(cache, d_q.reshape(B * N, -1))[0]
        return loss, [g_agent, *mixer_grads]

    def update(self, batch: dict[str, np.ndarray]) -> float:
        loss, grads = self.loss_and_grads(batch)
        clip_by_global_norm(grads, self.cfg.max_grad_norm)
        self.optim.step(grads)
        self.updates += 1
        if self.updates % self.cfg.target_update_interval == 0:
            self.sync_targets()
        return loss

    def sync_targets(self) -> None:
        self.target_agent.load(self.agent)
        if self.mixer is not None:
            self.target_mixer.load(self.mixer)
        self.syncs += 1
