"""Clipped policy gradient with a shared actor and a centralized critic."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lero.marl.mlp import Adam, Mlp, clip_by_global_norm
from lero.marl.value import with_agent_ids


class DegenerateBatch(ValueError):
    """Every action identical and zero advantage variance: nothing to learn from."""


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def clipped_surrogate(
    ratio: np.ndarray, advantage: np.ndarray, clip: float
) -> tuple[np.ndarray, np.ndarray]:
    """min(r A, clip(r, 1-c, 1+c) A) and its derivative with respect to r."""
    ratio = np.asarray(ratio, dtype=float)
    advantage = np.asarray(advantage, dtype=float)
    unclipped = ratio * advantage
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip) * advantage
    take_unclipped = unclipped <= clipped
    value = np.where(take_unclipped, unclipped, clipped)
    grad = np.where(take_unclipped, advantage, 0.0)
    return value, grad


def gae(
    rewards: np.ndarray,
    values: np.ndarray,
    dones: np.ndarray,
    last_values: np.ndarray,
    gamma: float,
    lam: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimates and lambda-returns.

    ``rewards`` and ``values`` are (T, N); ``dones[t]`` marks that step t
    ended its episode, so no value is bootstrapped across it.
    """
    T = len(rewards)
    adv = np.zeros_like(rewards, dtype=float)
    running = np.zeros(rewards.shape[1:])
    for t in range(T - 1, -1, -1):
        nonterminal = 1.0 - float(dones[t])
        next_v = last_values if t == T - 1 else values[t + 1]
        delta = rewards[t] + gamma * next_v * nonterminal - values[t]
        running = delta + gamma * lam * nonterminal * running
        adv[t] = running
    return adv, adv + values


@dataclass
class PPOConfig:
    hidden: tuple[int, ...] = (64, 64)
    lr: float = 5e-4
    gamma: float = 0.95
    gae_lambda: float = 0.95
    clip: float = 0.2
    epochs: int = 4
    minibatches: int = 4
    entropy_coef: float = 0.01
    max_grad_norm: float = 10.0


class MappoLearner:
    """Shared actor over (obs_i, agent id); critic over (all obs, agent id) -> V_i."""

    def __init__(
        self, obs_dim: int, n_agents: int, n_actions: int, cfg: PPOConfig, rng: np.random.Generator
    ):
        self.obs_dim, self.n_agents, self.n_actions = obs_dim, n_agents, n_actions
        self.cfg = cfg
        self.actor = Mlp([obs_dim + n_agents, *cfg.hidden, n_actions], rng)
        # small final layer keeps the initial policy close to uniform
        self.actor.layers[-1][0][...] *= 0.01
        self.critic = Mlp([n_agents * obs_dim + n_agents, *cfg.hidden, 1], rng)
        self.actor_optim = Adam([self.actor.params], lr=cfg.lr)
        self.critic_optim = Adam([self.critic.params], lr=cfg.lr)

    @property
    def online_nets(self) -> dict[str, Mlp]:
        return {"actor": self.actor, "critic": self.critic}

    def critic_inputs(self, obs: np.ndarray) -> np.ndarray:
        """(..., N, d) -> (..., N, N*d + N): joint observation plus agent id."""
        n = obs.shape[-2]
        joint = obs.reshape(obs.shape[:-2] + (1, n * obs.shape[-1]))
        joint = np.broadcast_to(joint, obs.shape[:-2] + (n, joint.shape[-1]))
        eye = np.broadcast_to(np.eye(n), obs.shape[:-2] + (n, n))
        return np.concatenate([joint, eye], axis=-1)

    def policy(self, obs: np.ndarray) -> np.ndarray:
        return softmax(self.actor.forward(with_agent_ids(obs)))

    def values(self, obs: np.ndarray) -> np.ndarray:
        return self.critic.forward(self.critic_inputs(obs).reshape(-1, self.critic.sizes[0])).reshape(obs.shape[:-1])

    def act(self, obs: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        probs = self.policy(obs)
        cum = probs.cumsum(axis=-1)
        u = rng.random((len(probs), 1))
        actions = np.minimum((u > cum).sum(axis=-1), self.n_actions - 1)
        logp = np.log(probs[np.arange(len(actions)), actions] + 1e-300)
        return actions, logp

    def greedy(self, obs: np.ndarray) -> np.ndarray:
        return self.actor.forward(with_agent_ids(obs)).argmax(axis=-1)


def policy_loss_and_grad(
    actor: Mlp,
    x: np.ndarray,
    actions: np.ndarray,
    old_logp: np.ndarray,
    advantages: np.ndarray,
    clip: float,
    entropy_coef: float,
) -> tuple[float, np.ndarray, dict]:
    """Negative clipped surrogate minus an entropy bonus, averaged over the batch."""
    logits, cache = actor.forward_cache(x)
    logp_all = log_softmax(logits)
    probs = np.exp(logp_all)
    idx = np.arange(len(actions))
    logp = logp_all[idx, actions]
    ratio = np.exp(logp - old_logp)
    surr, d_surr_d_ratio = clipped_surrogate(ratio, advantages, clip)
    entropy = -(probs * logp_all).sum(axis=-1)
    B = len(actions)
    loss = float(-surr.mean() - entropy_coef * entropy.mean())

    onehot = np.zeros_like(probs)
    onehot[idx, actions] = 1.0
    # d ratio / d logits = ratio * (onehot - probs)
    d_logits = -(d_surr_d_ratio * ratio)[:, None] * (onehot - probs) / B
    # d entropy / d logits_j = -p_j (log p_j + H)
    d_logits -= entropy_coef * (-probs * (logp_all + entropy[:, None])) / B
    grad = actor.backward(cache, d_logits)[0]
    clip_frac = float(np.mean(np.abs(ratio - 1.0) > clip))
    return loss, grad, {"entropy": float(entropy.mean()), "clip_frac": clip_frac}


def value_loss_and_grad(critic: Mlp, x: np.ndarray, returns: np.ndarray) -> tuple[float, np.ndarray]:
    v, cache = critic.forward_cache(x)
    err = v[:, 0] - returns
    loss = float(np.mean(err**2))
    grad = critic.backward(cache, (2.0 * err / len(err))[:, None])[0]
    return loss, grad


def ppo_update(
    batch: dict[str, np.ndarray],
    learner: MappoLearner,
    rng: np.random.Generator,
) -> dict:
    """One PPO update from a rollout.

    ``batch`` holds (T, N, d) ``obs``, (T, N) ``actions``, ``logp``,
    ``rewards``, ``values``, (T,) ``dones`` and (N,) ``last_values``.
    """
    cfg = learner.cfg
    adv, returns = gae(batch["rewards"], batch["values"], batch["dones"], batch["last_values"], cfg.gamma, cfg.gae_lambda)
    actions = batch["actions"]
    if np.all(actions == actions.flat[0]) and float(np.var(adv)) == 0.0:
        raise DegenerateBatch("identical actions and zero advantage variance")
    T, N = actions.shape
    actor_x = with_agent_ids(batch["obs"]).reshape(T * N, -1)
    critic_x = learner.critic_inputs(batch["obs"]).reshape(T * N, -1)
    flat_actions = actions.reshape(-1)
    flat_logp = batch["logp"].reshape(-1)
    flat_adv = adv.reshape(-1)
    std = flat_adv.std()
    flat_adv = (flat_adv - flat_adv.mean()) / (std + 1e-8)
    flat_ret = returns.reshape(-1)

    stats = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "clip_frac": 0.0}
    count = 0
    size = T * N
    mb = max(size // cfg.minibatches, 1)
    for _ in range(cfg.epochs):
        order = rng.permutation(size)
        for start in range(0, size, mb):
            sel = order[start : start + mb]
            p_loss, p_grad, info = policy_loss_and_grad(
                learner.actor, actor_x[sel], flat_actions[sel], flat_logp[sel], flat_adv[sel], cfg.clip, cfg.entropy_coef
            )
            v_loss, v_grad = value_loss_and_grad(learner.critic, critic_x[sel], flat_ret[sel])
            clip_by_global_norm([p_grad], cfg.max_grad_norm)
            clip_by_global_norm([v_grad], cfg.max_grad_norm)
            learner.actor_optim.step([p_grad])
            learner.critic_optim.step([v_grad])
            stats["policy_loss"] += p_loss
            stats["value_loss"] += v_loss
            stats["entropy"] += info["entropy"]
            stats["clip_frac"] += info["clip_frac"]
            count += 1
    return {k: v / count for k, v in stats.items()}
