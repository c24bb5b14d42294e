"""Advantage estimation, schedules and the clipped-surrogate update."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import nn
from .policy import ActorCritic, gaussian_entropy, gaussian_log_prob


class UpdateFailure(RuntimeError):
    """Raised on a non-finite loss; ``checkpoint`` holds the pre-update parameters."""

    def __init__(self, message, checkpoint):
        super().__init__(message)
        self.checkpoint = checkpoint


def schedule(value_start: float, value_end: float, step: float, total: float) -> float:
    """Linear interpolation from start to end, clamped outside [0, total]."""
    if total <= 0:
        raise ValueError("total must be positive")
    frac = min(max(step / total, 0.0), 1.0)
    return value_start + (value_end - value_start) * frac


def compute_gae(rewards, values, dones, last_value, gamma: float, lam: float):
    """Generalized advantage estimates and returns.

    Works on (T,) or (T, B) arrays; ``dones[t]`` marks that the transition at
    ``t`` ended its episode, so nothing is bootstrapped across it.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=float)
    if not (rewards.shape == values.shape == dones.shape):
        raise ValueError("rewards, values and dones must have equal shapes")
    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    next_value = np.asarray(last_value, dtype=float)
    running = np.zeros_like(rewards[0]) if T else 0.0
    for t in reversed(range(T)):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * live - values[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
        next_value = values[t]
    return adv, adv + values


def standardize(x: np.ndarray) -> np.ndarray:
    return (x - x.mean()) / (x.std() + 1e-8)


@dataclass
class Batch:
    """One minibatch laid out as (T, B): T = 1 for feedforward policies."""

    obs: np.ndarray       # (T, B, obs_dim), already normalized
    u: np.ndarray         # (T, B, act_dim) pre-squash actions
    log_prob: np.ndarray  # (T, B)
    advantages: np.ndarray
    returns: np.ndarray
    starts: np.ndarray    # (T, B) episode-start mask for recurrent carries
    carry_actor: np.ndarray
    carry_critic: np.ndarray


def ppo_loss(policy: ActorCritic, batch: Batch, clip: float, vf_coef: float, ent_coef: float,
             params=None):
    """Clipped-surrogate loss (to minimise) with its analytic gradient.

    loss = -mean(min(r A, clip(r) A)) + vf_coef * mean((V - R)^2) - ent_coef * H
    """
    params = policy.params if params is None else params
    mu, v, caches = policy.evaluate(batch.obs, (batch.carry_actor, batch.carry_critic), batch.starts, params)
    log_std = params[-1]
    sigma2 = np.exp(2.0 * log_std)
    logp = gaussian_log_prob(batch.u, mu, log_std)
    ratio = np.exp(logp - batch.log_prob)
    A = batch.advantages
    unclipped = ratio * A
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip) * A
    surrogate = np.minimum(unclipped, clipped)
    n = A.size
    policy_loss = -float(np.mean(surrogate))
    value_err = v - batch.returns
    value_loss = float(np.mean(value_err ** 2))
    entropy = gaussian_entropy(log_std)
    loss = policy_loss + vf_coef * value_loss - ent_coef * entropy

    # d surrogate / d logp is r A where the unclipped branch is the minimum.
    active = (unclipped <= clipped).astype(float)
    d_logp = -(active * ratio * A) / n
    diff = batch.u - mu
    d_mu = d_logp[..., None] * diff / sigma2
    d_log_std = np.sum(d_logp[..., None] * (diff * diff / sigma2 - 1.0), axis=tuple(range(diff.ndim - 1)))
    d_log_std = d_log_std - ent_coef
    d_value = vf_coef * 2.0 * value_err / n
    grads = policy.backward(caches, d_mu, d_value, d_log_std, params)

    diag = {
        "loss": loss, "policy_loss": policy_loss, "value_loss": value_loss, "entropy": entropy,
        "clip_frac": float(np.mean(np.abs(ratio - 1.0) > clip)),
        "approx_kl": float(np.mean((ratio - 1.0) - np.log(ratio))),
    }
    return loss, grads, diag


@dataclass
class PpoConfig:
    total_steps: int = 300_000
    n_steps: int = 8192
    n_workers: int = 1
    minibatch: int = 256
    epochs: int = 5
    clip: float = 0.15
    lr_start: float = 3e-4
    lr_end: float = 1e-4
    entropy_start: float = 1e-3
    entropy_end: float = 1e-4
    gamma: float = 0.99
    lam: float = 0.95
    vf_coef: float = 0.5
    max_grad_norm: float = 0.5
    alpha: float = 0.0
    seq_len: int = 64
    arch: str = "config1_mlp"
    rsi: bool = True
    imitation: bool = True
    reference_obs: bool = True
    episode_seconds: float = 10.0
    max_train_speed: float = 2.0
    seed: int = 0
    checkpoint_every: int = 1

    def __post_init__(self):
        for name in ("total_steps", "n_steps", "n_workers", "minibatch", "epochs", "seq_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("lr_start", "lr_end", "entropy_start", "entropy_end", "gamma", "lam",
                     "vf_coef", "max_grad_norm", "episode_seconds"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.clip < 1.0:
            raise ValueError("clip must lie in (0, 1)")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError("alpha must lie in [0, 1)")
        if (self.n_steps * self.n_workers) % self.minibatch:
            raise ValueError("minibatch must divide n_steps * n_workers")
        if self.arch != "config1_mlp":
            if self.n_steps % self.seq_len or self.minibatch % self.seq_len:
                raise ValueError("recurrent training needs n_steps and minibatch divisible by seq_len")


def minibatches(buffer, policy: ActorCritic, config: PpoConfig, rng: np.random.Generator):
    """Yield shuffled minibatches from a (T, N) rollout buffer."""
    T, N = buffer.rewards.shape
    if not policy.recurrent:
        idx = rng.permutation(T * N)
        flat = lambda a: a.reshape((T * N,) + a.shape[2:])
        obs, u, lp, adv, ret = (flat(buffer.obs), flat(buffer.u), flat(buffer.log_prob),
                                flat(buffer.advantages), flat(buffer.returns))
        for k in range(0, T * N, config.minibatch):
            j = idx[k:k + config.minibatch]
            m = len(j)
            yield Batch(obs[j][None], u[j][None], lp[j][None], adv[j][None], ret[j][None],
                        np.zeros((1, m)), policy.actor.initial_carry(m), policy.critic.initial_carry(m))
        return
    L = config.seq_len
    chunks = [(t0, n) for t0 in range(0, T, L) for n in range(N)]
    order = rng.permutation(len(chunks))
    per = config.minibatch // L
    for k in range(0, len(order), per):
        sel = [chunks[i] for i in order[k:k + per]]
        t0s = np.array([c[0] for c in sel])
        ns = np.array([c[1] for c in sel])
        ts = t0s[None, :] + np.arange(L)[:, None]
        pick = lambda a: a[ts, ns[None, :]]
        starts = pick(buffer.starts).astype(float)
        starts[0] = 0.0  # the stored carry already reflects any reset at the chunk start
        yield Batch(pick(buffer.obs), pick(buffer.u), pick(buffer.log_prob), pick(buffer.advantages),
                    pick(buffer.returns), starts, buffer.carry_actor[t0s, ns], buffer.carry_critic[t0s, ns])


def ppo_update(buffer, policy: ActorCritic, optimizer: nn.Adam, config: PpoConfig, step_count: int,
               rng: np.random.Generator) -> dict:
    """Several epochs of minibatch Adam steps on the clipped objective.

    Learning rate and entropy weight follow their linear schedules at
    ``step_count``.  Returns averaged diagnostics.
    """
    lr = schedule(config.lr_start, config.lr_end, step_count, config.total_steps)
    ent = schedule(config.entropy_start, config.entropy_end, step_count, config.total_steps)
    backup = [p.copy() for p in policy.params]
    totals: dict[str, float] = {}
    count = 0
    for _ in range(config.epochs):
        for batch in minibatches(buffer, policy, config, rng):
            loss, grads, diag = ppo_loss(policy, batch, config.clip, config.vf_coef, ent)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                for p, b in zip(policy.params, backup):
                    p[...] = b
                raise UpdateFailure("non-finite PPO loss or gradient", backup)
            grads, norm = nn.clip_by_global_norm(grads, config.max_grad_norm)
            optimizer.step(policy.params, grads, lr=lr)
            diag["grad_norm"] = norm
            for key, val in diag.items():
                totals[key] = totals.get(key, 0.0) + val
            count += 1
    out = {k: v / count for k, v in totals.items()}
    out.update(lr=lr, entropy_coef=ent)
    return out
