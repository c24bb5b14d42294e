"""Actor-critic networks with a tanh-squashed diagonal Gaussian policy.

The Gaussian lives in pre-squash space: a sample ``u`` maps to torques
``limit * tanh(u)``.  Log-probabilities, ratios and entropy are all taken
on ``u``, so the squashing Jacobian never enters the PPO ratio.
"""
from __future__ import annotations

import math

import numpy as np

from .. import nn

ARCHITECTURES = ("config1_mlp", "config2_recurrent", "config3_recurrent_large")
LOG_STD_INIT = -0.5
_LOG_2PI = math.log(2.0 * math.pi)


class _FeedForward:
    """MLP behind the same sequence interface as the recurrent layer."""

    recurrent = False

    def __init__(self, n_in, hidden, n_out, rng, out_scale):
        self.net = nn.MLP([n_in, *hidden, n_out], activation="tanh", rng=rng, out_scale=out_scale)
        self.params = self.net.params
        self.n_hidden = 0

    def initial_carry(self, batch):
        return np.zeros((batch, 0))

    def step(self, x, h, params):
        return self.net.forward(x, params)[0], h

    def forward(self, xs, h0, starts, params):
        return self.net.forward(xs, params)

    def backward(self, cache, dys, params):
        return self.net.backward(cache, dys, params)


class _Recurrent:
    recurrent = True

    def __init__(self, n_in, hidden, n_out, rng, out_scale):
        self.net = nn.ElmanRNN(n_in, hidden, n_out, rng=rng, out_scale=out_scale)
        self.params = self.net.params
        self.n_hidden = hidden

    def initial_carry(self, batch):
        return self.net.initial_carry(batch)

    def step(self, x, h, params):
        return self.net.step(x, h, params)

    def forward(self, xs, h0, starts, params):
        return self.net.forward(xs, h0, starts, params)

    def backward(self, cache, dys, params):
        return self.net.backward(cache, dys, params)


def _build(arch: str, obs_dim: int, act_dim: int, rng: np.random.Generator):
    if arch == "config1_mlp":
        actor = _FeedForward(obs_dim, (256, 256), act_dim, rng, out_scale=0.01)
        critic = _FeedForward(obs_dim, (256, 256), 1, rng, out_scale=1.0)
    elif arch == "config2_recurrent":
        actor = _Recurrent(obs_dim, 128, act_dim, rng, out_scale=0.01)
        critic = _FeedForward(obs_dim, (256, 256), 1, rng, out_scale=1.0)
    elif arch == "config3_recurrent_large":
        actor = _Recurrent(obs_dim, 256, act_dim, rng, out_scale=0.01)
        critic = _Recurrent(obs_dim, 256, 1, rng, out_scale=1.0)
    else:
        raise ValueError(f"unknown architecture {arch!r}; choose from {ARCHITECTURES}")
    return actor, critic


def gaussian_log_prob(u, mu, log_std):
    """Diagonal Gaussian log-density summed over the last axis."""
    z = (u - mu) * np.exp(-log_std)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) - 0.5 * u.shape[-1] * _LOG_2PI


def gaussian_entropy(log_std) -> float:
    return float(np.sum(log_std) + 0.5 * len(log_std) * (1.0 + _LOG_2PI))


class ActorCritic:
    """Policy mean network, value network and a state-independent log-std.

    ``params`` is the flat list actor params + critic params + [log_std];
    optimizers and checkpoints operate on it directly.
    """

    def __init__(self, arch: str = "config1_mlp", obs_dim: int = 55, act_dim: int = 7,
                 action_scale=1.0, seed: int = 0, hidden_override: dict | None = None):
        self.arch = arch
        self.obs_dim, self.act_dim = int(obs_dim), int(act_dim)
        rng = np.random.default_rng(seed)
        if hidden_override:
            self.actor, self.critic = self._custom(hidden_override, rng)
        else:
            self.actor, self.critic = _build(arch, self.obs_dim, self.act_dim, rng)
        self.action_scale = np.broadcast_to(np.asarray(action_scale, dtype=float), (self.act_dim,)).copy()
        self.params = [*self.actor.params, *self.critic.params, np.full(self.act_dim, LOG_STD_INIT)]
        self._n_actor = len(self.actor.params)
        self._n_critic = len(self.critic.params)

    def _custom(self, spec, rng):
        """Small networks for tests: ``{"actor": (...), "critic": (...), "recurrent": bool}``."""
        kind = _Recurrent if spec.get("recurrent") else _FeedForward
        a_h = spec["actor"] if kind is _FeedForward else spec["actor"][0]
        c_kind = _Recurrent if spec.get("recurrent_critic") else _FeedForward
        c_h = spec["critic"] if c_kind is _FeedForward else spec["critic"][0]
        return (kind(self.obs_dim, a_h, self.act_dim, rng, 0.5),
                c_kind(self.obs_dim, c_h, 1, rng, 1.0))

    # -- parameter views ---------------------------------------------------
    def split(self, params=None):
        p = self.params if params is None else params
        a = p[:self._n_actor]
        c = p[self._n_actor:self._n_actor + self._n_critic]
        return a, c, p[-1]

    @property
    def log_std(self) -> np.ndarray:
        return self.params[-1]

    @property
    def recurrent(self) -> bool:
        return self.actor.recurrent or self.critic.recurrent

    def initial_carry(self, batch: int):
        return self.actor.initial_carry(batch), self.critic.initial_carry(batch)

    # -- acting ------------------------------------------------------------
    def step(self, obs, carry, params=None):
        """One step for a batch of observations: (mu, value, new carry)."""
        a_p, c_p, _ = self.split(params)
        mu, ha = self.actor.step(obs, carry[0], a_p)
        v, hc = self.critic.step(obs, carry[1], c_p)
        return mu, v[..., 0], (ha, hc)

    def squash(self, u) -> np.ndarray:
        return self.action_scale * np.tanh(u)

    def sample(self, obs, carry, rng: np.random.Generator):
        """Stochastic action: (u, torques, log_prob, value, new carry)."""
        mu, v, carry = self.step(obs, carry)
        u = mu + np.exp(self.log_std) * rng.standard_normal(mu.shape)
        return u, self.squash(u), gaussian_log_prob(u, mu, self.log_std), v, carry

    def act_deterministic(self, obs, carry):
        mu, _, carry = self.step(obs, carry)
        return self.squash(mu), carry

    # -- training ----------------------------------------------------------
    def evaluate(self, obs, carry0, starts, params=None):
        """Sequence forward over (T, B, obs_dim): (mu, values, caches)."""
        a_p, c_p, _ = self.split(params)
        mu, a_cache = self.actor.forward(obs, carry0[0], starts, a_p)
        v, c_cache = self.critic.forward(obs, carry0[1], starts, c_p)
        return mu, v[..., 0], (a_cache, c_cache)

    def backward(self, caches, d_mu, d_value, d_log_std, params=None):
        a_p, c_p, _ = self.split(params)
        g_a = self.actor.backward(caches[0], d_mu, a_p)
        g_c = self.critic.backward(caches[1], d_value[..., None], c_p)
        return [*g_a, *g_c, d_log_std]
