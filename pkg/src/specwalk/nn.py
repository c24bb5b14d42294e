"""Minimal numpy networks with hand-written backprop.

Parameters live in flat lists of arrays so that optimizers, checkpoints and
finite-difference checks can treat every model the same way.
"""
from __future__ import annotations

import numpy as np

ACTIVATIONS = ("relu", "tanh", "linear")


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0).astype(z.dtype)
    if name == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


def he_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class MLP:
    """Fully connected network ``sizes[0] -> ... -> sizes[-1]``.

    Hidden layers use ``activation``; the output layer is linear unless
    ``out_activation`` is given.  Weights are stored as (fan_in, fan_out).
    """

    def __init__(self, sizes, activation="relu", out_activation="linear",
                 rng=None, out_scale=1.0):
        if activation not in ACTIVATIONS or out_activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        self.sizes = [int(s) for s in sizes]
        self.activation = activation
        self.out_activation = out_activation
        rng = np.random.default_rng(0) if rng is None else rng
        self.params = []
        for i, (n_in, n_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            w = he_uniform(rng, n_in, n_out)
            if i == len(self.sizes) - 2:
                w = w * out_scale
            self.params += [w, np.zeros(n_out)]

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def forward(self, x, params=None):
        params = self.params if params is None else params
        cache = [x]
        a = x
        for i in range(self.n_layers):
            w, b = params[2 * i], params[2 * i + 1]
            z = a @ w + b
            name = self.out_activation if i == self.n_layers - 1 else self.activation
            a = _act(name, z)
            cache += [z, a]
        return a, cache

    def __call__(self, x, params=None):
        return self.forward(x, params)[0]

    def backward(self, cache, dy, params=None, need_input_grad=False):
        """Gradients of ``sum(dy * y)`` w.r.t. the parameters (and optionally the input)."""
        params = self.params if params is None else params
        grads = [None] * len(params)
        delta = dy
        for i in reversed(range(self.n_layers)):
            a_in = cache[2 * i]
            z, a = cache[2 * i + 1], cache[2 * i + 2]
            name = self.out_activation if i == self.n_layers - 1 else self.activation
            delta = delta * _act_grad(name, z, a)
            grads[2 * i] = a_in.reshape(-1, a_in.shape[-1]).T @ delta.reshape(-1, delta.shape[-1])
            grads[2 * i + 1] = delta.reshape(-1, delta.shape[-1]).sum(axis=0)
            if i > 0 or need_input_grad:
                delta = delta @ params[2 * i].T
        if need_input_grad:
            return grads, delta
        return grads


class ElmanRNN:
    """Single tanh recurrent layer followed by a linear read-out.

    ``forward`` takes inputs (T, B, n_in), an initial carry (B, H) and a
    (T, B) mask of episode starts; the carry is zeroed where a new episode
    begins.  ``backward`` runs truncated BPTT over the T steps given.
    """

    def __init__(self, n_in, n_hidden, n_out, rng=None, out_scale=1.0):
        rng = np.random.default_rng(0) if rng is None else rng
        self.n_in, self.n_hidden, self.n_out = int(n_in), int(n_hidden), int(n_out)
        w_x = rng.uniform(-1, 1, (n_in, n_hidden)) * np.sqrt(3.0 / n_in)
        q, _ = np.linalg.qr(rng.normal(size=(n_hidden, n_hidden)))
        w_h = 0.9 * q
        w_o = rng.uniform(-1, 1, (n_hidden, n_out)) * np.sqrt(3.0 / n_hidden) * out_scale
        self.params = [w_x, w_h, np.zeros(n_hidden), w_o, np.zeros(n_out)]

    def initial_carry(self, batch: int) -> np.ndarray:
        return np.zeros((batch, self.n_hidden))

    def step(self, x, h, params=None):
        """One step for acting: x (B, n_in), h (B, H) -> (y, h_next)."""
        w_x, w_h, b_h, w_o, b_o = self.params if params is None else params
        h_next = np.tanh(x @ w_x + h @ w_h + b_h)
        return h_next @ w_o + b_o, h_next

    def forward(self, xs, h0, starts, params=None):
        w_x, w_h, b_h, w_o, b_o = self.params if params is None else params
        T = xs.shape[0]
        hs = np.empty((T,) + h0.shape)
        prev = np.empty_like(hs)
        h = h0
        for t in range(T):
            h = h * (1.0 - starts[t])[:, None]
            prev[t] = h
            h = np.tanh(xs[t] @ w_x + h @ w_h + b_h)
            hs[t] = h
        ys = hs @ w_o + b_o
        return ys, (xs, prev, hs, starts)

    def __call__(self, xs, h0, starts, params=None):
        return self.forward(xs, h0, starts, params)[0]

    def backward(self, cache, dys, params=None):
        w_x, w_h, b_h, w_o, b_o = self.params if params is None else params
        xs, prev, hs, starts = cache
        T = xs.shape[0]
        g_wo = np.einsum("tbh,tbo->ho", hs, dys)
        g_bo = dys.sum(axis=(0, 1))
        g_wx = np.zeros_like(w_x)
        g_wh = np.zeros_like(w_h)
        g_bh = np.zeros_like(b_h)
        dh_next = np.zeros_like(hs[0])
        for t in reversed(range(T)):
            dh = dys[t] @ w_o.T + dh_next
            dz = dh * (1.0 - hs[t] ** 2)
            g_wx += xs[t].T @ dz
            g_wh += prev[t].T @ dz
            g_bh += dz.sum(axis=0)
            dh_next = (dz @ w_h.T) * (1.0 - starts[t])[:, None]
        return [g_wx, g_wh, g_bh, g_wo, g_bo]


class Adam:
    """Adam over a list of parameter arrays, updated in place."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict:
        return {"t": self.t, "m": [a.copy() for a in self.m], "v": [a.copy() for a in self.v]}

    def load_state(self, state: dict) -> None:
        self.t = int(state["t"])
        self.m = [np.array(a, dtype=float) for a in state["m"]]
        self.v = [np.array(a, dtype=float) for a in state["v"]]


def global_norm(grads) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def clip_by_global_norm(grads, max_norm: float):
    norm = global_norm(grads)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        grads = [g * scale for g in grads]
    return grads, norm
