"""Gait generator network: (speed, right leg, left leg) -> 32x6 joint-angle cycle."""
from __future__ import annotations

import csv
import hashlib
import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import nn
from .spectral import N_FRAMES, N_JOINTS, GaitCycle, Morphology

log = logging.getLogger(__name__)

N_INPUT = 3
N_OUTPUT = N_FRAMES * N_JOINTS
PARAM_FORMAT_VERSION = 1


class InvalidStateError(RuntimeError):
    pass


class TrainingFailure(RuntimeError):
    def __init__(self, message, checkpoint):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass(frozen=True)
class GaitNetInput:
    desired_speed: float
    leg_length_right: float
    leg_length_left: float

    def __post_init__(self):
        if not 0.0 <= self.desired_speed <= 2.5:
            raise ValueError(f"desired speed {self.desired_speed} outside [0, 2.5]")
        for leg in (self.leg_length_right, self.leg_length_left):
            if not 0.3 < leg < 1.5:
                raise ValueError(f"leg length {leg} outside (0.3, 1.5)")

    def as_array(self) -> np.ndarray:
        return np.array([self.desired_speed, self.leg_length_right, self.leg_length_left])

    @classmethod
    def from_cycle(cls, cycle: GaitCycle) -> "GaitNetInput":
        m = cycle.morphology
        return cls(cycle.speed, m.leg_length_right, m.leg_length_left)


@dataclass
class GaitNetParams:
    sizes: list
    activation: str
    weights: list          # [W0, b0, W1, b1, ...], W as (fan_in, fan_out)
    in_mean: np.ndarray
    in_std: np.ndarray
    out_mean: np.ndarray
    out_std: np.ndarray

    def __post_init__(self):
        if self.sizes[0] != N_INPUT or self.sizes[-1] != N_OUTPUT:
            raise ValueError(f"layer sizes must run {N_INPUT} -> ... -> {N_OUTPUT}")
        for i, (a, b) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            if self.weights[2 * i].shape != (a, b) or self.weights[2 * i + 1].shape != (b,):
                raise ValueError(f"layer {i} weights do not match sizes")
        if np.any(self.in_std <= 0) or np.any(self.out_std <= 0):
            raise ValueError("normalization std must be positive")

    def network(self) -> nn.MLP:
        net = nn.MLP.__new__(nn.MLP)
        net.sizes = list(self.sizes)
        net.activation = self.activation
        net.out_activation = "linear"
        net.params = self.weights
        return net

    def copy(self) -> "GaitNetParams":
        return GaitNetParams(list(self.sizes), self.activation, [w.copy() for w in self.weights],
                             self.in_mean.copy(), self.in_std.copy(),
                             self.out_mean.copy(), self.out_std.copy())

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps({"sizes": self.sizes, "activation": self.activation}).encode())
        for a in [*self.weights, self.in_mean, self.in_std, self.out_mean, self.out_std]:
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return h.hexdigest()


def init_params(hidden: Sequence[int] = (512, 512), activation: str = "relu", seed: int = 0,
                in_mean=None, in_std=None, out_mean=None, out_std=None) -> GaitNetParams:
    """He-uniform initialised network with identity normalization unless given."""
    sizes = [N_INPUT, *hidden, N_OUTPUT]
    net = nn.MLP(sizes, activation=activation, rng=np.random.default_rng(seed))
    return GaitNetParams(
        sizes, activation, net.params,
        np.zeros(N_INPUT) if in_mean is None else np.asarray(in_mean, float),
        np.ones(N_INPUT) if in_std is None else np.asarray(in_std, float),
        np.zeros(N_OUTPUT) if out_mean is None else np.asarray(out_mean, float),
        np.ones(N_OUTPUT) if out_std is None else np.asarray(out_std, float))


def normalize(x, mean, std):
    return (x - mean) / std


def denormalize(z, mean, std):
    return z * std + mean


def predict(params: GaitNetParams, x: np.ndarray) -> np.ndarray:
    """Batch prediction: (B, 3) inputs -> (B, 192) flattened frames."""
    xn = normalize(np.atleast_2d(x), params.in_mean, params.in_std)
    return denormalize(params.network()(xn), params.out_mean, params.out_std)


def forward(params: GaitNetParams, x: GaitNetInput) -> GaitCycle:
    if not all(np.all(np.isfinite(w)) for w in params.weights):
        raise InvalidStateError("non-finite network parameters")
    y = predict(params, x.as_array())[0]
    frames = y.reshape(N_FRAMES, N_JOINTS)
    if not np.all(np.isfinite(frames)):
        raise InvalidStateError("network produced non-finite output")
    cycle = GaitCycle.__new__(GaitCycle)  # skip the |angle| < pi check for raw net output
    cycle.frames = frames
    cycle.speed = x.desired_speed
    cycle.morphology = Morphology(x.leg_length_right, x.leg_length_left)
    return cycle


def loss_and_gradient(params: GaitNetParams, xs: np.ndarray, targets: np.ndarray):
    """Mean squared error over every output and batch item, with its gradient.

    ``targets`` may be (B, 32, 6) or (B, 192).  The gradient is a list shaped
    like ``params.weights``.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    targets = np.asarray(targets, dtype=float).reshape(xs.shape[0], N_OUTPUT)
    if xs.shape[0] == 0:
        raise ValueError("empty batch")
    net = params.network()
    y_n, cache = net.forward(normalize(xs, params.in_mean, params.in_std))
    err = denormalize(y_n, params.out_mean, params.out_std) - targets
    loss = float(np.mean(err * err))
    dy = (2.0 / err.size) * err * params.out_std
    return loss, net.backward(cache, dy)


def mse(params: GaitNetParams, xs: np.ndarray, targets: np.ndarray) -> float:
    err = predict(params, xs) - np.asarray(targets).reshape(len(xs), N_OUTPUT)
    return float(np.mean(err * err))


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 64
    max_epochs: int = 10_000
    patience: int = 50
    seed: int = 0
    hidden: tuple = (512, 512)
    activation: str = "relu"

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning rate must be non-negative")
        if self.batch_size < 1 or self.patience < 1 or self.max_epochs < 1:
            raise ValueError("batch size, patience and max epochs must be >= 1")
        self.hidden = tuple(int(h) for h in self.hidden)


@dataclass
class TrainResult:
    params: GaitNetParams
    curve: list = field(default_factory=list)  # (epoch, train_loss, val_loss)
    best_epoch: int = 0
    best_val: float = math.inf
    test_loss: float = math.nan


def dataset_arrays(dataset) -> tuple[np.ndarray, np.ndarray]:
    """Stack ``(GaitNetInput, GaitCycle)`` pairs (or bare cycles) into arrays."""
    xs, ys = [], []
    for item in dataset:
        if isinstance(item, GaitCycle):
            x, cyc = GaitNetInput.from_cycle(item), item
        else:
            x, cyc = item
        xs.append(x.as_array())
        ys.append(cyc.frames.reshape(-1))
    return np.array(xs), np.array(ys)


def split_indices(n: int, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Deterministic 80/10/10 train/val/test split."""
    perm = np.random.default_rng(seed).permutation(n)
    n_val = max(1, n // 10)
    n_test = max(1, n // 10) if n >= 3 else 0
    n_train = n - n_val - n_test
    return perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]


def train(dataset, config: TrainConfig, on_epoch=None) -> TrainResult:
    """Adam training with early stopping on validation MSE.

    Returns the parameters from the epoch with the lowest validation loss;
    training stops once the validation loss has not improved for
    ``patience`` consecutive epochs.
    """
    xs, ys = dataset_arrays(dataset)
    if len(xs) < 2 * config.batch_size:
        raise ValueError(f"dataset of {len(xs)} items is smaller than twice the batch size")
    tr, va, te = split_indices(len(xs), config.seed)
    x_tr, y_tr = xs[tr], ys[tr]
    params = init_params(config.hidden, config.activation, config.seed,
                         x_tr.mean(0), _safe_std(x_tr), y_tr.mean(0), _safe_std(y_tr))
    opt = nn.Adam(params.weights, lr=config.learning_rate)
    rng = np.random.default_rng(config.seed + 1)

    result = TrainResult(params.copy())
    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(x_tr))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            b = order[start:start + config.batch_size]
            loss, grads = loss_and_gradient(params, x_tr[b], y_tr[b])
            if not math.isfinite(loss):
                raise TrainingFailure(f"loss diverged at epoch {epoch}", result.params)
            total += loss * len(b)
            opt.step(params.weights, grads)
        train_loss = total / len(x_tr)
        val = mse(params, xs[va], ys[va])
        if not math.isfinite(val):
            raise TrainingFailure(f"validation loss diverged at epoch {epoch}", result.params)
        result.curve.append((epoch, train_loss, val))
        if on_epoch is not None:
            on_epoch(epoch, train_loss, val)
        if val < result.best_val:
            result.params, result.best_val, result.best_epoch = params.copy(), val, epoch
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    if len(te):
        result.test_loss = mse(result.params, xs[te], ys[te])
    return result


def _safe_std(a: np.ndarray) -> np.ndarray:
    s = a.std(axis=0)
    return np.where(s > 1e-8, s, 1.0)


PAPER_GRID = {
    "layers": (1, 2, 3),
    "widths": (128, 256, 512),
    "learning_rates": (1e-3, 1e-4, 1e-5),
    "batch_sizes": (32, 64, 128),
    "activations": ("relu", "tanh"),
}


def grid_search(dataset, grid: dict = PAPER_GRID, seeds: int = 5, max_epochs: int = 10_000,
                patience: int = 50) -> list[dict]:
    """Train every grid configuration ``seeds`` times; rank by mean validation loss."""
    combos = list(itertools.product(grid["layers"], grid["widths"], grid["learning_rates"],
                                    grid["batch_sizes"], grid["activations"]))
    if not combos:
        raise ValueError("empty grid")
    rows = []
    for layers, width, lr, bs, act in combos:
        losses = []
        for s in range(seeds):
            cfg = TrainConfig(lr, bs, max_epochs, patience, s, (width,) * layers, act)
            losses.append(train(dataset, cfg).best_val)
        rows.append({"layers": layers, "width": width, "learning_rate": lr, "batch_size": bs,
                     "activation": act, "val_mean": float(np.mean(losses)),
                     "val_std": float(np.std(losses)), "runs": len(losses)})
        log.info("grid %s -> %.3e", rows[-1], rows[-1]["val_mean"])
    rows.sort(key=lambda r: r["val_mean"])
    return rows


# -- persistence -------------------------------------------------------------

def save_params(params: GaitNetParams, path: str | Path) -> None:
    """JSON record; weights row-major, floats written with full repr precision."""
    doc = {
        "format": "specwalk-gaitnet",
        "version": PARAM_FORMAT_VERSION,
        "sizes": list(params.sizes),
        "activation": params.activation,
        "in_mean": params.in_mean.tolist(), "in_std": params.in_std.tolist(),
        "out_mean": params.out_mean.tolist(), "out_std": params.out_std.tolist(),
        "layers": [{"weight": params.weights[2 * i].tolist(), "bias": params.weights[2 * i + 1].tolist()}
                   for i in range(len(params.sizes) - 1)],
    }
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n", encoding="utf-8")


def load_params(path: str | Path) -> GaitNetParams:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != "specwalk-gaitnet" or doc.get("version") != PARAM_FORMAT_VERSION:
        raise ValueError(f"{path}: not a version-{PARAM_FORMAT_VERSION} gait-net file")
    weights = []
    for layer in doc["layers"]:
        weights += [np.array(layer["weight"], dtype=float), np.array(layer["bias"], dtype=float)]
    return GaitNetParams(doc["sizes"], doc["activation"], weights,
                         np.array(doc["in_mean"]), np.array(doc["in_std"]),
                         np.array(doc["out_mean"]), np.array(doc["out_std"]))


def write_curve(path: str | Path, curve) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"])
        for epoch, tr, va in curve:
            w.writerow([epoch, repr(float(tr)), repr(float(va))])


def write_grid_table(path: str | Path, rows: list[dict]) -> None:
    keys = ["rank", "layers", "width", "learning_rate", "batch_size", "activation",
            "val_mean", "val_std", "runs"]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, keys, lineterminator="\n")
        w.writeheader()
        for i, r in enumerate(rows, 1):
            w.writerow({"rank": i, **r})
