"""Rollout collection, the training loop and checkpoint files."""
from __future__ import annotations

import csv
import io
import json
import logging
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .. import nn
from .. import reward as R
from ..env import OBS_DIM, EpisodeConfig, WalkingEnv, obs_slices
from ..terrain import make_training_terrain
from .core import PpoConfig, UpdateFailure, compute_gae, ppo_update, standardize
from .policy import ActorCritic

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "specwalk-ppo"
CHECKPOINT_VERSION = 1
OBS_CLIP = 10.0
_REFERENCE_FIELDS = ("q_ref", "q_ref_next", "q_ref_ahead", "qd_ref")


class RunningStats:
    """Running mean and variance of observations (parallel Welford merge)."""

    def __init__(self, dim: int):
        self.mean = np.zeros(dim)
        self.var = np.ones(dim)
        self.count = 1e-4

    def update(self, x: np.ndarray) -> None:
        x = np.atleast_2d(x)
        b_mean, b_var, b_n = x.mean(axis=0), x.var(axis=0), x.shape[0]
        delta = b_mean - self.mean
        total = self.count + b_n
        self.mean = self.mean + delta * b_n / total
        m2 = self.var * self.count + b_var * b_n + delta * delta * self.count * b_n / total
        self.var = m2 / total
        self.count = total

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return np.clip((x - self.mean) / np.sqrt(self.var + 1e-8), -OBS_CLIP, OBS_CLIP)


@dataclass
class RolloutBuffer:
    """(T, N) storage for one on-policy window of N lockstep workers."""

    obs: np.ndarray
    u: np.ndarray
    log_prob: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    starts: np.ndarray
    carry_actor: np.ndarray
    carry_critic: np.ndarray
    advantages: np.ndarray = None
    returns: np.ndarray = None

    @classmethod
    def empty(cls, T: int, N: int, obs_dim: int, act_dim: int, h_actor: int, h_critic: int):
        z = lambda *s: np.zeros(s)
        return cls(z(T, N, obs_dim), z(T, N, act_dim), z(T, N), z(T, N), z(T, N), z(T, N), z(T, N),
                   z(T, N, h_actor), z(T, N, h_critic))

    def finish(self, last_value: np.ndarray, gamma: float, lam: float) -> None:
        adv, ret = compute_gae(self.rewards, self.values, self.dones, last_value, gamma, lam)
        self.returns = ret
        self.advantages = standardize(adv)


@dataclass
class EpisodeLog:
    update: int
    step: int
    ret: float
    length: int
    reason: str


@dataclass
class TrainState:
    policy: ActorCritic
    optimizer: nn.Adam
    stats: RunningStats
    rng: np.random.Generator
    config: PpoConfig
    step: int = 0
    update: int = 0
    gait_digest: str = ""
    history: list = field(default_factory=list)
    episodes: list = field(default_factory=list)


def new_train_state(config: PpoConfig, action_scale, gait_digest: str = "") -> TrainState:
    policy = ActorCritic(config.arch, OBS_DIM, 7, action_scale=action_scale, seed=config.seed)
    return TrainState(policy, nn.Adam(policy.params, lr=config.lr_start, eps=1e-5), RunningStats(OBS_DIM),
                      np.random.default_rng(config.seed), config, gait_digest=gait_digest)


def training_episode(config: PpoConfig, rng: np.random.Generator) -> EpisodeConfig:
    """Randomized training conditions: flat or gentle ramp, random target speed."""
    return EpisodeConfig(commanded_speed=float(rng.uniform(0.0, config.max_train_speed)),
                         terrain=make_training_terrain(rng), max_duration=config.episode_seconds,
                         rsi_enabled=config.rsi, seed=int(rng.integers(2**31)))


def _mask_reference(obs: np.ndarray) -> np.ndarray:
    obs = obs.copy()
    sl = obs_slices()
    for name in _REFERENCE_FIELDS:
        obs[..., sl[name]] = 0.0
    return obs


def collect_rollout(state: TrainState, envs: list[WalkingEnv]) -> RolloutBuffer:
    """Run every worker for ``n_steps`` policy steps from fresh episodes."""
    cfg, policy, rng = state.config, state.policy, state.rng
    N, T = len(envs), cfg.n_steps
    carry = policy.initial_carry(N)
    buf = RolloutBuffer.empty(T, N, OBS_DIM, policy.act_dim, carry[0].shape[1], carry[1].shape[1])
    raw = np.stack([env.reset(training_episode(cfg, rng)) for env in envs])
    starts = np.ones(N)
    ep_ret = np.zeros(N)
    ep_len = np.zeros(N, dtype=int)

    def prepare(o):
        o = o if cfg.reference_obs else _mask_reference(o)
        return o

    for t in range(T):
        o = prepare(raw)
        state.stats.update(o)
        o = state.stats.normalize(o)
        live = (1.0 - starts)[:, None]
        carry = (carry[0] * live, carry[1] * live)
        buf.obs[t], buf.starts[t] = o, starts
        buf.carry_actor[t], buf.carry_critic[t] = carry
        u, torques, logp, v, carry = policy.sample(o, carry, rng)
        buf.u[t], buf.log_prob[t], buf.values[t] = u, logp, v
        starts = np.zeros(N)
        for i, env in enumerate(envs):
            env.training_step = state.step
            obs_i, rew, done = env.step(torques[i])
            r = rew.r_total
            ep_ret[i] += r
            ep_len[i] += 1
            if done:
                if not env.terminated:
                    # time limit: bootstrap the cut-off tail instead of treating it as terminal
                    o_last = state.stats.normalize(prepare(obs_i)[None])
                    c_i = (carry[0][i:i + 1], carry[1][i:i + 1])
                    r += cfg.gamma * float(policy.step(o_last, c_i)[1][0])
                state.episodes.append(EpisodeLog(state.update, state.step, float(ep_ret[i]),
                                                 int(ep_len[i]), env.done_reason))
                ep_ret[i], ep_len[i] = 0.0, 0
                obs_i = env.reset(training_episode(cfg, rng))
                starts[i] = 1.0
            buf.rewards[t, i] = r
            buf.dones[t, i] = float(done)
            raw[i] = obs_i
            state.step += 1
    o = state.stats.normalize(prepare(raw))
    live = (1.0 - starts)[:, None]
    _, last_value, _ = policy.step(o, (carry[0] * live, carry[1] * live))
    buf.finish(last_value, cfg.gamma, cfg.lam)
    return buf


def make_envs(env_factory: Callable[[], WalkingEnv], config: PpoConfig) -> list[WalkingEnv]:
    envs = []
    for _ in range(config.n_workers):
        env = env_factory()
        env.schedule = R.DecaySchedule(config.alpha, config.total_steps, imitation=config.imitation)
        envs.append(env)
    return envs


TRAIN_LOG_HEADER = ["update", "step", "mean_return", "mean_length", "clip_frac", "approx_kl", "lr",
                    "entropy_coef", "w_imit", "w_gait"]


def train_policy(env_factory: Callable[[], WalkingEnv], config: PpoConfig, out_dir: str | Path | None = None,
                 gait_digest: str = "", resume: TrainState | None = None,
                 stop_after_updates: int | None = None) -> TrainState:
    """Alternate rollout collection and PPO updates until ``total_steps``.

    Each update writes ``checkpoint_XXXX.npz`` (every ``checkpoint_every``
    updates) plus ``train_log.csv`` and ``episodes.csv`` into ``out_dir``.
    """
    envs = make_envs(env_factory, config)
    state = resume or new_train_state(config, envs[0].model.torque_limits, gait_digest)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    per_update = config.n_steps * config.n_workers
    done_updates = 0
    while state.step + per_update <= config.total_steps or state.update == 0:
        first_episode = len(state.episodes)
        buf = collect_rollout(state, envs)
        try:
            diag = ppo_update(buf, state.policy, state.optimizer, config, state.step, state.rng)
        except UpdateFailure:
            if out is not None:
                save_checkpoint(out / "checkpoint_failed.npz", state)
            raise
        state.update += 1
        eps = state.episodes[first_episode:]
        w_imit, w_gait = envs[0].schedule.weights(state.step)
        row = {
            "update": state.update, "step": state.step,
            "mean_return": float(np.mean([e.ret for e in eps])) if eps else float("nan"),
            "mean_length": float(np.mean([e.length for e in eps])) if eps else float("nan"),
            "clip_frac": diag["clip_frac"], "approx_kl": diag["approx_kl"], "lr": diag["lr"],
            "entropy_coef": diag["entropy_coef"], "w_imit": w_imit, "w_gait": w_gait,
        }
        state.history.append(row)
        log.info("update %d step %d return %.2f length %.1f", state.update, state.step,
                 row["mean_return"], row["mean_length"])
        if out is not None:
            write_train_log(out / "train_log.csv", state.history)
            write_episode_log(out / "episodes.csv", state.episodes[first_episode:],
                              append=state.update > 1)
            if state.update % config.checkpoint_every == 0:
                save_checkpoint(out / f"checkpoint_{state.update:04d}.npz", state)
        done_updates += 1
        if stop_after_updates is not None and done_updates >= stop_after_updates:
            break
    if out is not None:
        save_checkpoint(out / "checkpoint_final.npz", state)
    return state


def write_train_log(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAIN_LOG_HEADER)
        for r in rows:
            w.writerow([r["update"], r["step"]] + [repr(float(r[k])) for k in TRAIN_LOG_HEADER[2:]])


EPISODE_LOG_HEADER = ["update", "step", "return", "length", "reason"]


def write_episode_log(path: str | Path, episodes: list[EpisodeLog], append: bool = False) -> None:
    append = append and Path(path).exists()
    with open(path, "a" if append else "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if not append:
            w.writerow(EPISODE_LOG_HEADER)
        for e in episodes:
            w.writerow([e.update, e.step, repr(e.ret), e.length, e.reason])


# -- checkpoints -----------------------------------------------------------

def _npy_bytes(a: np.ndarray) -> bytes:
    bio = io.BytesIO()
    np.lib.format.write_array(bio, np.ascontiguousarray(a), allow_pickle=False)
    return bio.getvalue()


def write_npz(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    """npz with fixed timestamps and entry order, so equal inputs give equal bytes."""
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            info.external_attr = 0o644 << 16
            zf.writestr(info, _npy_bytes(np.asarray(arrays[name])))


def save_checkpoint(path: str | Path, state: TrainState) -> None:
    p = state.policy
    meta = {
        "format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "arch": p.arch,
        "obs_dim": p.obs_dim, "act_dim": p.act_dim, "step": state.step, "update": state.update,
        "gait_digest": state.gait_digest, "config": asdict(state.config),
        "rng": state.rng.bit_generator.state, "adam_t": state.optimizer.t,
        "stats_count": state.stats.count, "n_params": len(p.params), "history": state.history,
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
              "action_scale": p.action_scale, "obs_mean": state.stats.mean, "obs_var": state.stats.var}
    for i, (w, m, v) in enumerate(zip(p.params, state.optimizer.m, state.optimizer.v)):
        arrays[f"param_{i:03d}"] = w
        arrays[f"adam_m_{i:03d}"] = m
        arrays[f"adam_v_{i:03d}"] = v
    write_npz(path, arrays)


def load_checkpoint(path: str | Path) -> TrainState:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path} is not a policy checkpoint")
        if meta["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta['version']}")
        config = PpoConfig(**meta["config"])
        policy = ActorCritic(meta["arch"], meta["obs_dim"], meta["act_dim"], action_scale=z["action_scale"])
        n = meta["n_params"]
        if n != len(policy.params):
            raise ValueError("checkpoint does not match the architecture")
        for i in range(n):
            w = z[f"param_{i:03d}"]
            if w.shape != policy.params[i].shape:
                raise ValueError(f"parameter {i} has shape {w.shape}, expected {policy.params[i].shape}")
            policy.params[i][...] = w
        opt = nn.Adam(policy.params, lr=config.lr_start, eps=1e-5)
        opt.load_state({"t": meta["adam_t"], "m": [z[f"adam_m_{i:03d}"] for i in range(n)],
                        "v": [z[f"adam_v_{i:03d}"] for i in range(n)]})
        stats = RunningStats(meta["obs_dim"])
        stats.mean, stats.var, stats.count = z["obs_mean"].copy(), z["obs_var"].copy(), meta["stats_count"]
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng"]
    return TrainState(policy, opt, stats, rng, config, step=meta["step"], update=meta["update"],
                      gait_digest=meta["gait_digest"], history=meta["history"])


class PolicyController:
    """Deterministic controller from a checkpoint, for evaluation."""

    def __init__(self, state: TrainState):
        self.policy = state.policy
        self.stats = state.stats
        self.reference_obs = state.config.reference_obs
        self.reset()

    def reset(self) -> None:
        self.carry = self.policy.initial_carry(1)

    def __call__(self, obs: np.ndarray, env=None) -> np.ndarray:
        o = obs if self.reference_obs else _mask_reference(obs)
        o = self.stats.normalize(o[None])
        a, self.carry = self.policy.act_deterministic(o, self.carry)
        return a[0]
