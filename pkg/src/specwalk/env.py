"""Closed-loop walking environment.

A policy acts at 100 Hz on a 55-D observation; its torques pass through a
first-order filter and are held over ten 1 ms physics steps.  Joint
references come from a 32-frame gait cycle played back at 10 frames/s.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import reward as R
from .dynamics import sim
from .dynamics.model import N_ACT, BipedModel
from .gait_net import GaitNetInput, GaitNetParams
from .gait_net import forward as gait_forward
from .spectral import FRAME_RATE, N_FRAMES, N_JOINTS, GaitCycle
from .terrain import TerrainProfile, flat, height_at

POLICY_DT = 0.01
SUBSTEPS = 10
FILTER_BETA = 0.3
MAX_COMMAND_SPEED = 2.2
PREVIEW_STEPS = (0, 1, 10)

OBS_LAYOUT = (
    ("v_ds", 1), ("r_angle", 1), ("v_com", 1),
    ("q_prev", N_ACT), ("q", N_ACT),
    ("q_ref", N_JOINTS), ("q_ref_next", N_JOINTS), ("q_ref_ahead", N_JOINTS),
    ("a_prev", N_ACT), ("qd", N_ACT), ("qd_ref", N_JOINTS),
)
OBS_DIM = sum(n for _, n in OBS_LAYOUT)
assert OBS_DIM == 55


class InvalidActionError(ValueError):
    pass


class InvalidStateError(RuntimeError):
    pass


def obs_slices() -> dict[str, slice]:
    out, i = {}, 0
    for name, n in OBS_LAYOUT:
        out[name] = slice(i, i + n)
        i += n
    return out


@dataclass(frozen=True)
class Observation:
    v_ds: float
    r_angle: float
    v_com: float
    q_prev: np.ndarray
    q: np.ndarray
    q_ref: np.ndarray
    q_ref_next: np.ndarray
    q_ref_ahead: np.ndarray
    a_prev: np.ndarray
    qd: np.ndarray
    qd_ref: np.ndarray

    def as_array(self) -> np.ndarray:
        parts = [np.atleast_1d(np.asarray(getattr(self, name), dtype=float)) for name, _ in OBS_LAYOUT]
        for (name, n), p in zip(OBS_LAYOUT, parts):
            if p.shape != (n,):
                raise ValueError(f"observation field {name} has shape {p.shape}, expected ({n},)")
        return np.concatenate(parts)

    @classmethod
    def from_array(cls, x) -> "Observation":
        x = np.asarray(x, dtype=float)
        if x.shape != (OBS_DIM,):
            raise ValueError(f"observation vector must have {OBS_DIM} entries")
        kw = {}
        for name, sl in obs_slices().items():
            kw[name] = float(x[sl][0]) if sl.stop - sl.start == 1 else x[sl].copy()
        return cls(**kw)


# -- commanded speed ---------------------------------------------------------

@dataclass(frozen=True)
class SpeedProfile:
    """Piecewise-linear commanded speed, held constant past either end."""

    times: tuple
    speeds: tuple

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.speeds, dtype=float)
        if t.ndim != 1 or t.size == 0 or t.shape != v.shape:
            raise ValueError("times and speeds must be equal-length, non-empty sequences")
        if np.any(np.diff(t) <= 0):
            raise ValueError("profile times must be strictly increasing")
        if np.any(v < 0) or np.any(v > MAX_COMMAND_SPEED) or not np.all(np.isfinite(v)):
            raise ValueError(f"commanded speeds must lie in [0, {MAX_COMMAND_SPEED}] m/s")

    @classmethod
    def constant(cls, speed: float) -> "SpeedProfile":
        return cls((0.0,), (float(speed),))

    def __call__(self, t: float) -> float:
        return float(np.interp(t, self.times, self.speeds))

    def to_string(self) -> str:
        return ";".join(f"{t:g}:{v:g}" for t, v in zip(self.times, self.speeds))

    @classmethod
    def parse(cls, text: str) -> "SpeedProfile":
        """``"1.2"`` for a constant, or ``"0:0.5;5:1.5"`` for time:speed knots."""
        if ":" not in text:
            return cls.constant(float(text))
        knots = [k.split(":") for k in text.split(";") if k.strip()]
        return cls(tuple(float(t) for t, _ in knots), tuple(float(v) for _, v in knots))


@dataclass(frozen=True)
class EpisodeConfig:
    commanded_speed: SpeedProfile | float = 1.0
    terrain: TerrainProfile = field(default_factory=flat)
    max_duration: float = 10.0
    rsi_enabled: bool = True
    seed: int = 0
    filter_beta: float = FILTER_BETA

    def __post_init__(self):
        if not isinstance(self.commanded_speed, SpeedProfile):
            object.__setattr__(self, "commanded_speed", SpeedProfile.constant(self.commanded_speed))
        if self.max_duration <= 0:
            raise ValueError("max_duration must be positive")
        if not 0.0 < self.filter_beta <= 1.0:
            raise ValueError("filter_beta must lie in (0, 1]")


# -- reference playback ------------------------------------------------------

class ReferencePlayback:
    """Periodic linear interpolation of a 32-frame cycle.

    ``position`` is measured in frames and wraps modulo 32; playback moves
    ``frame_rate`` frames per second of episode time.
    """

    def __init__(self, cycle: GaitCycle, position: float = 0.0, frame_rate: float = FRAME_RATE):
        self.frames = np.asarray(cycle.frames, dtype=float)
        self.cycle = cycle
        self.frame_rate = frame_rate
        self.position = float(position) % N_FRAMES

    @property
    def phase(self) -> float:
        """Cycle fraction in [0, 1)."""
        return self.position / N_FRAMES

    def advance(self, dt: float) -> None:
        self.position = (self.position + dt * self.frame_rate) % N_FRAMES

    def frame_at(self, offset: float = 0.0) -> np.ndarray:
        """Interpolated joint angles ``offset`` frames from the current position."""
        p = (self.position + offset) % N_FRAMES
        i = int(math.floor(p))
        w = p - i
        return (1.0 - w) * self.frames[i % N_FRAMES] + w * self.frames[(i + 1) % N_FRAMES]

    def velocity_at(self, offset: float = 0.0) -> np.ndarray:
        """Central difference of the neighbouring frames, in rad/s."""
        return (self.frame_at(offset + 1.0) - self.frame_at(offset - 1.0)) * 0.5 * self.frame_rate

    def set_cycle(self, cycle: GaitCycle) -> None:
        self.frames = np.asarray(cycle.frames, dtype=float)
        self.cycle = cycle


def reference_preview(playback: ReferencePlayback, offsets: Sequence[float] = PREVIEW_STEPS,
                      step_dt: float = POLICY_DT):
    """Current and preview references plus the current reference velocity.

    ``offsets`` count policy steps of ``step_dt`` seconds, so +10 steps at
    100 Hz is exactly one frame ahead.
    """
    per_step = step_dt * playback.frame_rate
    frames = tuple(playback.frame_at(k * per_step) for k in offsets)
    return frames + (playback.velocity_at(0.0),)


# -- reference sources -------------------------------------------------------

class GaitNetReference:
    """Reference cycles from a trained gait network, cached per speed."""

    def __init__(self, params: GaitNetParams, leg_right: float, leg_left: float):
        self.params = params
        self.legs = (float(leg_right), float(leg_left))
        self._cache: dict[float, GaitCycle] = {}

    def __call__(self, speed: float) -> GaitCycle:
        if speed not in self._cache:
            if len(self._cache) > 256:
                self._cache.clear()
            self._cache[speed] = gait_forward(self.params, GaitNetInput(speed, *self.legs))
        return self._cache[speed]


class FixedReference:
    """The same cycle whatever the commanded speed."""

    def __init__(self, cycle: GaitCycle):
        self.cycle = cycle

    def __call__(self, speed: float) -> GaitCycle:
        return self.cycle


# -- environment -------------------------------------------------------------

@dataclass
class StepRecord:
    time: float
    v_ds: float
    v_com: float
    q: np.ndarray
    action: np.ndarray
    reward: R.RewardBreakdown
    done_reason: str


class WalkingEnv:
    """One simulated episode at a time.

    Args:
        model: biped parameters.
        reference: callable mapping a commanded speed to a ``GaitCycle``.
        config: episode settings; ``reset`` can swap it.
        schedule: imitation-decay schedule; ``training_step`` selects the
            point on it and is set by the trainer.
    """

    def __init__(self, model: BipedModel, reference: Callable[[float], GaitCycle],
                 config: EpisodeConfig | None = None, schedule: R.DecaySchedule | None = None):
        self.model = model
        self.reference = reference
        self.config = config or EpisodeConfig()
        self.schedule = schedule or R.DecaySchedule()
        self.training_step = 0
        self.state: sim.BipedState | None = None
        self.done = True
        self.done_reason = ""
        self.trace: list[StepRecord] = []
        self.record_trace = False

    # -- lifecycle ---------------------------------------------------------
    def reset(self, config: EpisodeConfig | None = None, seed: int | None = None) -> np.ndarray:
        if config is not None:
            self.config = config
        cfg = self.config
        self.rng = np.random.default_rng(cfg.seed if seed is None else seed)
        speed = cfg.commanded_speed(0.0)
        self._ref_speed = speed
        cycle = self.reference(speed)
        position = self.rng.uniform(0.0, N_FRAMES) if cfg.rsi_enabled else 0.0
        self.playback = ReferencePlayback(cycle, position)
        self.state = sim.set_pose_from_reference(
            self.model, self.playback.frame_at(), self.playback.velocity_at(), 0.0, cfg.terrain,
            base_velocity=(speed, 0.0))
        self.time = 0.0
        self.steps = 0
        self.filtered = np.zeros(N_ACT)
        self.a_prev = np.zeros(N_ACT)
        self.q_prev = self.state.joint_angles.copy()
        self.com = sim.com_state(self.model, self.state)
        self.v_com = self.com[2]
        self.done = False
        self.done_reason = ""
        self.trace = []
        return self.observe().as_array()

    def observe(self) -> Observation:
        q_ref, q_next, q_ahead, qd_ref = reference_preview(self.playback)
        return Observation(
            v_ds=self.config.commanded_speed(self.time), r_angle=self.config.terrain.nominal_angle,
            v_com=self.v_com, q_prev=self.q_prev.copy(), q=self.state.joint_angles.copy(),
            q_ref=q_ref, q_ref_next=q_next, q_ref_ahead=q_ahead, a_prev=self.a_prev.copy(),
            qd=self.state.joint_velocities.copy(), qd_ref=qd_ref)

    def _refresh_reference(self) -> None:
        speed = self.config.commanded_speed(self.time)
        if speed != self._ref_speed:
            self._ref_speed = speed
            self.playback.set_cycle(self.reference(speed))

    def step(self, action) -> tuple[np.ndarray, R.RewardBreakdown, bool]:
        if self.done or self.state is None:
            raise InvalidStateError("episode is not active; call reset()")
        a = np.asarray(action, dtype=float)
        if a.shape != (N_ACT,):
            raise InvalidActionError(f"action must have {N_ACT} torques")
        if not np.all(np.isfinite(a)):
            raise InvalidActionError("non-finite action")
        lim = self.model.torque_limits
        a = np.clip(a, -lim, lim)
        cfg = self.config
        target = cfg.commanded_speed(self.time)

        self.filtered = self.filtered + cfg.filter_beta * (a - self.filtered)
        q_before = self.state.joint_angles.copy()
        x_before = self.com[0]
        blowup = False
        try:
            self.state, contacts = sim.step_n(self.model, self.state, self.filtered, cfg.terrain, SUBSTEPS)
        except sim.SimulationBlowup as err:
            blowup = True
            self.state = err.state
            contacts = sim.contact_forces(self.model, self.state, cfg.terrain)
        self.steps += 1
        self.time = self.steps * POLICY_DT
        self.com = sim.com_state(self.model, self.state)
        self.v_com = (self.com[0] - x_before) / POLICY_DT
        self.playback.advance(POLICY_DT)
        self._refresh_reference()

        joints = self.state.joint_angles
        inputs = R.RewardInputs(
            q=joints[1:], q_ref=self.playback.frame_at(), qd=self.state.joint_velocities[1:],
            qd_ref=self.playback.velocity_at(), z_com=self.com[1], torso_pitch=self.state.q[2],
            speed=self.v_com, target_speed=target, force_right=contacts.F_R, force_left=contacts.F_L,
            c_right=contacts.c_R, c_left=contacts.c_L, z_right=contacts.z_R, z_left=contacts.z_L,
            ground_right=_ground(cfg.terrain, contacts.x_R), ground_left=_ground(cfg.terrain, contacts.x_L),
            torques=np.clip(self.filtered, -lim, lim))
        rew = R.total_reward(self.training_step, self.schedule, inputs)
        if blowup and not rew.done:
            r_gait = rew.r_gait - rew.r_alive + R.TERMINAL_REWARD
            rew = replace(rew, r_alive=R.TERMINAL_REWARD, r_gait=r_gait, done=True,
                          r_total=rew.w_imitation * rew.r_imitation + rew.w_gait * r_gait)

        if blowup:
            self.done_reason = "blowup"
        elif rew.done:
            self.done_reason = "torso" if abs(self.state.q[2]) > R.TORSO_LIMIT else "height"
        elif self.time >= cfg.max_duration - 1e-9:
            self.done_reason = "time_limit"
        self.done = bool(self.done_reason)

        self.q_prev = q_before
        self.a_prev = a
        if self.record_trace:
            self.trace.append(StepRecord(self.time, target, self.v_com, joints.copy(), a.copy(), rew,
                                         self.done_reason))
        return self.observe().as_array(), rew, self.done

    @property
    def terminated(self) -> bool:
        """True when the episode ended by falling rather than by the time limit."""
        return self.done and self.done_reason not in ("", "time_limit")


def _ground(terrain: TerrainProfile, x: float) -> float:
    return float(height_at(terrain, x))


def make_env(model: BipedModel, gait_params: GaitNetParams, config: EpisodeConfig | None = None,
             schedule: R.DecaySchedule | None = None) -> WalkingEnv:
    ref = GaitNetReference(gait_params, model.leg_length_right, model.leg_length_left)
    return WalkingEnv(model, ref, config, schedule)


def reset(model: BipedModel, gait_params: GaitNetParams, config: EpisodeConfig):
    """Fresh environment and its first observation: (env, state, observation)."""
    env = make_env(model, gait_params, config)
    obs = env.reset()
    return env, env.state, obs


TRACE_HEADER = (["t", "v_ds", "v_com"] + [f"q{i}" for i in range(N_ACT)] + [f"a{i}" for i in range(N_ACT)]
                + ["r_total", "phase", "done_reason"])


def write_episode_trace(path: str | Path, records: Sequence[StepRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for r in records:
            w.writerow([repr(r.time), repr(r.v_ds), repr(float(r.v_com))]
                       + [repr(float(v)) for v in r.q] + [repr(float(v)) for v in r.action]
                       + [repr(r.reward.r_total), r.reward.phase.value, r.done_reason])
