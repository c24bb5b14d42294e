"""Per-step reward for reference-guided walking.

The reward blends an imitation part (tracking the generated joint
references) with a gait part (staying upright, matching the commanded
speed, sensible foot contacts and low torque).  A linear schedule moves
weight from the first to the second over the course of training.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from enum import Enum
from pathlib import Path
from typing import Iterable

import numpy as np

from .terrain import TerrainProfile, height_at

FORCE_THRESHOLD = 10.0
SWING_CLEARANCE = 0.15
TERMINAL_REWARD = -100.0

# (position weight, velocity weight) per joint pair; both decay rates are shared.
POS_RATE, VEL_RATE = 5.0, 0.2
JOINT_WEIGHTS = {"hip": (0.75, 0.15), "knee": (0.75, 0.15), "ankle": (0.25, 0.05)}
# Column of each joint in the 6-channel (rh, rk, ra, lh, lk, la) layout.
_PAIRS = {"hip": (0, 3), "knee": (1, 4), "ankle": (2, 5)}

# Bands on CoM height (m) and torso pitch (rad).
Z_GOOD = (0.95, 1.25)
Z_OK = (0.75, 1.45)
TORSO_LIMIT = 0.9


class Phase(str, Enum):
    DOUBLE_SUPPORT = "double_support"
    RIGHT_SWING = "right_swing"
    LEFT_SWING = "left_swing"
    FLIGHT = "flight"


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _pair_norm(delta: np.ndarray, pair: tuple[int, int]) -> float:
    return math.sqrt(delta[pair[0]] ** 2 + delta[pair[1]] ** 2)


def imitation_reward(q, q_ref, qd, qd_ref) -> tuple[float, float, float, float]:
    """Tracking reward over the six leg joints.

    Args:
        q, q_ref: actual and reference angles (rh, rk, ra, lh, lk, la).
        qd, qd_ref: actual and reference angular velocities, same order.

    Returns:
        (total, hip, knee, ankle).
    """
    dq = np.asarray(q, dtype=float) - np.asarray(q_ref, dtype=float)
    dqd = np.asarray(qd, dtype=float) - np.asarray(qd_ref, dtype=float)
    if dq.shape != (6,) or dqd.shape != (6,):
        raise ValueError("imitation terms take 6 joint values")
    parts = []
    for name in ("hip", "knee", "ankle"):
        w_pos, w_vel = JOINT_WEIGHTS[name]
        pair = _PAIRS[name]
        parts.append(w_pos * math.exp(-POS_RATE * _pair_norm(dq, pair))
                     + w_vel * math.exp(-VEL_RATE * _pair_norm(dqd, pair)))
    hip, knee, ankle = parts
    return hip + knee + ankle, hip, knee, ankle


def classify_phase(force_right: float, force_left: float) -> Phase:
    """Gait phase from the vertical ground force under each foot."""
    right_down = force_right >= FORCE_THRESHOLD
    left_down = force_left >= FORCE_THRESHOLD
    if right_down and left_down:
        return Phase.DOUBLE_SUPPORT
    if left_down:
        return Phase.RIGHT_SWING
    if right_down:
        return Phase.LEFT_SWING
    return Phase.FLIGHT


def is_terminal(z_com: float, torso_pitch: float) -> bool:
    return abs(torso_pitch) > TORSO_LIMIT or z_com > Z_GOOD[1] or z_com < Z_OK[0]


def alive_reward(z_com: float, torso_pitch: float) -> tuple[float, bool]:
    """Posture reward and the termination flag.

    Termination wins over the height bands, so any CoM above the upper
    edge of the good band ends the episode.
    """
    if is_terminal(z_com, torso_pitch):
        return TERMINAL_REWARD, True
    if Z_GOOD[0] <= z_com <= Z_GOOD[1]:
        return 0.5, False
    return -0.5, False


def speed_reward(speed: float, target_speed: float) -> float:
    return 0.6 * math.exp(-3.0 * abs(speed - target_speed))


def contact_reward(phase: Phase, c_right: int, c_left: int, z_right: float, z_left: float,
                   ground_right: float, ground_left: float) -> float:
    """Contact-consistency reward from contact counts and swing clearance.

    ``ground_*`` is the terrain height below each foot.
    """
    if phase is Phase.DOUBLE_SUPPORT:
        return sigmoid(2.0 * ((c_left + c_right) - 4))
    if phase is Phase.RIGHT_SWING:
        return (0.5 * sigmoid(-20.0 * abs(z_right - ground_right - SWING_CLEARANCE))
                + 0.5 * sigmoid(2.0 * (c_left - 2)))
    if phase is Phase.LEFT_SWING:
        return (0.5 * sigmoid(-20.0 * abs(z_left - ground_left - SWING_CLEARANCE))
                + 0.5 * sigmoid(2.0 * (c_right - 2)))
    return 0.0


def contact_reward_from_report(phase: Phase, report, terrain: TerrainProfile) -> float:
    """``contact_reward`` fed from a simulator contact report."""
    return contact_reward(phase, report.c_R, report.c_L, report.z_R, report.z_L,
                          float(height_at(terrain, report.x_R)), float(height_at(terrain, report.x_L)))


def torque_penalty(torques) -> float:
    a = np.asarray(torques, dtype=float)
    if a.shape != (7,):
        raise ValueError("torque penalty takes the 7 actuator torques")
    return float(np.sum(np.abs(a))) / 1000.0


@dataclass(frozen=True)
class DecaySchedule:
    """Linear hand-over from imitation to gait weight over ``total_steps``.

    ``imitation=False`` zeroes the imitation weight altogether (a pure task
    reward baseline).
    """

    alpha: float = 0.0
    total_steps: int = 1
    imitation: bool = True

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError("alpha must lie in [0, 1)")
        if self.total_steps <= 0:
            raise ValueError("total_steps must be positive")

    def progress(self, step: int) -> float:
        return min(max(step, 0), self.total_steps) / self.total_steps

    def weights(self, step: int) -> tuple[float, float]:
        """(imitation weight, gait weight) at a training step."""
        shift = self.alpha * self.progress(step)
        return (1.0 - shift if self.imitation else 0.0), 1.0 + shift


@dataclass(frozen=True)
class RewardInputs:
    """Everything one reward evaluation needs, as plain numbers."""

    q: np.ndarray
    q_ref: np.ndarray
    qd: np.ndarray
    qd_ref: np.ndarray
    z_com: float
    torso_pitch: float
    speed: float
    target_speed: float
    force_right: float
    force_left: float
    c_right: int
    c_left: int
    z_right: float
    z_left: float
    ground_right: float
    ground_left: float
    torques: np.ndarray


@dataclass(frozen=True)
class RewardBreakdown:
    r_total: float
    r_imitation: float
    r_hip: float
    r_knee: float
    r_ankle: float
    r_gait: float
    r_alive: float
    r_speed: float
    r_contact: float
    r_torque: float
    w_imitation: float
    w_gait: float
    phase: Phase
    done: bool


def total_reward(step_index: int, schedule: DecaySchedule, inputs: RewardInputs) -> RewardBreakdown:
    """Weighted sum of the imitation and gait parts.

    On termination the -100 alive term sits inside the gait part like any
    other alive value, so the total is always the weighted sum of the two.
    """
    if step_index < 0:
        raise ValueError("step_index must be non-negative")
    r_imit, r_hip, r_knee, r_ankle = imitation_reward(inputs.q, inputs.q_ref, inputs.qd, inputs.qd_ref)
    r_alive, done = alive_reward(inputs.z_com, inputs.torso_pitch)
    r_speed = speed_reward(inputs.speed, inputs.target_speed)
    phase = classify_phase(inputs.force_right, inputs.force_left)
    r_contact = contact_reward(phase, inputs.c_right, inputs.c_left, inputs.z_right, inputs.z_left,
                               inputs.ground_right, inputs.ground_left)
    r_torque = torque_penalty(inputs.torques)
    r_gait = r_alive + r_contact + r_speed - r_torque
    w_imit, w_gait = schedule.weights(step_index)
    return RewardBreakdown(
        r_total=w_imit * r_imit + w_gait * r_gait, r_imitation=r_imit, r_hip=r_hip, r_knee=r_knee,
        r_ankle=r_ankle, r_gait=r_gait, r_alive=r_alive, r_speed=r_speed, r_contact=r_contact,
        r_torque=r_torque, w_imitation=w_imit, w_gait=w_gait, phase=phase, done=done)


REWARD_LOG_HEADER = ["step"] + [f.name for f in fields(RewardBreakdown)]


def write_reward_log(path: str | Path, rows: Iterable[RewardBreakdown], start_step: int = 0) -> None:
    """One CSV row per step; floats use ``repr`` so the file round-trips exactly."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REWARD_LOG_HEADER)
        for i, r in enumerate(rows, start=start_step):
            d = asdict(r)
            w.writerow([i] + [d[k].value if k == "phase" else (int(d[k]) if k == "done" else repr(float(d[k])))
                              for k in REWARD_LOG_HEADER[1:]])


def read_reward_log(path: str | Path) -> list[RewardBreakdown]:
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            kw = {}
            for f in fields(RewardBreakdown):
                v = row[f.name]
                kw[f.name] = Phase(v) if f.name == "phase" else (v == "1" if f.name == "done" else float(v))
            out.append(RewardBreakdown(**kw))
    return out
