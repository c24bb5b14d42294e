"""Python-facing simulator API around the compiled kernels."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..terrain import TerrainProfile, height_at
from . import kernels as K
from .model import BipedModel

DT = 0.001
_ALL_FREE = np.ones(K.N_Q, dtype=np.bool_)
_MAX_SPEED = 1e3


class SimulationBlowup(RuntimeError):
    def __init__(self, message, state):
        super().__init__(message)
        self.state = state


@dataclass
class BipedState:
    q: np.ndarray
    qd: np.ndarray
    time: float = 0.0
    anchors: np.ndarray = field(default_factory=lambda: np.zeros((K.N_CONTACT, 2)))
    active: np.ndarray = field(default_factory=lambda: np.zeros(K.N_CONTACT, dtype=np.bool_))

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).copy()
        self.qd = np.asarray(self.qd, dtype=float).copy()
        if self.q.shape != (K.N_Q,) or self.qd.shape != (K.N_Q,):
            raise ValueError("q and qd must be 9-vectors")

    def copy(self) -> "BipedState":
        return BipedState(self.q, self.qd, self.time, self.anchors.copy(), self.active.copy())

    @property
    def joint_angles(self) -> np.ndarray:
        """The 7 actuated coordinates: torso pitch then the six leg joints."""
        return self.q[2:]

    @property
    def joint_velocities(self) -> np.ndarray:
        return self.qd[2:]


@dataclass
class ContactReport:
    normal: np.ndarray      # (8,) normal force per point
    tangential: np.ndarray  # (8,) signed tangential force per point
    forces: np.ndarray      # (8, 2) world force per point
    points: np.ndarray      # (8, 2) world position per point
    F_R: float
    F_L: float
    c_R: int
    c_L: int
    x_R: float
    z_R: float
    x_L: float
    z_L: float


def _report(forces, fn, ft, pts) -> ContactReport:
    right, left = slice(0, 4), slice(4, 8)
    return ContactReport(
        fn, ft, forces, pts,
        F_R=float(forces[right, 1].sum()), F_L=float(forces[left, 1].sum()),
        c_R=int(np.count_nonzero(fn[right] > 0)), c_L=int(np.count_nonzero(fn[left] > 0)),
        x_R=float(pts[right, 0].mean()), z_R=float(pts[right, 1].mean()),
        x_L=float(pts[left, 0].mean()), z_L=float(pts[left, 1].mean()))


def contact_forces(model: BipedModel, state: BipedState, terrain: TerrainProfile) -> ContactReport:
    """Penalty contact forces for the given configuration (pure; anchors untouched)."""
    forces, fn, ft, _, _, _, pts = K.contact_model(
        state.q, state.qd, state.anchors, state.active, model.pivot_local,
        model.contact_local, model.gains, terrain.kernel_args())
    return _report(forces, fn, ft, pts)


def generalized_torques(model: BipedModel, torques) -> np.ndarray:
    """Clamp the 7 actuator torques and map them onto the 9 coordinates."""
    tau = np.zeros(K.N_Q)
    tau[2:] = np.clip(np.asarray(torques, dtype=float), -model.torque_limits, model.torque_limits)
    return tau


def step(model: BipedModel, state: BipedState, torques, terrain: TerrainProfile,
         dt: float = DT, free: np.ndarray | None = None) -> tuple[BipedState, ContactReport]:
    """Advance one physics step and report contact at the new configuration.

    ``free`` optionally locks coordinates (False = held with zero velocity).
    """
    tau = generalized_torques(model, torques)
    q, qd, _, anchors, active = K.step_kernel(
        state.q, state.qd, state.anchors, state.active, tau,
        _ALL_FREE if free is None else np.asarray(free, dtype=np.bool_), dt, model.gravity,
        model.mass, model.inertia, model.pivot_local, model.com_local, model.contact_local,
        model.gains, terrain.kernel_args(), model.lower, model.upper, model.k_lim, model.d_lim,
        model.joint_damping, model.implicit_damping)
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))) or np.max(np.abs(qd)) > _MAX_SPEED:
        raise SimulationBlowup(f"non-finite or runaway state at t={state.time + dt:.3f}s",
                               state.copy())
    new = BipedState(q, qd, state.time + dt, anchors, active)
    return new, contact_forces(model, new, terrain)


def step_n(model: BipedModel, state: BipedState, torques, terrain: TerrainProfile, n: int,
           dt: float = DT) -> tuple[BipedState, ContactReport]:
    """``n`` physics steps holding the same torques (one compiled call)."""
    tau = generalized_torques(model, torques)
    q, qd, anchors, active, done = K.step_many(
        n, state.q, state.qd, state.anchors, state.active, tau, _ALL_FREE, dt, model.gravity,
        model.mass, model.inertia, model.pivot_local, model.com_local, model.contact_local,
        model.gains, terrain.kernel_args(), model.lower, model.upper, model.k_lim, model.d_lim,
        model.joint_damping, model.implicit_damping, _MAX_SPEED)
    t = state.time + done * dt
    if done < n:
        raise SimulationBlowup(f"non-finite or runaway state at t={t + dt:.3f}s",
                               BipedState(q, qd, t, anchors, active))
    new = BipedState(q, qd, t, anchors, active)
    return new, contact_forces(model, new, terrain)


def mass_matrix(model: BipedModel, q) -> np.ndarray:
    return K.mass_matrix(np.asarray(q, dtype=float), *model.kernel_args())


def bias_forces(model: BipedModel, q, qd, gravity: float | None = None) -> np.ndarray:
    """Coriolis, centrifugal and gravity generalized forces (zero acceleration)."""
    g = model.gravity if gravity is None else gravity
    return K.inverse_dynamics(np.asarray(q, float), np.asarray(qd, float), np.zeros(K.N_Q), g,
                              *model.kernel_args(), np.zeros((K.N_BODY, 3)))


def accelerations(model: BipedModel, q, qd, tau, gravity: float | None = None) -> np.ndarray:
    g = model.gravity if gravity is None else gravity
    return K.forward_dynamics(np.asarray(q, float), np.asarray(qd, float),
                              np.asarray(tau, float), g, *model.kernel_args())


def body_com_jacobians(model: BipedModel, q) -> tuple[np.ndarray, np.ndarray]:
    """World CoM of every body (9, 2) and the stacked CoM Jacobians (9, 2, 9)."""
    q = np.asarray(q, dtype=float)
    _, org, com = K.body_coms(q, model.pivot_local, model.com_local)
    S = K.motion_subspaces(q, org)
    J = np.stack([K.point_jacobian(q, S, b, com[b, 0], com[b, 1]) for b in range(K.N_BODY)])
    return com, J


def com_state(model: BipedModel, state: BipedState) -> tuple[float, float, float, float]:
    """Whole-body centre of mass: (x, z, xdot, zdot)."""
    com, J = body_com_jacobians(model, state.q)
    w = model.mass / model.total_mass
    pos = w @ com
    vel = np.einsum("b,bij,j->i", w, J, state.qd)
    return float(pos[0]), float(pos[1]), float(vel[0]), float(vel[1])


def mechanical_energy(model: BipedModel, state: BipedState, gravity: float | None = None):
    """(kinetic, potential) energy; potential measured from z = 0."""
    g = model.gravity if gravity is None else gravity
    M = mass_matrix(model, state.q)
    kinetic = 0.5 * state.qd @ M @ state.qd
    _, _, com = K.body_coms(state.q, model.pivot_local, model.com_local)
    potential = g * float(model.mass @ com[:, 1])
    return float(kinetic), potential


def set_pose_from_reference(model: BipedModel, frame: Sequence[float], joint_velocities: Sequence[float],
                            torso_pitch: float, terrain: TerrainProfile, x: float = 0.0,
                            base_velocity: Sequence[float] = (0.0, 0.0),
                            torso_rate: float = 0.0) -> BipedState:
    """Place the biped in a reference pose resting on the terrain.

    Joints take ``frame`` (right hip, knee, ankle, left hip, knee, ankle);
    the pelvis height is chosen so the lowest sole point touches the ground
    with zero penetration.
    """
    frame = np.asarray(frame, dtype=float)
    if frame.shape != (6,) or not np.all(np.isfinite(frame)):
        raise ValueError("frame must be 6 finite joint angles")
    q = np.zeros(K.N_Q)
    q[0] = x
    q[2] = torso_pitch
    q[3:] = frame
    pts = K.contact_points(q, model.pivot_local, model.contact_local)
    gap = pts[:, 1] - height_at(terrain, pts[:, 0])
    q[1] = -float(gap.min())
    qd = np.zeros(K.N_Q)
    qd[0], qd[1] = base_velocity
    qd[2] = torso_rate
    qd[3:] = np.asarray(joint_velocities, dtype=float)
    return BipedState(q, qd, 0.0)


TRAJECTORY_HEADER = (["t"] + [f"q{i}" for i in range(K.N_Q)] + [f"qd{i}" for i in range(K.N_Q)]
                     + ["FL", "FR", "cL", "cR"])


def write_trajectory(path: str | Path, rows: Sequence[tuple[BipedState, ContactReport]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_HEADER)
        for s, c in rows:
            w.writerow([repr(s.time)] + [repr(float(v)) for v in s.q] + [repr(float(v)) for v in s.qd]
                       + [repr(c.F_L), repr(c.F_R), c.c_L, c.c_R])
