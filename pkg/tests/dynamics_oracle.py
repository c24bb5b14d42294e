"""Independent dynamics references: chain kinematics, a complex-step Lagrangian and an energy probe."""
import numpy as np

from specwalk import terrain as T
from specwalk.dynamics import mechanical_energy, set_pose_from_reference, step

FLAT = T.flat()


def _rot(phi, a, b):
    return np.array([a * np.cos(phi) - b * np.sin(phi), a * np.sin(phi) + b * np.cos(phi)])


def link_poses(model, q):
    """(absolute angle, CoM position) of the seven links, from plain chain geometry."""
    pelvis = np.array([q[0], q[1]])
    out = [(q[2], pelvis + _rot(q[2], *model.com_local[2]))]
    for base, (thigh, shank, foot) in ((3, (3, 4, 5)), (6, (6, 7, 8))):
        a_thigh = q[2] + q[base]
        a_shank = a_thigh + q[base + 1]
        a_foot = a_shank + q[base + 2]
        knee = pelvis + _rot(a_thigh, 0.0, -model.length[thigh])
        ankle = knee + _rot(a_shank, 0.0, -model.length[shank])
        out += [(a_thigh, pelvis + _rot(a_thigh, *model.com_local[thigh])),
                (a_shank, knee + _rot(a_shank, *model.com_local[shank])),
                (a_foot, ankle + _rot(a_foot, *model.com_local[foot]))]
    return out


def lagrangian(model, q, qd, gravity, h=1e-30):
    """Kinetic minus potential energy; link velocities by complex-step differentiation."""
    masses = model.mass[2:]
    inertias = model.inertia[2:]
    moved = link_poses(model, q + 1j * h * np.asarray(qd, dtype=float))
    ke = pe = 0.0
    for m, I, (a, p) in zip(masses, inertias, moved):
        v = p.imag / h
        w = a.imag / h
        ke += 0.5 * m * v @ v + 0.5 * I * w * w
        pe += m * gravity * p[1].real
    return ke - pe


def oracle_accelerations(model, q, qd, tau, gravity=0.0):
    """Euler-Lagrange equations assembled by finite differences of the Lagrangian."""
    n = 9
    E = np.eye(n)

    def kinetic(qq, vv):
        return lagrangian(model, qq, vv, 0.0)

    def M_at(qq):
        k = [kinetic(qq, E[i]) for i in range(n)]
        return np.array([[kinetic(qq, E[i] + E[j]) - k[i] - k[j] for j in range(n)] for i in range(n)])

    M = M_at(q)
    h = 1e-5
    dL_dq = np.array([(lagrangian(model, q + h * E[i], qd, gravity) - lagrangian(model, q - h * E[i], qd, gravity))
                      / (2 * h) for i in range(n)])
    Mdot_qd = (M_at(q + h * qd) - M_at(q - h * qd)) @ qd / (2 * h)
    return np.linalg.solve(M, tau + dL_dq - Mdot_qd), M


def random_state(rng):
    q = np.concatenate([rng.uniform(-2, 2, 2), rng.uniform(-1, 1, 7)])
    qd = rng.uniform(-2, 2, 9)
    return q, qd


def passive_swing_energy(model, hip, knee, steps=5000):
    """Energy trace of a hanging leg swinging freely with every other joint locked.

    Returns (trace, swing) where ``swing`` is the energy above the hanging rest pose.
    """
    s = set_pose_from_reference(model, [hip, knee, 0, 0, 0, 0], np.zeros(6), 0.0, FLAT)
    s.q[1] += 2.0  # well clear of the ground
    free = np.zeros(9, dtype=bool)
    free[3] = free[4] = True

    def energy(st_):
        return sum(mechanical_energy(model, st_))

    rest = s.copy()
    rest.q[3] = rest.q[4] = 0.0
    swing = energy(s) - energy(rest)
    trace = [energy(s)]
    for _ in range(steps):
        s, rep = step(model, s, np.zeros(7), FLAT, free=free)
        if rep.c_L or rep.c_R:
            raise AssertionError("swinging leg touched the ground")
        trace.append(energy(s))
    return np.array(trace), swing


def secular_drift(trace, window=1000):
    """Change of the mean energy between the first and last ``window`` samples."""
    return abs(trace[-window:].mean() - trace[:window].mean())
