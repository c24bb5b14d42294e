"""Compiled planar rigid-body kernels for the 9-coordinate biped.

Coordinates: 0 pelvis x, 1 pelvis z, 2 torso pitch, then right hip, knee,
ankle and left hip, knee, ankle.  Coordinate j moves body j (bodies 0 and 1
are massless sliders).  Spatial vectors are planar ``[w, vx, vz]`` expressed
in world axes about a reference point fixed at the current pelvis position,
which keeps the numbers small far from the origin.
"""
import math

import numba
import numpy as np

from ..terrain import terrain_height, terrain_slope

N_Q = 9
N_BODY = 9
N_CONTACT = 8
PARENT = np.array([-1, 0, 1, 2, 3, 4, 2, 6, 7])
# body carrying each contact point: 4 on the right foot, 4 on the left
CONTACT_BODY = np.array([5, 5, 5, 5, 8, 8, 8, 8])


@numba.njit(cache=True)
def frames(q, pivot_local):
    """Absolute angle and world pivot of every body.

    ``pivot_local[j]`` is body j's pivot in its parent's frame.  A frame at
    angle ``phi`` maps local ``(a, b)`` to ``a*(cos, sin) + b*(-sin, cos)``.
    """
    phi = np.zeros(N_BODY)
    org = np.zeros((N_BODY, 2))
    for j in range(2, N_BODY):
        p = PARENT[j]
        if j == 2:
            phi[j] = q[2]
            org[j, 0] = q[0]
            org[j, 1] = q[1]
        else:
            c, s = math.cos(phi[p]), math.sin(phi[p])
            a, b = pivot_local[j, 0], pivot_local[j, 1]
            org[j, 0] = org[p, 0] + a * c - b * s
            org[j, 1] = org[p, 1] + a * s + b * c
            phi[j] = phi[p] + q[j]
    phi[0] = 0.0
    phi[1] = 0.0
    org[0, 0] = q[0]
    org[0, 1] = q[1]
    org[1, 0] = q[0]
    org[1, 1] = q[1]
    return phi, org


@numba.njit(cache=True)
def local_to_world(phi, org, a, b):
    c, s = math.cos(phi), math.sin(phi)
    return org[0] + a * c - b * s, org[1] + a * s + b * c


@numba.njit(cache=True)
def body_coms(q, pivot_local, com_local):
    phi, org = frames(q, pivot_local)
    com = np.zeros((N_BODY, 2))
    for j in range(N_BODY):
        x, z = local_to_world(phi[j], org[j], com_local[j, 0], com_local[j, 1])
        com[j, 0] = x
        com[j, 1] = z
    return phi, org, com


@numba.njit(cache=True)
def motion_subspaces(q, org):
    """World-axis joint subspaces about the pelvis reference point."""
    S = np.zeros((N_Q, 3))
    S[0, 1] = 1.0
    S[1, 2] = 1.0
    for j in range(2, N_Q):
        rx = org[j, 0] - q[0]
        rz = org[j, 1] - q[1]
        S[j, 0] = 1.0
        S[j, 1] = rz
        S[j, 2] = -rx
    return S


@numba.njit(cache=True)
def spatial_inertias(q, mass, inertia, com):
    I = np.zeros((N_BODY, 3, 3))
    for j in range(N_BODY):
        m = mass[j]
        if m == 0.0:
            continue
        rx = com[j, 0] - q[0]
        rz = com[j, 1] - q[1]
        I[j, 0, 0] = inertia[j] + m * (rx * rx + rz * rz)
        I[j, 0, 1] = -m * rz
        I[j, 1, 0] = -m * rz
        I[j, 0, 2] = m * rx
        I[j, 2, 0] = m * rx
        I[j, 1, 1] = m
        I[j, 2, 2] = m
    return I


@numba.njit(cache=True)
def crm_dot(v, m):
    """Planar motion cross product v x m."""
    out = np.empty(3)
    out[0] = 0.0
    out[1] = v[2] * m[0] - v[0] * m[2]
    out[2] = -v[1] * m[0] + v[0] * m[1]
    return out


@numba.njit(cache=True)
def crf_dot(v, f):
    """Planar force cross product v x* f."""
    out = np.empty(3)
    out[0] = -v[2] * f[1] + v[1] * f[2]
    out[1] = -v[0] * f[2]
    out[2] = v[0] * f[1]
    return out


@numba.njit(cache=True)
def mass_matrix(q, mass, inertia, pivot_local, com_local):
    """Joint-space inertia by the composite-rigid-body algorithm."""
    phi, org, com = body_coms(q, pivot_local, com_local)
    S = motion_subspaces(q, org)
    Ic = spatial_inertias(q, mass, inertia, com)
    for j in range(N_BODY - 1, 0, -1):
        p = PARENT[j]
        Ic[p] += Ic[j]
    H = np.zeros((N_Q, N_Q))
    for i in range(N_Q):
        F = Ic[i] @ S[i]
        H[i, i] = S[i] @ F
        j = PARENT[i]
        while j >= 0:
            H[i, j] = S[j] @ F
            H[j, i] = H[i, j]
            j = PARENT[j]
    return H


@numba.njit(cache=True)
def inverse_dynamics(q, qd, qdd, gravity, mass, inertia, pivot_local, com_local, f_ext):
    """Recursive Newton-Euler: generalized forces producing ``qdd``.

    ``f_ext[j]`` is an external spatial force on body j (about the pelvis
    reference point, world axes).
    """
    phi, org, com = body_coms(q, pivot_local, com_local)
    S = motion_subspaces(q, org)
    I = spatial_inertias(q, mass, inertia, com)
    v = np.zeros((N_BODY, 3))
    a = np.zeros((N_BODY, 3))
    f = np.zeros((N_BODY, 3))
    a_base = np.array([0.0, 0.0, gravity])
    for j in range(N_BODY):
        p = PARENT[j]
        vj = S[j] * qd[j]
        if p < 0:
            v[j] = vj
            a[j] = a_base + S[j] * qdd[j]
        else:
            v[j] = v[p] + vj
            a[j] = a[p] + S[j] * qdd[j] + crm_dot(v[j], vj)
        f[j] = I[j] @ a[j] + crf_dot(v[j], I[j] @ v[j]) - f_ext[j]
    tau = np.zeros(N_Q)
    for j in range(N_BODY - 1, -1, -1):
        tau[j] = S[j] @ f[j]
        p = PARENT[j]
        if p >= 0:
            f[p] += f[j]
    return tau


@numba.njit(cache=True)
def point_jacobian(q, S, body, px, pz):
    """(2, 9) Jacobian of the world point (px, pz) rigidly attached to ``body``."""
    J = np.zeros((2, N_Q))
    rx = px - q[0]
    rz = pz - q[1]
    j = body
    while j >= 0:
        J[0, j] = S[j, 1] - S[j, 0] * rz
        J[1, j] = S[j, 2] + S[j, 0] * rx
        j = PARENT[j]
    return J


@numba.njit(cache=True)
def contact_points(q, pivot_local, contact_local):
    phi, org = frames(q, pivot_local)
    pts = np.zeros((N_CONTACT, 2))
    for i in range(N_CONTACT):
        b = CONTACT_BODY[i]
        x, z = local_to_world(phi[b], org[b], contact_local[i, 0], contact_local[i, 1])
        pts[i, 0] = x
        pts[i, 1] = z
    return pts


@numba.njit(cache=True)
def contact_model(q, qd, anchors, active, pivot_local, contact_local, gains, terrain):
    """Penalty contact at the 8 sole points.

    gains = (k_normal, d_normal, k_tangent, d_tangent, mu).
    terrain = (kind, angle, omega, gamma, seed, start_x).

    Returns world forces (8, 2), normal and tangential magnitudes, updated
    stick anchors/flags, and the damping coefficients active at each point
    (normal, tangential) for the implicit damping solve.
    """
    kp, kd, kt, dt_, mu = gains[0], gains[1], gains[2], gains[3], gains[4]
    kind, angle, omega, gamma, seed, start_x = terrain
    phi, org = frames(q, pivot_local)
    S = motion_subspaces(q, org)
    pts = contact_points(q, pivot_local, contact_local)
    forces = np.zeros((N_CONTACT, 2))
    fn = np.zeros(N_CONTACT)
    ft = np.zeros(N_CONTACT)
    new_anchors = anchors.copy()
    new_active = np.zeros(N_CONTACT, dtype=np.bool_)
    damp = np.zeros((N_CONTACT, 2))
    for i in range(N_CONTACT):
        px, pz = pts[i, 0], pts[i, 1]
        h = terrain_height(kind, angle, omega, gamma, seed, start_x, px)
        if pz >= h:
            continue
        s = terrain_slope(kind, angle, start_x, px)
        cs, sn = math.cos(s), math.sin(s)
        nx, nz = -sn, cs
        tx, tz = cs, sn
        depth = (h - pz) * cs
        J = point_jacobian(q, S, CONTACT_BODY[i], px, pz)
        vx = J[0] @ qd
        vz = J[1] @ qd
        vn = vx * nx + vz * nz
        vt = vx * tx + vz * tz
        f_n = kp * depth
        if vn < 0.0:
            f_n -= kd * vn
            damp[i, 0] = kd
        if not active[i]:
            new_anchors[i, 0] = px
            new_anchors[i, 1] = pz
        slip = (px - new_anchors[i, 0]) * tx + (pz - new_anchors[i, 1]) * tz
        f_t = -kt * slip - dt_ * vt
        limit = mu * f_n
        if abs(f_t) > limit:
            f_t = limit if f_t > 0 else -limit
            # slide the anchor so the spring alone carries the friction limit
            back = -f_t / kt
            new_anchors[i, 0] = px - back * tx
            new_anchors[i, 1] = pz - back * tz
        else:
            damp[i, 1] = dt_
        new_active[i] = True
        fn[i] = f_n
        ft[i] = f_t
        forces[i, 0] = f_n * nx + f_t * tx
        forces[i, 1] = f_n * nz + f_t * tz
    return forces, fn, ft, new_anchors, new_active, damp, pts


@numba.njit(cache=True)
def joint_limit_torques(q, qd, lower, upper, k_lim, d_lim):
    """One-sided spring-damper torques pushing actuated joints back inside limits.

    Damping acts only while moving further out; its coefficient per joint is
    returned alongside for the implicit solve.
    """
    tau = np.zeros(N_Q)
    damp = np.zeros(N_Q)
    for j in range(3, N_Q):
        if q[j] > upper[j]:
            tau[j] = -k_lim * (q[j] - upper[j])
            if qd[j] > 0.0:
                tau[j] -= d_lim * qd[j]
                damp[j] = d_lim
        elif q[j] < lower[j]:
            tau[j] = k_lim * (lower[j] - q[j])
            if qd[j] < 0.0:
                tau[j] -= d_lim * qd[j]
                damp[j] = d_lim
    return tau, damp


@numba.njit(cache=True)
def forward_dynamics(q, qd, tau, gravity, mass, inertia, pivot_local, com_local):
    """Contact-free joint accelerations: solve H qdd = tau - C."""
    H = mass_matrix(q, mass, inertia, pivot_local, com_local)
    C = inverse_dynamics(q, qd, np.zeros(N_Q), gravity, mass, inertia, pivot_local,
                         com_local, np.zeros((N_BODY, 3)))
    return np.linalg.solve(H, tau - C)


@numba.njit(cache=True)
def step_kernel(q, qd, anchors, active, tau_act, free, dt, gravity, mass, inertia,
                pivot_local, com_local, contact_local, gains, terrain, lower, upper,
                k_lim, d_lim, joint_damping, implicit):
    """One semi-implicit Euler step (velocities first, then positions).

    ``tau_act`` holds generalized actuator forces (already clamped); ``free``
    masks coordinates that may move (locked ones keep zero velocity).  With
    ``implicit`` set, active contact and limit damping is folded into the
    velocity solve as ``(H + dt*D) qdd = f`` for stability at 1 kHz.
    """
    phi, org = frames(q, pivot_local)
    S = motion_subspaces(q, org)
    forces, fn, ft, new_anchors, new_active, damp, pts = contact_model(
        q, qd, anchors, active, pivot_local, contact_local, gains, terrain)

    tau = tau_act.copy()
    D = np.zeros((N_Q, N_Q))
    for j in range(3, N_Q):
        tau[j] -= joint_damping * qd[j]
        D[j, j] += joint_damping
    lim, lim_damp = joint_limit_torques(q, qd, lower, upper, k_lim, d_lim)
    for j in range(3, N_Q):
        D[j, j] += lim_damp[j]
    tau += lim

    f_ext = np.zeros((N_BODY, 3))
    for i in range(N_CONTACT):
        if fn[i] == 0.0 and ft[i] == 0.0:
            continue
        b = CONTACT_BODY[i]
        rx = pts[i, 0] - q[0]
        rz = pts[i, 1] - q[1]
        fx, fz = forces[i, 0], forces[i, 1]
        f_ext[b, 0] += rx * fz - rz * fx
        f_ext[b, 1] += fx
        f_ext[b, 2] += fz
        if implicit and (damp[i, 0] > 0.0 or damp[i, 1] > 0.0):
            J = point_jacobian(q, S, b, pts[i, 0], pts[i, 1])
            s = terrain_slope(terrain[0], terrain[1], terrain[5], pts[i, 0])
            cs, sn = math.cos(s), math.sin(s)
            # D += J^T (dn n n^T + dt t t^T) J
            jn = J[0] * (-sn) + J[1] * cs
            jt = J[0] * cs + J[1] * sn
            for a_ in range(N_Q):
                for b_ in range(N_Q):
                    D[a_, b_] += damp[i, 0] * jn[a_] * jn[b_] + damp[i, 1] * jt[a_] * jt[b_]

    H = mass_matrix(q, mass, inertia, pivot_local, com_local)
    C = inverse_dynamics(q, qd, np.zeros(N_Q), gravity, mass, inertia, pivot_local,
                         com_local, f_ext)
    rhs = tau - C
    A = H.copy()
    if implicit:
        A += dt * D
    n_free = 0
    for j in range(N_Q):
        if free[j]:
            n_free += 1
    idx = np.empty(n_free, dtype=np.int64)
    k = 0
    for j in range(N_Q):
        if free[j]:
            idx[k] = j
            k += 1
    A_ff = np.empty((n_free, n_free))
    r_f = np.empty(n_free)
    for a_ in range(n_free):
        r_f[a_] = rhs[idx[a_]]
        for b_ in range(n_free):
            A_ff[a_, b_] = A[idx[a_], idx[b_]]
    qdd_f = np.linalg.solve(A_ff, r_f)
    qdd = np.zeros(N_Q)
    for a_ in range(n_free):
        qdd[idx[a_]] = qdd_f[a_]
    qd_new = np.zeros(N_Q)
    for j in range(N_Q):
        if free[j]:
            qd_new[j] = qd[j] + dt * qdd[j]
    q_new = q + dt * qd_new
    return q_new, qd_new, qdd, new_anchors, new_active


@numba.njit(cache=True)
def step_many(n, q, qd, anchors, active, tau_act, free, dt, gravity, mass, inertia,
              pivot_local, com_local, contact_local, gains, terrain, lower, upper,
              k_lim, d_lim, joint_damping, implicit, max_speed):
    """``n`` consecutive steps under constant actuation.

    Returns the final state and the number of steps completed; stops early
    (returning the last good state) if the state turns non-finite or runaway.
    """
    for k in range(n):
        q2, qd2, _, a2, act2 = step_kernel(q, qd, anchors, active, tau_act, free, dt, gravity,
                                           mass, inertia, pivot_local, com_local, contact_local,
                                           gains, terrain, lower, upper, k_lim, d_lim,
                                           joint_damping, implicit)
        ok = True
        for j in range(N_Q):
            if not (math.isfinite(q2[j]) and math.isfinite(qd2[j])) or abs(qd2[j]) > max_speed:
                ok = False
        if not ok:
            return q, qd, anchors, active, k
        q, qd, anchors, active = q2, qd2, a2, act2
    return q, qd, anchors, active, n
