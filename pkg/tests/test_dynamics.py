import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specwalk import terrain as T
from specwalk.dynamics import (SimulationBlowup, BipedState, com_state, contact_forces, default_model,
                               mass_matrix, set_pose_from_reference, step, step_n,
                               write_trajectory)
from specwalk.dynamics import sim

from dynamics_oracle import (link_poses, oracle_accelerations, passive_swing_energy, random_state,
                             secular_drift)

FLAT = T.flat()


@pytest.fixture(scope="module")
def no_limits(model):
    return model.with_overrides(joint_limit_stiffness=0.0, joint_limit_damping=0.0)


# -- operations --------------------------------------------------------------

def test_free_fall(model):
    s0 = set_pose_from_reference(model, np.zeros(6), np.zeros(6), 0.0, FLAT)
    s0.q[1] += 1.0
    s1, rep = step(model, s0, np.zeros(7), FLAT)
    acc = (com_state(model, s1)[3] - com_state(model, s0)[3]) / sim.DT
    assert acc == pytest.approx(-9.81, abs=1e-6)
    assert rep.c_L == rep.c_R == 0 and rep.F_L == rep.F_R == 0.0


def test_lagrangian_oracle(model):
    rng = np.random.default_rng(1)
    for _ in range(100):
        q, qd = random_state(rng)
        tau = np.zeros(9)
        tau[rng.integers(2, 9)] = rng.uniform(-50, 50)
        ours = sim.accelerations(model, q, qd, tau, gravity=0.0)
        ref, M = oracle_accelerations(model, q, qd, tau)
        assert np.linalg.norm(ours - ref) <= 1e-5 * np.linalg.norm(ref)
        assert np.allclose(mass_matrix(model, q), M, rtol=1e-6, atol=1e-8)


def test_lagrangian_oracle_with_gravity(model):
    rng = np.random.default_rng(2)
    for _ in range(20):
        q, qd = random_state(rng)
        tau = rng.uniform(-30, 30, 9)
        ours = sim.accelerations(model, q, qd, tau)
        ref, _ = oracle_accelerations(model, q, qd, tau, gravity=model.gravity)
        assert np.linalg.norm(ours - ref) <= 1e-5 * np.linalg.norm(ref)


def test_mass_matrix_spd(model):
    rng = np.random.default_rng(3)
    for _ in range(1000):
        q, _ = random_state(rng)
        M = mass_matrix(model, q)
        assert np.allclose(M, M.T, atol=1e-12)
        assert np.linalg.eigvalsh(M).min() > 0.0


@pytest.mark.parametrize("hip,knee", [(0.4, -0.2), (0.2, -0.3), (0.6, -0.4)])
def test_passive_swing_conserves_energy(no_limits, hip, knee):
    trace, swing = passive_swing_energy(no_limits, hip, knee)
    assert secular_drift(trace) / swing < 0.005
    # the symplectic integrator's bounded O(dt) oscillation stays small too
    assert np.max(np.abs(trace - trace[0])) / swing < 0.02


def _pd_stand(model, seconds):
    pose = np.array([0.1, -0.2, 0.1, 0.1, -0.2, 0.1])
    s = set_pose_from_reference(model, pose, np.zeros(6), 0.0, FLAT)
    target = np.r_[0.0, pose]
    kd = np.array([40, 40, 40, 2, 40, 40, 2.0])
    zs, reps = [], []
    for _ in range(int(round(seconds / sim.DT))):
        s, rep = step(model, s, 800 * (target - s.q[2:]) - kd * s.qd[2:], FLAT)
        zs.append(com_state(model, s)[1])
        reps.append(rep)
    return s, np.array(zs), reps


def test_standing_drift(model):
    settle = 1.5
    _, zs, reps = _pd_stand(model, settle + 1.0)
    window = zs[int(settle / sim.DT):]
    assert np.ptp(window) < 1e-3
    last = reps[-1]
    assert last.c_L == 4 and last.c_R == 4
    assert last.F_L + last.F_R == pytest.approx(model.total_mass * 9.81, rel=0.02)


def test_contact_penalty_value(model):
    s = set_pose_from_reference(model, [0.0, 0.0, 0.1, 0.3, -0.6, 0.0], np.zeros(6), 0.0, FLAT)
    lowest = int(np.argmin(contact_forces(model, s, FLAT).points[:, 1]))
    s.q[1] -= 0.001
    rep = contact_forces(model, s, FLAT)
    assert rep.normal[lowest] == pytest.approx(50.0, abs=1e-9)
    others = np.delete(rep.normal, lowest)
    assert np.all(others == 0.0)
    assert rep.c_R + rep.c_L == 1


def test_contact_clear_of_ground(model):
    s = set_pose_from_reference(model, np.zeros(6), np.zeros(6), 0.0, FLAT)
    s.q[1] += 0.001
    rep = contact_forces(model, s, FLAT)
    assert np.all(rep.normal == 0.0) and np.all(rep.tangential == 0.0)
    assert rep.c_L == rep.c_R == 0


def test_friction_cone_saturates(model):
    s = set_pose_from_reference(model, np.zeros(6), np.zeros(6), 0.0, FLAT)
    s.q[1] -= 0.002
    s.qd[0] = 5.0
    rep = contact_forces(model, s, FLAT)
    on = rep.normal > 0
    assert on.sum() == 8
    mu = model.gains[4]
    assert np.all(np.abs(rep.tangential[on]) == mu * rep.normal[on])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1.0, 1.0), min_size=6, max_size=6), st.floats(-0.05, 0.05),
       st.lists(st.floats(-3, 3), min_size=9, max_size=9))
def test_contact_complementarity(frame, dz, qd):
    model = default_model()
    s = set_pose_from_reference(model, frame, np.zeros(6), 0.0, FLAT)
    s.q[1] += dz
    s.qd[:] = qd
    rep = contact_forces(model, s, FLAT)
    assert np.all(rep.normal >= 0.0)
    above = rep.points[:, 1] >= 0.0
    assert np.all(rep.normal[above] == 0.0) and np.all(rep.tangential[above] == 0.0)
    assert rep.c_R == int(np.count_nonzero(rep.normal[:4] > 0))
    assert rep.c_L == int(np.count_nonzero(rep.normal[4:] > 0))


def test_com_by_hand(model):
    s = set_pose_from_reference(model, np.zeros(6), np.zeros(6), 0.0, FLAT)
    x, z, xd, zd = com_state(model, s)
    pelvis_x, pelvis_z = s.q[0], s.q[1]
    # straight legs: only the feet have a forward CoM offset (0.05 m each, 1 kg each)
    assert x == pytest.approx(pelvis_x + 2 * 1.0 * 0.05 / 80.0, abs=1e-12)
    heights = 56.0 * 0.30 + 2 * (7.5 * -0.20 + 3.5 * (-0.45 - 0.20) + 1.0 * (-0.90 - 0.04))
    assert z == pytest.approx(pelvis_z + heights / 80.0, abs=1e-12)
    assert xd == 0.0 and zd == 0.0


def test_com_single_dominant_link():
    light = {f"links__{n}": {"mass": 1e-12, "inertia": 1e-12, "length": 0.45, "com": [0.0, -0.2]}
             for n in ("thigh_r", "shank_r", "thigh_l", "shank_l")}
    light.update({f"links__{n}": {"mass": 1e-12, "inertia": 1e-12, "length": 0.2, "com": [0.05, -0.04]}
                  for n in ("foot_r", "foot_l")})
    m = default_model().with_overrides(**light)
    s = BipedState(np.array([0.3, 1.1, 0.2, 0, 0, 0, 0, 0, 0.0]), np.zeros(9))
    x, z, _, _ = com_state(m, s)
    assert x == pytest.approx(0.3 - 0.30 * math.sin(0.2), abs=1e-9)
    assert z == pytest.approx(1.1 + 0.30 * math.cos(0.2), abs=1e-9)


def test_com_translation_equivariant(model, rng):
    q, qd = random_state(rng)
    a = com_state(model, BipedState(q, qd))
    q2 = q.copy()
    q2[0] += 1.75
    b = com_state(model, BipedState(q2, qd))
    assert b[0] - a[0] == pytest.approx(1.75, abs=1e-12)
    assert b[1:] == pytest.approx(a[1:], abs=1e-12)


def test_set_pose_on_flat(model):
    s = set_pose_from_reference(model, np.zeros(6), np.zeros(6), 0.0, FLAT)
    pts = contact_forces(model, s, FLAT).points
    assert abs(pts[:, 1].min()) < 1e-9
    assert s.time == 0.0 and s.q[0] == 0.0


def test_set_pose_on_ramp(model):
    prof = T.ramp(5.0, start_x=0.0)
    frame = [0.2, -0.3, 0.1, -0.1, -0.2, 0.0]
    s = set_pose_from_reference(model, frame, np.zeros(6), 0.0, prof, x=2.0)
    pts = contact_forces(model, s, prof).points
    gaps = pts[:, 1] - T.height_at(prof, pts[:, 0])
    assert abs(gaps.min()) < 1e-9
    assert np.all(gaps >= -1e-9)
    again = set_pose_from_reference(model, frame, np.zeros(6), 0.0, prof, x=2.0)
    assert np.array_equal(s.q, again.q) and np.array_equal(s.qd, again.qd)


def test_set_pose_rejects_bad_frame(model):
    with pytest.raises(ValueError):
        set_pose_from_reference(model, [0, 0, np.nan, 0, 0, 0], np.zeros(6), 0.0, FLAT)


def test_torques_are_clamped(model):
    s = set_pose_from_reference(model, np.zeros(6), np.zeros(6), 0.0, FLAT)
    s.q[1] += 1.0
    big, _ = step(model, s, np.full(7, 1e6), FLAT)
    lim, _ = step(model, s, model.torque_limits, FLAT)
    assert np.array_equal(big.q, lim.q) and np.array_equal(big.qd, lim.qd)


def test_deterministic_and_step_n_matches(model, rng):
    torques = rng.uniform(-60, 60, (30, 7))
    s0 = set_pose_from_reference(model, [0.2, -0.4, 0.1, -0.2, -0.1, 0.0], np.zeros(6), 0.0, FLAT)

    def run():
        s = s0.copy()
        out = []
        for tau in torques:
            for _ in range(10):
                s, _ = step(model, s, tau, FLAT)
            out.append(np.concatenate([s.q, s.qd]))
        return np.array(out)

    a, b = run(), run()
    assert a.tobytes() == b.tobytes()
    s = s0.copy()
    rows = []
    for tau in torques:
        s, _ = step_n(model, s, tau, FLAT, 10)
        rows.append(np.concatenate([s.q, s.qd]))
    assert np.array(rows).tobytes() == a.tobytes()
    assert s.time == pytest.approx(0.3)


def test_blowup_carries_prior_state(model):
    s = set_pose_from_reference(model, np.zeros(6), np.zeros(6), 0.0, FLAT)
    s.qd[3] = 5e3
    with pytest.raises(SimulationBlowup) as info:
        step(model, s, np.zeros(7), FLAT)
    assert np.array_equal(info.value.state.q, s.q)
    with pytest.raises(SimulationBlowup) as info:
        step_n(model, s, np.zeros(7), FLAT, 10)
    assert np.array_equal(info.value.state.q, s.q)


def test_model_validation(model):
    with pytest.raises(ValueError):
        model.with_overrides(links__torso={"mass": -1.0, "inertia": 1.0, "length": 0.6, "com": [0, 0.3]})
    with pytest.raises(ValueError):
        model.with_overrides(contact_offsets=[0.0, 0.1, 0.2])
    with pytest.raises(ValueError):
        model.with_overrides(torque_limits=[150.0] * 6)


def test_default_model_parameters(model):
    assert model.total_mass == pytest.approx(80.0)
    assert model.mass[2] / model.total_mass == pytest.approx(0.70)
    assert model.length[3] == model.length[4] == 0.45 and model.length[5] == 0.20
    assert np.all(model.torque_limits == 150.0)
    assert model.gains.tolist()[:2] == [50_000.0, 500.0] and model.gains[4] == 0.9


def test_trajectory_csv(tmp_path, model):
    s = set_pose_from_reference(model, np.zeros(6), np.zeros(6), 0.0, FLAT)
    rows = []
    for _ in range(3):
        s, rep = step(model, s, np.zeros(7), FLAT)
        rows.append((s, rep))
    p = tmp_path / "traj.csv"
    write_trajectory(p, rows)
    lines = p.read_text().splitlines()
    assert lines[0] == ",".join(["t"] + [f"q{i}" for i in range(9)] + [f"qd{i}" for i in range(9)]
                                + ["FL", "FR", "cL", "cR"])
    assert len(lines) == 4


def test_com_matches_chain_oracle(model, rng):
    for _ in range(50):
        q, qd = random_state(rng)
        s = BipedState(q, qd)
        poses = link_poses(model, q + 1j * 1e-30 * qd)
        m = model.mass[2:]
        pos = sum(mi * p.real for mi, (_, p) in zip(m, poses)) / m.sum()
        vel = sum(mi * p.imag / 1e-30 for mi, (_, p) in zip(m, poses)) / m.sum()
        np.testing.assert_allclose(com_state(model, s), np.r_[pos, vel], rtol=1e-12, atol=1e-12)
