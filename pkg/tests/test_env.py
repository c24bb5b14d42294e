import numpy as np
import pytest
from scipy import stats

from specwalk import env as E
from specwalk import reward as R
from specwalk.spectral import GaitCycle, Morphology
from specwalk.terrain import ramp

MORPH = Morphology(0.9, 0.9)


def _linear_cycle(step=0.01):
    frames = step * np.arange(32)[:, None] * np.array([1.0, -1.0, 0.5, 2.0, -0.5, 1.5])
    return GaitCycle(frames, 1.0, MORPH)


@pytest.fixture
def fixed_env(model, cycle):
    return E.WalkingEnv(model, E.FixedReference(cycle), E.EpisodeConfig(seed=3))


# -- observation layout ------------------------------------------------------------

GOLDEN_LAYOUT = [
    ("v_ds", 0, 1), ("r_angle", 1, 2), ("v_com", 2, 3), ("q_prev", 3, 10), ("q", 10, 17),
    ("q_ref", 17, 23), ("q_ref_next", 23, 29), ("q_ref_ahead", 29, 35), ("a_prev", 35, 42),
    ("qd", 42, 49), ("qd_ref", 49, 55),
]


def test_observation_layout_golden():
    assert E.OBS_DIM == 55
    assert [(k, s.start, s.stop) for k, s in E.obs_slices().items()] == GOLDEN_LAYOUT


def test_observation_serialization_golden():
    kw = {}
    for name, a, b in GOLDEN_LAYOUT:
        vals = np.arange(a, b, dtype=float) + 0.5
        kw[name] = float(vals[0]) if b - a == 1 else vals
    vec = E.Observation(**kw).as_array()
    np.testing.assert_array_equal(vec, np.arange(55) + 0.5)
    back = E.Observation.from_array(vec)
    np.testing.assert_array_equal(back.as_array(), vec)


def test_observation_rejects_wrong_sizes():
    with pytest.raises(ValueError):
        E.Observation.from_array(np.zeros(54))
    kw = {name: (0.0 if b - a == 1 else np.zeros(b - a)) for name, a, b in GOLDEN_LAYOUT}
    kw["q"] = np.zeros(6)
    with pytest.raises(ValueError):
        E.Observation(**kw).as_array()


def test_reset_observation_contents(model, cycle):
    cfg = E.EpisodeConfig(commanded_speed=1.3, terrain=ramp(3.0), rsi_enabled=False)
    env = E.WalkingEnv(model, E.FixedReference(cycle), cfg)
    obs = E.Observation.from_array(env.reset())
    assert obs.v_ds == 1.3
    assert obs.r_angle == pytest.approx(np.radians(3.0))
    np.testing.assert_array_equal(obs.q_ref, cycle.frames[0])
    np.testing.assert_array_equal(obs.a_prev, np.zeros(7))
    np.testing.assert_allclose(obs.q[1:], cycle.frames[0], atol=1e-12)
    assert np.all(np.isfinite(env.reset()))


# -- filter, clock, action handling ------------------------------------------------

@pytest.mark.parametrize("beta", [0.3, 0.7])
def test_filter_step_response(model, cycle, beta):
    env = E.WalkingEnv(model, E.FixedReference(cycle), E.EpisodeConfig(filter_beta=beta, rsi_enabled=False))
    env.reset()
    a = np.array([5.0, -3.0, 2.0, 1.0, -4.0, 0.5, 6.0])
    for k in range(1, 6):
        env.step(a)
        if env.done:
            break
        np.testing.assert_allclose(env.filtered, a * (1 - (1 - beta) ** k), rtol=1e-12, atol=1e-15)


def test_filter_beta_one_is_identity(model, cycle):
    env = E.WalkingEnv(model, E.FixedReference(cycle), E.EpisodeConfig(filter_beta=1.0, rsi_enabled=False))
    env.reset()
    a = np.linspace(-20, 20, 7)
    env.step(a)
    np.testing.assert_array_equal(env.filtered, a)


def test_actions_clamped_to_limits(model, fixed_env):
    fixed_env.reset()
    _, _, _ = fixed_env.step(np.full(7, 1e6))
    np.testing.assert_array_equal(fixed_env.a_prev, model.torque_limits)


def test_clock_and_playback_advance(fixed_env):
    fixed_env.reset()
    p0 = fixed_env.playback.position
    for k in range(1, 4):
        fixed_env.step(np.zeros(7))
        assert fixed_env.time == pytest.approx(0.01 * k, abs=1e-15)
        assert (fixed_env.playback.position - p0) % 32 == pytest.approx(0.1 * k, abs=1e-9)


def test_invalid_actions(fixed_env):
    fixed_env.reset()
    with pytest.raises(E.InvalidActionError):
        fixed_env.step(np.zeros(6))
    bad = np.zeros(7)
    bad[2] = np.nan
    with pytest.raises(E.InvalidActionError):
        fixed_env.step(bad)


def test_step_before_reset_and_after_done(model, cycle):
    env = E.WalkingEnv(model, E.FixedReference(cycle), E.EpisodeConfig(max_duration=0.03, rsi_enabled=False))
    with pytest.raises(E.InvalidStateError):
        env.step(np.zeros(7))
    env.reset()
    done = False
    while not done:
        _, _, done = env.step(np.zeros(7))
    assert env.done_reason in ("time_limit", "height", "torso", "blowup")
    with pytest.raises(E.InvalidStateError):
        env.step(np.zeros(7))


def test_zero_action_terminates_with_reason(fixed_env):
    fixed_env.reset()
    for _ in range(1000):
        _, rew, done = fixed_env.step(np.zeros(7))
        if done:
            break
    assert done
    assert fixed_env.done_reason in ("time_limit", "height", "torso")
    if fixed_env.done_reason != "time_limit":
        assert rew.done and rew.r_alive == R.TERMINAL_REWARD and fixed_env.terminated


def test_time_limit_is_not_termination(model, cycle):
    env = E.WalkingEnv(model, E.FixedReference(cycle), E.EpisodeConfig(max_duration=0.02, rsi_enabled=False))
    env.reset()
    env.step(np.zeros(7))
    _, rew, done = env.step(np.zeros(7))
    assert done and env.done_reason == "time_limit" and not env.terminated and not rew.done


# -- resets -----------------------------------------------------------------------

def test_reset_determinism(model, cycle):
    cfg = E.EpisodeConfig(seed=9)
    traces = []
    for _ in range(2):
        env = E.WalkingEnv(model, E.FixedReference(cycle), cfg)
        obs = [env.reset()]
        actions = np.random.default_rng(1).uniform(-50, 50, (30, 7))
        for a in actions:
            o, r, d = env.step(a)
            obs.append(o)
            if d:
                break
        traces.append(np.array(obs))
    np.testing.assert_array_equal(traces[0], traces[1])


def test_no_rsi_starts_at_cycle_start(model, cycle):
    env = E.WalkingEnv(model, E.FixedReference(cycle), E.EpisodeConfig(rsi_enabled=False))
    a, b = env.reset(seed=1), env.reset(seed=2)
    np.testing.assert_array_equal(a, b)
    assert env.playback.position == 0.0


def test_rsi_phase_uniform(model, cycle):
    env = E.WalkingEnv(model, E.FixedReference(cycle), E.EpisodeConfig(rsi_enabled=True))
    phases = []
    for seed in range(1000):
        env.reset(seed=seed)
        phases.append(env.playback.phase)
    assert stats.kstest(phases, "uniform").statistic < 0.05


# -- reference preview ------------------------------------------------------------

def test_preview_constant_cycle():
    frames = np.tile(np.array([0.1, -0.4, 0.2, 0.3, -0.1, 0.05]), (32, 1))
    pb = E.ReferencePlayback(GaitCycle(frames, 1.0, MORPH), position=7.3)
    now, nxt, ahead, vel = E.reference_preview(pb)
    np.testing.assert_array_equal(now, nxt)
    np.testing.assert_array_equal(now, ahead)
    np.testing.assert_array_equal(vel, np.zeros(6))


def test_preview_periodic(cycle):
    pb = E.ReferencePlayback(cycle, position=12.25)
    np.testing.assert_allclose(pb.frame_at(32.0), pb.frame_at(0.0), atol=1e-12)
    # 320 policy steps at 100 Hz cover exactly one 32-frame cycle.
    wrapped = E.reference_preview(pb, offsets=(0, 320))
    np.testing.assert_allclose(wrapped[1], wrapped[0], atol=1e-12)


def test_preview_linear_cycle_offsets():
    step = 0.01
    cyc = _linear_cycle(step)
    per_frame = cyc.frames[1] - cyc.frames[0]
    pb = E.ReferencePlayback(cyc, position=5.0)
    now, nxt, ahead, vel = E.reference_preview(pb)
    per_policy_step = per_frame * E.POLICY_DT * pb.frame_rate
    np.testing.assert_allclose(ahead - now, 10 * per_policy_step, atol=1e-9)
    np.testing.assert_allclose(ahead - now, per_frame, atol=1e-9)
    np.testing.assert_allclose(nxt - now, per_policy_step, atol=1e-9)
    np.testing.assert_allclose(vel, per_frame * pb.frame_rate, atol=1e-9)


def test_playback_continuous_between_frames(cycle):
    pb = E.ReferencePlayback(cycle)
    xs = np.linspace(0, 32, 3201)
    vals = np.array([pb.frame_at(x) for x in xs])
    jump = np.max(np.abs(np.diff(vals, axis=0)))
    assert jump <= np.max(np.abs(np.diff(np.vstack([cycle.frames, cycle.frames[:1]]), axis=0))) * 0.01 + 1e-12


# -- commanded speed --------------------------------------------------------------

def test_speed_profile_interpolation():
    p = E.SpeedProfile.parse("0:0.5;5:1.5")
    assert p(0.0) == 0.5 and p(2.5) == 1.0 and p(7.0) == 1.5 and p(-1) == 0.5
    assert E.SpeedProfile.parse(p.to_string()) == p
    assert E.SpeedProfile.parse("1.2")(99.0) == 1.2


@pytest.mark.parametrize("text", ["0:2.5", "0:-0.1", "1:1;0:1", "0:1;0:1.2"])
def test_speed_profile_rejects(text):
    with pytest.raises(ValueError):
        E.SpeedProfile.parse(text)


@pytest.mark.parametrize("kw", [{"max_duration": 0.0}, {"commanded_speed": 3.0}, {"filter_beta": 0.0}])
def test_episode_config_rejects(kw):
    with pytest.raises(ValueError):
        E.EpisodeConfig(**kw)


def test_v_ds_follows_profile_and_swaps_reference(model, small_gait):
    cfg = E.EpisodeConfig(commanded_speed=E.SpeedProfile((0.0, 0.05), (0.8, 1.6)), rsi_enabled=False)
    env = E.make_env(model, small_gait, cfg)
    env.reset()
    first = env.playback.cycle
    seen = []
    for _ in range(8):
        obs, _, done = env.step(np.zeros(7))
        seen.append(E.Observation.from_array(obs).v_ds)
        if done:
            break
    np.testing.assert_allclose(seen[:5], [0.8 + 16 * 0.01 * k for k in range(1, 6)], atol=1e-12)
    assert env.playback.cycle is not first


def test_module_reset_helper(model, small_gait):
    env, state, obs = E.reset(model, small_gait, E.EpisodeConfig(seed=1))
    assert obs.shape == (55,) and state is env.state


def test_episode_trace_csv(tmp_path, fixed_env):
    fixed_env.record_trace = True
    fixed_env.reset()
    for _ in range(5):
        fixed_env.step(np.ones(7))
    path = tmp_path / "trace.csv"
    E.write_episode_trace(path, fixed_env.trace)
    lines = path.read_text().splitlines()
    assert lines[0].split(",") == E.TRACE_HEADER
    assert len(lines) == 6
    assert float(lines[1].split(",")[0]) == pytest.approx(0.01)
