import math

import numpy as np
import pytest
from scipy import stats

from specwalk import terrain as T


def test_flat_is_zero():
    assert T.height_at(T.flat(), 3.7) == 0.0
    assert np.all(T.height_at(T.flat(), np.linspace(-5, 50, 101)) == 0.0)


def test_ramp_geometry():
    prof = T.ramp(5.0, start_x=1.0)
    assert T.height_at(prof, 2.0) == pytest.approx(math.tan(math.radians(5.0)), abs=1e-15)
    assert T.height_at(prof, 0.5) == 0.0
    assert T.slope_at(prof, 2.0) == pytest.approx(math.radians(5.0))
    assert T.slope_at(prof, 0.5) == 0.0


def test_noisy_deterministic_and_in_range():
    prof = T.noisy(10, 0.5, seed=4)
    xs = np.linspace(0, 500, 10_000)
    h1 = T.height_at(prof, xs)
    h2 = T.height_at(prof, xs)
    assert np.array_equal(h1, h2)
    assert h1.min() >= 0.0 and h1.max() <= 0.10


def test_noisy_lead_in_is_flat():
    prof = T.noisy(20, 0.25, seed=1)
    assert np.all(T.height_at(prof, np.linspace(-3, 0.999, 50)) == 0.0)


def test_noisy_heights_uniform_ks():
    omega, gamma = 15.0, 0.25
    prof = T.noisy(omega, gamma, seed=9)
    centres = prof.start_x + gamma * (np.arange(100_000) + 0.5)
    h = T.height_at(prof, centres)
    ks = stats.kstest(h, stats.uniform(loc=0.0, scale=omega / 100.0).cdf).statistic
    assert ks < 0.02


@pytest.mark.parametrize("gamma", T.NOISE_RESOLUTIONS)
def test_noisy_cells_piecewise_constant(gamma):
    prof = T.noisy(12, gamma, seed=2)
    for cell in range(200):
        left = prof.start_x + cell * gamma
        xs = left + gamma * np.linspace(0.0, 0.999, 25)
        h = T.height_at(prof, xs)
        assert np.all(h == h[0])
    # neighbouring cells differ (with probability one for a continuous draw)
    a = T.height_at(prof, prof.start_x + 0.5 * gamma)
    b = T.height_at(prof, prof.start_x + 1.5 * gamma)
    assert a != b


def test_plane_seeds_differ():
    xs = 1.0 + 0.5 * np.arange(100) + 0.25
    assert not np.array_equal(T.height_at(T.noisy(10, 0.5, 0), xs), T.height_at(T.noisy(10, 0.5, 1), xs))


def test_training_sampler_statistics():
    rng = np.random.default_rng(0)
    profiles = [T.make_training_terrain(rng) for _ in range(10_000)]
    kinds = [p.kind for p in profiles]
    assert "noisy" not in kinds
    angles = np.array([p.ramp_angle for p in profiles if p.kind == "ramp"])
    limit = math.radians(5.0)
    assert np.all(np.abs(angles) <= limit)
    flat_frac = kinds.count("flat") / len(kinds)
    assert 0.45 <= flat_frac <= 0.55


def test_training_sampler_reproducible():
    a = T.make_training_terrain(np.random.default_rng(77))
    b = T.make_training_terrain(np.random.default_rng(77))
    assert a == b


@pytest.mark.parametrize("text", ["flat", "ramp:5", "ramp:-12.5", "noisy:10:0.5:3"])
def test_profile_string_round_trip(text):
    prof = T.parse_profile(text)
    assert T.parse_profile(prof.to_string()) == prof


@pytest.mark.parametrize("text", ["hill", "ramp", "ramp:45", "noisy:30:0.5:0", "noisy:5:0.3:0", "noisy:5:x:0"])
def test_bad_profiles_rejected(text):
    with pytest.raises(ValueError):
        T.parse_profile(text)
