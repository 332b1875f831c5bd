import math
from statistics import NormalDist

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from expstack.noise import CANON_S100
from expstack.simulate import (SimConfig, corrupt_exposures, simulate_capture, simulate_stack,
                               standard_normal, synth_gradient, uniform_open)

P100 = CANON_S100.params(100)
P800 = CANON_S100.params(800)


def test_normals_are_inverse_cdf_of_philox_uniforms():
    # oracle: raw Philox words -> 53-bit midpoint uniforms -> stdlib inverse normal CDF
    bitgen = np.random.Philox(np.random.SeedSequence([7, 3]))
    raw = [int(v) for v in bitgen.random_raw(16)]
    u = [((r >> 11) + 0.5) / 2 ** 53 for r in raw]
    expected = [NormalDist().inv_cdf(v) for v in u]
    np.testing.assert_allclose(standard_normal(7, 3, 16), expected, rtol=1e-12, atol=1e-14)


def test_uniforms_lie_in_open_interval():
    u = uniform_open(0, 0, 100_000)
    assert u.min() > 0.0 and u.max() < 1.0


def test_normal_moments():
    z = standard_normal(11, 0, 400_000)
    assert abs(z.mean()) < 5 / math.sqrt(z.size)
    assert z.var() == pytest.approx(1.0, abs=0.01)


def test_streams_are_deterministic_and_distinct():
    a = standard_normal(5, 0, 1000)
    np.testing.assert_array_equal(a, standard_normal(5, 0, 1000))
    assert not np.allclose(a, standard_normal(5, 1, 1000))
    assert not np.allclose(a, standard_normal(6, 0, 1000))


def test_capture_noise_follows_model():
    white = 2.0 ** 14 - 1
    y = simulate_capture(np.full(200_000, 0.3 * white), 1.0, P800, seed=2, white=white)
    var_norm = (y / white).var()
    assert var_norm == pytest.approx(1.19e-4 * 0.3 + 4.28e-7, rel=0.02)
    assert (y / white).mean() == pytest.approx(0.3, abs=1e-4)


def test_capture_quantises_to_code_grid():
    white = 2.0 ** 10 - 1
    y = simulate_capture(np.full(1000, 100.0), 1.0, P800, bit_depth=10, seed=0, white=white)
    np.testing.assert_allclose(y, np.rint(y))
    assert y.min() >= 0 and y.max() <= white


def test_saturated_pixels_read_white():
    white = 2.0 ** 14 - 1
    y = simulate_capture(np.full(10_000, 1.2 * white), 1.0, P800, seed=0, white=white)
    assert np.all(y == white)


def test_dark_pixels_clip_at_zero():
    y = simulate_capture(np.zeros(10_000), 1.0, P800, seed=0)
    assert y.min() == 0.0 and y.max() > 0.0


def test_capture_rejects_negative_radiance():
    with pytest.raises(ValueError):
        simulate_capture(np.array([-1.0]), 1.0, P100)


def test_relative_corruption_statistics():
    # E[(exp(s z) - 1)^2] = exp(2 s^2) - 2 exp(s^2 / 2) + 1, an RMS of 15.297% at s = 0.15
    e = np.log([1 / 64, 1 / 8, 1.0, 8.0])
    errs = np.array([np.expm1(corrupt_exposures(e, 0.15, seed=s, mode="relative") - e)
                     for s in range(4000)])
    assert np.all(errs[:, 3] == 0.0)
    rms = np.sqrt(np.mean(errs[:, :3] ** 2))
    assert rms == pytest.approx(0.152973, abs=0.006)


def test_log_scaled_corruption_uses_magnitude():
    e = np.array([-4.0, -2.0, 1.0, 2.0])
    eta = np.array([corrupt_exposures(e, 0.15, seed=s, mode="log-scaled") - e for s in range(4000)])
    np.testing.assert_allclose(eta.std(axis=0), 0.15 * np.abs(e), rtol=0.05)


def test_zero_corruption_is_identity():
    e = np.log([0.5, 2.0, 4.0])
    for mode in ("relative", "log-scaled"):
        np.testing.assert_array_equal(corrupt_exposures(e, 0.0, 3, mode), e)
    with pytest.raises(ValueError):
        corrupt_exposures(e, -0.1)
    with pytest.raises(ValueError):
        corrupt_exposures(e, 0.1, mode="other")


def test_gradient():
    g = synth_gradient(13, 5)
    assert g.shape == (1, 5)
    assert g[0, 0] == 1.0 and g[0, -1] == 8192.0
    assert np.all(np.diff(g) > 0)


@given(st.integers(0, 2 ** 32))
def test_simulate_stack_is_deterministic(seed):
    scene = np.linspace(0.001, 1.0, 48).reshape(4, 12)
    cfg = SimConfig(seed=seed, iso=400)
    a = simulate_stack(scene, cfg, CANON_S100.params(400))
    b = simulate_stack(scene, cfg, CANON_S100.params(400))
    np.testing.assert_array_equal(a.stack.images, b.stack.images)
    np.testing.assert_array_equal(a.e_exif, b.e_exif)


def test_simulate_stack_metadata():
    scene = np.full((8, 8, 3), 0.5)
    sim = simulate_stack(scene, SimConfig(seed=4, iso=200), CANON_S100.params(200))
    np.testing.assert_allclose(sim.e_true, np.log([1 / 64, 1 / 8, 1, 8]))
    np.testing.assert_allclose(sim.stack.log_priors(), sim.e_exif, rtol=1e-12)
    assert all(m.iso == 200 and m.white_level == 2 ** 14 - 1 for m in sim.stack.metadata)
    # radiance 1 maps to 90% of white in the shortest exposure
    assert sim.extra["radiance_scale"] == pytest.approx(0.9 * (2 ** 14 - 1) * 64)
    assert sim.stack.images[0].mean() / (2 ** 14 - 1) == pytest.approx(0.45, abs=0.005)


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(bit_depth=4)
    with pytest.raises(ValueError):
        SimConfig(corruption_mode="bogus")
