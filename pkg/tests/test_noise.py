import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from expstack.errors import DataContractError, NoiseDomainError, UnknownISOError
from expstack.noise import (CANON_S100, NoiseParameters, NoiseProfile, get_profile, log_moments,
                            pixel_variance, row_weight_calibrated, row_weight_calibration_free)

# Canon PowerShot S100 calibration, sensor range normalised to [0, 1]
TABLE = {
    100: ((2.46e-5, 1.67e-5, 7.41e-5), (3.58e-8, 2.13e-8, 1.28e-7)),
    200: ((4.57e-5, 3.02e-5, 1.32e-4), (9.89e-8, 6.07e-8, 2.66e-7)),
    400: ((9.12e-5, 5.95e-5, 2.59e-4), (2.21e-7, 1.72e-7, 5.61e-7)),
    800: ((1.85e-4, 1.19e-4, 5.26e-4), (4.94e-7, 4.28e-7, 1.14e-6)),
}

P800 = CANON_S100.params(800)
pos = st.floats(1e-4, 1.0)


@pytest.mark.parametrize("iso", sorted(TABLE))
def test_builtin_profile_matches_calibration_table(iso):
    p = CANON_S100.params(iso)
    assert p.alpha == TABLE[iso][0]
    assert p.beta == TABLE[iso][1]


def test_unknown_iso_lists_available():
    with pytest.raises(UnknownISOError) as info:
        CANON_S100.params(1600)
    assert "[100, 200, 400, 800]" in str(info.value)


def test_monochrome_uses_green():
    mono = P800.for_channel_count(1)
    assert mono.alpha == (1.19e-4,) and mono.beta == (4.28e-7,)


@pytest.mark.parametrize("alpha,beta", [((0.0,), (0.0,)), ((1e-4,), (-1e-9,)), ((1e-4, 1e-4), (0.0,))])
def test_parameter_validation(alpha, beta):
    with pytest.raises(DataContractError):
        NoiseParameters(alpha, beta)


def test_profile_json_roundtrip(tmp_path):
    CANON_S100.save(tmp_path / "p.json")
    back = get_profile(str(tmp_path / "p.json"))
    assert back.isos == CANON_S100.isos
    assert back.params(400) == CANON_S100.params(400)
    assert json.loads((tmp_path / "p.json").read_text())["name"] == "canon-s100"


def test_get_profile_errors(tmp_path):
    with pytest.raises(DataContractError):
        get_profile("no-such-camera")
    (tmp_path / "bad.json").write_text(json.dumps({"entries": [{"iso": 1}]}))
    with pytest.raises(DataContractError):
        NoiseProfile.from_json(tmp_path / "bad.json")


def test_pixel_variance_affine():
    assert pixel_variance(0.5, P800, 2) == pytest.approx(5.26e-4 * 0.5 + 1.14e-6)
    assert pixel_variance(0.0, P800, 0) == pytest.approx(4.94e-7)
    with pytest.raises(NoiseDomainError):
        pixel_variance(-0.1, P800)


@given(pos)
def test_log_moments_match_finite_difference_propagation(y):
    # independent oracle: numeric derivative of ln at y, squared, times Var[Y]
    h = 1e-6 * y
    slope = (np.log(y + h) - np.log(y - h)) / (2 * h)
    mean, var = log_moments(y, P800, 1)
    assert mean == pytest.approx(np.log(y))
    assert var == pytest.approx(slope ** 2 * (1.19e-4 * y + 4.28e-7), rel=1e-6)


@pytest.mark.parametrize("y", [0.0, -1.0, np.nan])
def test_log_moments_domain(y):
    with pytest.raises(NoiseDomainError):
        log_moments(y, P800)


@given(pos, pos)
def test_calibrated_weight_is_inverse_summed_log_variance(yi, yj):
    vi = log_moments(yi, P800, 0)[1]
    vj = log_moments(yj, P800, 0)[1]
    w = row_weight_calibrated(yi, yj, P800, 0)
    assert w == pytest.approx(1.0 / (vi + vj), rel=1e-12)
    assert w == pytest.approx(row_weight_calibrated(yj, yi, P800, 0), rel=1e-12)


@given(pos, pos, st.floats(1.01, 10.0))
def test_calibrated_weight_grows_with_signal(yi, yj, factor):
    assert row_weight_calibrated(yi * factor, yj, P800, 1) > row_weight_calibrated(yi, yj, P800, 1)


def test_calibrated_weight_per_sample_channels():
    y = np.array([0.2, 0.2, 0.2])
    w = row_weight_calibrated(y, y, P800, np.array([0, 1, 2]))
    assert w[1] > w[0] > w[2]


@given(pos, pos)
def test_calibration_free_weight(yi, yj):
    w = row_weight_calibration_free(yi, yj)
    assert w == pytest.approx(1.0 / (1.0 / yi + 1.0 / yj), rel=1e-12)
    assert min(yi, yj) / 2 <= w * (1 + 1e-12) and w <= min(yi, yj) * (1 + 1e-12)
    # equals the calibrated weight with beta = 0, up to the factor alpha
    shot = NoiseParameters((2e-4,), (0.0,))
    assert row_weight_calibrated(yi, yj, shot, 0) == pytest.approx(w / 2e-4, rel=1e-12)


def test_weights_reject_nonpositive():
    with pytest.raises(NoiseDomainError):
        row_weight_calibration_free(0.0, 1.0)
    with pytest.raises(NoiseDomainError):
        row_weight_calibrated(np.array([0.1, -0.1]), 0.5, P800, 1)
