import numpy as np
import pytest

from qdm.errors import UsageError
from qdm.fitting import fit_cube
from qdm.recon import freqs_to_axis_field, gaussian_lowpass
from qdm.scenarios import (
    ProcessingSpec,
    field_noise_per_sigma,
    lowpass_noise_gain,
    measurement_scenario,
    scenario_spectral_sigma,
    spectral_sigma_for_floor,
)
from qdm.spectrum import NoiseSpec, synthesize_cube


def test_lowpass_gain_matches_white_noise():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((400, 400))
    for s in (1.0, np.sqrt(2.0), 3.0):
        out = gaussian_lowpass(a, s)[20:-20, 20:-20]
        assert np.std(out) == pytest.approx(lowpass_noise_gain(s), rel=0.03)
    # continuous-limit value 1 / (2 sigma sqrt(pi)) for a wide kernel
    assert lowpass_noise_gain(4.0) == pytest.approx(1 / (8 * np.sqrt(np.pi)), rel=1e-3)
    assert lowpass_noise_gain(0) == 1.0


def test_processing_spec():
    p = ProcessingSpec(2, 1.0)
    assert p.noise_gain() == pytest.approx(lowpass_noise_gain(1.0) / 2)
    assert p.apply(np.ones((6, 8))).shape == (3, 4)
    assert ProcessingSpec().apply(np.ones((3, 3))).shape == (3, 3)
    for bad in ((0, 0.0), (1.5, 0.0), (1, -1.0)):
        with pytest.raises(UsageError):
            ProcessingSpec(*bad)


def test_field_noise_per_sigma_matches_monte_carlo():
    sigma = 0.002
    zero = np.zeros((30, 30, 3))
    kw = dict(mode="single_axis", axis=1)
    a = fit_cube(synthesize_cube(zero, noise=NoiseSpec(sigma, 1), **kw))
    i = fit_cube(synthesize_cube(zero, noise=NoiseSpec(sigma, 2), **kw))
    dB = freqs_to_axis_field(a, i).dBz
    assert np.std(dB) == pytest.approx(field_noise_per_sigma() * sigma, rel=0.1)
    assert field_noise_per_sigma(idle_subtracted=False) == \
        pytest.approx(field_noise_per_sigma() / np.sqrt(2), rel=1e-12)


def test_spectral_sigma_scaling():
    s1 = spectral_sigma_for_floor(20e-9)
    assert spectral_sigma_for_floor(40e-9) == pytest.approx(2 * s1, rel=1e-12)
    p = ProcessingSpec(2, np.sqrt(2.0))
    assert spectral_sigma_for_floor(20e-9, p) == pytest.approx(s1 / p.noise_gain(), rel=1e-12)
    assert scenario_spectral_sigma("decapped") == pytest.approx(s1, rel=1e-12)
    with pytest.raises(UsageError):
        spectral_sigma_for_floor(0.0)
    with pytest.raises(UsageError):
        measurement_scenario("orbit")
