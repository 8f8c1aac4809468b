import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qdm import _backend
from qdm.errors import UsageError
from qdm.fitting import (
    CONVERGED_STATUS,
    FitConfig,
    fit_cube,
    fit_pixel,
    fit_spectra,
    initial_guess,
    line_offsets,
    parameter_covariance,
)
from qdm.nv import DEFAULT_BIAS, hyperfine_lines, resonances_for_field
from qdm.spectrum import (
    LorentzianLine,
    NoiseSpec,
    SpectrumModel,
    SweepGrid,
    evaluate_spectrum,
    synthesize_cube,
)

A = 2.158
BACKENDS = ["python"] + (["cython"] if _backend.NAME == "cython" else [])


def triplet_spectrum(grid, centers, fwhm=1.0, contrast=0.02, baseline=1.0):
    lines = [LorentzianLine(f, fwhm, contrast) for c in centers for f in hyperfine_lines(c)]
    return evaluate_spectrum(SpectrumModel(baseline, lines), grid)


def test_config_validation():
    with pytest.raises(UsageError):
        FitConfig(max_iterations=0)
    with pytest.raises(UsageError):
        FitConfig(cost_tolerance=0)
    with pytest.raises(UsageError):
        FitConfig(damping_up=0.5)
    assert FitConfig().to_dict()["max_iterations"] == 200


def test_initial_guess_two_triplets():
    grid = SweepGrid.default_vector()
    y = triplet_spectrum(grid, [2820.0, 2920.0])
    g = initial_guess(y, grid, 2)
    assert not g.low_confidence
    assert np.all(np.abs(g.params[1::3] - [2820.0, 2920.0]) < 0.5)


def test_initial_guess_flat_is_low_confidence():
    grid = SweepGrid.default_vector()
    assert initial_guess(np.ones(grid.n_points), grid, 2).low_confidence


@given(st.floats(0.1, 100.0))
def test_initial_guess_scale_invariant(k):
    grid = SweepGrid.default_vector()
    y = triplet_spectrum(grid, [2805.3, 2941.7])
    a = initial_guess(y, grid, 2).params
    b = initial_guess(k * y, grid, 2).params
    assert np.allclose(a[1::3], b[1::3], atol=1e-9)


@pytest.mark.parametrize("backend", BACKENDS)
def test_fit_pixel_recovers_noiseless_triplet(backend):
    grid = SweepGrid.uniform(2850, 2890, 161)
    truth = np.array([1.0, 2870.3, 0.9, 0.025])
    y = triplet_spectrum(grid, [2870.3], 0.9, 0.025)
    init = truth + np.array([0.01, 0.4, 0.2, -0.005])
    r = fit_pixel(y, grid, init, backend=backend)
    assert r.converged
    rel = np.abs(r.params - truth) / np.abs(truth)
    assert np.all(rel < 1e-6)


def test_noise_center_std_below_10khz():
    # fine single-window sweep around the triplet; the grid is part of the test condition
    grid = SweepGrid.uniform(2860, 2880, 201)
    y0 = triplet_spectrum(grid, [2870.0])
    truth = np.array([1.0, 2870.0, 1.0, 0.02])
    rng = np.random.default_rng(1)
    Y = y0 + 0.001 * rng.standard_normal((100, grid.n_points))
    p, _, _, status = fit_spectra(Y, grid, np.tile(truth, (100, 1)))
    assert np.all(np.isin(status, CONVERGED_STATUS))
    assert np.std(p[:, 1]) * 1e3 < 10.0
    crb = np.sqrt(parameter_covariance(grid, truth, 0.001)[1, 1])
    assert np.std(p[:, 1]) == pytest.approx(crb, rel=0.25)


def test_degenerate_inputs_flagged():
    grid = SweepGrid.uniform(2850, 2890, 81)
    r = fit_pixel(np.zeros(grid.n_points), grid, [1.0, 2870, 1.0, 0.02])
    assert not r.converged and r.status == 5
    y = triplet_spectrum(grid, [2870.0])
    y[5] = np.nan
    r = fit_pixel(y, grid, [1.0, 2870, 1.0, 0.02])
    assert not r.converged and r.status == 4
    with pytest.raises(UsageError):
        fit_pixel(y, grid)


def test_max_iterations_status():
    grid = SweepGrid.uniform(2850, 2890, 81)
    y = triplet_spectrum(grid, [2871.0])
    r = fit_pixel(y, grid, [1.0, 2869.0, 1.5, 0.01], FitConfig(max_iterations=1))
    assert r.status == 2 and not r.converged and np.all(np.isfinite(r.params))


@pytest.mark.parametrize("backend", BACKENDS)
def test_accepted_costs_non_increasing(backend, rng):
    grid = SweepGrid.default_vector()
    cube = synthesize_cube(rng.normal(0, 8e-6, (4, 4, 3)), noise=NoiseSpec(0.002, 5))
    spectra = cube.data.reshape(-1, grid.n_points)
    p0 = np.array([initial_guess(s, grid, 8).params for s in spectra])
    cfg = FitConfig()
    hist = np.empty((spectra.shape[0], cfg.max_iterations + 1))
    fit_spectra(spectra, grid, p0, cfg, history=hist, backend=backend)
    for h in hist:
        h = h[np.isfinite(h)]
        assert np.all(np.diff(h) <= 1e-15 * h[0])


def test_jacobian_matches_finite_differences(rng):
    kern = _backend.get("python")
    freqs = SweepGrid.uniform(2820, 2920, 300).frequencies
    offs = line_offsets(True, A)
    for _ in range(100):
        p = np.array([rng.uniform(0.8, 1.2), rng.uniform(2840, 2860), rng.uniform(0.5, 2),
                      rng.uniform(0.005, 0.05), rng.uniform(2870, 2900), rng.uniform(0.5, 2),
                      rng.uniform(0.005, 0.05)])
        _, J = kern.model_jacobian(freqs, p[None], offs)
        J = J[0]
        scale = np.array([1.0, 1.0, 1.0, 0.02, 1.0, 1.0, 0.02])
        for k in range(p.size):
            h = 1e-6 * scale[k]
            up, dn = p.copy(), p.copy()
            up[k] += h
            dn[k] -= h
            fd = (kern.model_only(freqs, up[None], offs)[0]
                  - kern.model_only(freqs, dn[None], offs)[0]) / (2 * h)
            err = np.max(np.abs(fd - J[:, k])) / max(np.max(np.abs(J[:, k])), 1e-30)
            assert err < 1e-4


def _noiseless_cube(n=16, seed=0, mode="vector"):
    B = np.random.default_rng(seed).normal(0, 6e-6, (n, n, 3))
    return B, synthesize_cube(B, mode=mode)


def test_fit_cube_16x16_noiseless():
    B, cube = _noiseless_cube()
    pm = fit_cube(cube)
    assert pm.converged_fraction == 1.0
    res = resonances_for_field(DEFAULT_BIAS + B)
    for k, g in enumerate(cube.groups):
        f = (res.f_plus if g["branch"] == "+" else res.f_minus)[..., g["axis"] - 1]
        assert np.max(np.abs(pm.centers[..., k] - f)) < 1e-3
    assert pm.shape == (16, 16) and pm.axes() == [1, 2, 3, 4]


def test_fit_cube_worker_invariance_and_backends():
    _, cube = _noiseless_cube(8, seed=3)
    a = fit_cube(cube, FitConfig(workers=1))
    b = fit_cube(cube, FitConfig(workers=4))
    for name in ("centers", "fwhms", "contrasts", "baseline", "residual_norm", "iterations",
                 "status"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    if len(BACKENDS) == 2:
        c = fit_cube(cube, backend="python")
        assert np.max(np.abs(c.centers - a.centers)) < 1e-9


def test_fit_cube_nan_pixel_isolated():
    _, cube = _noiseless_cube(6, seed=4)
    ref = fit_cube(cube)
    cube.data[2, 3, 10] = np.nan
    pm = fit_cube(cube)
    assert not pm.converged[2, 3]
    mask = np.ones((6, 6), bool)
    mask[2, 3] = False
    assert np.array_equal(pm.centers[mask], ref.centers[mask])
    assert np.all(np.isnan(pm.resonance(1, "+")[2, 3]))


def test_fit_cube_single_axis_and_free_lines():
    B, cube = _noiseless_cube(4, seed=5, mode="single_axis")
    pm = fit_cube(cube, FitConfig(share_triplet_shape=False))
    assert pm.converged_fraction == 1.0 and pm.lines_per_group == 1
    res = resonances_for_field(DEFAULT_BIAS + B)
    assert np.max(np.abs(pm.resonance(1, "+") - res.f_plus[..., 0])) < 1e-3


def test_progress_hook_called():
    _, cube = _noiseless_cube(4)
    seen = []
    fit_cube(cube, progress=lambda d, t: seen.append((d, t)))
    assert seen and seen[-1] == (16, 16)


@settings(max_examples=8)
@given(st.floats(2800, 2860), st.floats(2880, 2940), st.floats(0.6, 1.5), st.floats(0.01, 0.04))
def test_property_noiseless_recovery(f1, f2, w, c):
    grid = SweepGrid.default_vector()
    y = triplet_spectrum(grid, [f1, f2], w, c)
    r = fit_pixel(y, grid, n_groups=2)
    assert r.converged
    assert np.allclose(r.centers, [f1, f2], atol=1e-6)


def test_estimator_consistency_with_averaging():
    # the center error falls as 1/sqrt(n_averages)
    grid = SweepGrid.uniform(2860, 2880, 101)
    y0 = triplet_spectrum(grid, [2870.0])
    truth = np.array([1.0, 2870.0, 1.0, 0.02])
    rng = np.random.default_rng(2)
    stds = []
    for n_avg in (1, 4, 16):
        Y = y0 + 0.004 / np.sqrt(n_avg) * rng.standard_normal((400, grid.n_points))
        p, _, _, _ = fit_spectra(Y, grid, np.tile(truth, (400, 1)))
        stds.append(np.std(p[:, 1]))
    slope = np.polyfit(np.log([1, 4, 16]), np.log(stds), 1)[0]
    assert slope == pytest.approx(-0.5, abs=0.05)
