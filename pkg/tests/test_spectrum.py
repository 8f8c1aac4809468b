import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qdm.errors import UsageError
from qdm.nv import DEFAULT_BIAS, resonances_for_field
from qdm.recon import VectorFieldMap
from qdm.spectrum import (
    Lineshape,
    LorentzianLine,
    NoiseSpec,
    SpectrumModel,
    SweepGrid,
    build_pixel_model,
    evaluate_spectrum,
    group_assignment,
    synthesize_cube,
)


def test_lorentzian_examples():
    line = LorentzianLine(2870.0, 1.0, 0.02)
    grid = SweepGrid.uniform(2869.5, 2870.5, 3)
    y = evaluate_spectrum(SpectrumModel(1.0, [line]), grid)
    assert y[1] == pytest.approx(0.98, abs=1e-15)
    assert y[2] == pytest.approx(0.99, abs=1e-15)
    assert y[0] == pytest.approx(0.99, abs=1e-15)
    flat = evaluate_spectrum(SpectrumModel(1.3), grid)
    assert np.all(flat == 1.3)


def test_line_validation():
    with pytest.raises(UsageError):
        LorentzianLine(2870, 0.0, 0.02)
    with pytest.raises(UsageError):
        LorentzianLine(2870, 1.0, 1.0)
    with pytest.raises(UsageError):
        SpectrumModel(0.0)
    with pytest.raises(UsageError):
        SweepGrid.uniform(3000, 2900, 10)
    with pytest.raises(UsageError):
        SweepGrid.uniform(2900, 3000, 1)


@given(st.lists(st.tuples(st.floats(2800, 2950), st.floats(0.2, 3), st.floats(0, 0.05)),
                min_size=1, max_size=6), st.randoms())
def test_spectrum_linear_in_contrast_and_permutation_invariant(lines, rnd):
    grid = SweepGrid.uniform(2790, 2960, 400)
    L = [LorentzianLine(*p) for p in lines]
    y = evaluate_spectrum(SpectrumModel(1.0, L), grid)
    shuffled = list(L)
    rnd.shuffle(shuffled)
    assert np.allclose(evaluate_spectrum(SpectrumModel(1.0, shuffled), grid), y, atol=1e-14)
    half = [LorentzianLine(l.center, l.fwhm, l.contrast / 2) for l in L]
    dip = 1 - y
    dip_half = 1 - evaluate_spectrum(SpectrumModel(1.0, half), grid)
    assert np.allclose(dip_half, dip / 2, atol=1e-14)


def test_build_pixel_model_line_counts():
    res = resonances_for_field(DEFAULT_BIAS)
    assert len(build_pixel_model(res, "vector").lines) == 24
    assert len(build_pixel_model(res, "single_axis", axis=1).lines) == 6
    zero = resonances_for_field(np.zeros(3))
    centers = {round(l.center, 9) for l in build_pixel_model(zero, "vector").lines}
    assert len(centers) == 3


def test_group_assignment_orders_by_frequency():
    res = resonances_for_field(DEFAULT_BIAS)
    g = group_assignment(res, "vector")
    assert len(g) == 8
    f = [e["expected_center"] for e in g]
    assert f == sorted(f)
    assert {(e["axis"], e["branch"]) for e in g} == {(a, b) for a in (1, 2, 3, 4) for b in "+-"}


def test_default_grids():
    g = SweepGrid.default_vector()
    assert g.n_points == 240 and g.frequencies[0] == 2750 and g.frequencies[-1] == 3000
    s = SweepGrid.single_axis(2820.0, 2920.0)
    assert s.n_points == 60 and len(s.segments()) == 2
    assert SweepGrid.from_dict(s.to_dict()) == s


def _zero_map(n=4):
    z = np.zeros((n, n))
    return VectorFieldMap(z, z, z, 1e-5)


def test_zero_field_cube_uniform_and_deterministic():
    a = synthesize_cube(_zero_map())
    assert np.all(a.data == a.data[0, 0])
    n1 = synthesize_cube(_zero_map(), noise=NoiseSpec(0.01, seed=3))
    n2 = synthesize_cube(_zero_map(), noise=NoiseSpec(0.01, seed=3))
    assert np.array_equal(n1.data, n2.data)
    n3 = synthesize_cube(_zero_map(), noise=NoiseSpec(0.01, seed=4))
    assert not np.array_equal(n1.data, n3.data)


def test_noiseless_pixel_equals_evaluate_spectrum(rng):
    B = rng.normal(0, 10e-6, (3, 3, 3))
    cube = synthesize_cube(B)
    for r, c in ((0, 0), (2, 1)):
        res = resonances_for_field(DEFAULT_BIAS + B[r, c])
        y = evaluate_spectrum(build_pixel_model(res, "vector"), cube.grid)
        assert np.allclose(cube.data[r, c], y, atol=1e-15, rtol=0)


def test_axial_2uT_shifts_outer_lines():
    n1 = np.array([0.0, np.sqrt(2), 1.0]) / np.sqrt(3)
    B = np.broadcast_to(2e-6 * n1, (1, 1, 3)).copy()
    res_a = resonances_for_field(DEFAULT_BIAS + B[0, 0])
    res_i = resonances_for_field(DEFAULT_BIAS)
    dfp = res_a.f_plus[0] - res_i.f_plus[0]
    dfm = res_a.f_minus[0] - res_i.f_minus[0]
    # outer lines move by +/- gamma * 2 uT; the second-order term adds a tiny common shift
    assert (dfp - dfm) / 2 == pytest.approx(0.05606, abs=1e-9)
    assert abs((dfp + dfm) / 2) < 2e-3


def test_noise_statistics():
    cube0 = synthesize_cube(np.zeros((20, 25, 3)))
    cube = synthesize_cube(np.zeros((20, 25, 3)), noise=NoiseSpec(0.004, 9, n_averages=4))
    resid = cube.data - cube0.data
    assert resid.size >= 1e5
    assert np.std(resid) == pytest.approx(0.002, rel=0.05)


def test_synth_errors_and_warnings():
    with pytest.raises(UsageError):
        synthesize_cube(np.zeros((3, 3)))
    with pytest.raises(UsageError):
        synthesize_cube(np.zeros((2, 2, 3)), dT=np.zeros((3, 3)))
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        synthesize_cube(np.zeros((1, 1, 3)), grid=SweepGrid.uniform(2860, 2880, 50))
    assert any("outside the sweep" in str(x.message) for x in w)


def test_single_axis_cube_windows():
    cube = synthesize_cube(np.zeros((2, 2, 3)), mode="single_axis", axis=2)
    assert cube.n_groups == 2 and cube.data.shape == (2, 2, 60)
    assert [g["axis"] for g in cube.groups] == [2, 2]


def test_lineshape_in_meta():
    cube = synthesize_cube(np.zeros((1, 1, 3)), lineshape=Lineshape(0.8, 0.03))
    assert cube.meta["lineshape"]["fwhm"] == 0.8
    assert cube.meta["constants"]["A_hf"] == 2.158
