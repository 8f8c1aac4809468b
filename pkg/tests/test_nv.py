import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from qdm.errors import ConfigError, UsageError
from qdm.nv import (
    DEFAULT_BIAS,
    NVAxisSet,
    PhysicalConstants,
    StressParams,
    delta_fields,
    hyperfine_lines,
    project_all_axes,
    project_onto_axis,
    reconstruct_vector,
    resonances_exact,
    resonances_for_field,
    resonances_perturbative,
    spin_hamiltonian,
)

C = PhysicalConstants()
S0 = StressParams()
AXES = NVAxisSet.standard()

fields = arrays(np.float64, 3, elements=st.floats(-100e-6, 100e-6))


def test_constants_defaults():
    assert (C.gamma, C.D0, C.A_hf, C.dD_dT) == (2.803e4, 2870.0, 2.158, -0.0742)
    with pytest.raises(ConfigError):
        PhysicalConstants(gamma=0)
    with pytest.raises(ConfigError):
        PhysicalConstants(A_hf=-1)


def test_axis_geometry():
    n = AXES.axes
    assert np.allclose(np.linalg.norm(n, axis=1), 1.0, atol=1e-15)
    G = n @ n.T
    off = np.abs(G[~np.eye(4, dtype=bool)])
    assert np.allclose(off, 1.0 / 3.0, atol=1e-15)
    for i in range(1, 5):
        F = AXES.frame(i)
        assert np.allclose(F @ F.T, np.eye(3), atol=1e-14)
        assert np.linalg.det(F) == pytest.approx(1.0)


def test_projection_hand_oracle():
    # n1 = (0, sqrt2, 1)/sqrt3, so the axial part of (0, 0, 1 mT) is 1/sqrt3 mT
    bz = project_onto_axis([0, 0, 1e-3], 1)[2]
    assert bz == pytest.approx(1e-3 / np.sqrt(3), rel=1e-14)
    assert round(bz * 1e3, 4) == 0.5774
    assert np.all(project_onto_axis([0, 0, 0], 3) == 0)


def test_default_bias_projections_distinct():
    proj = np.array([project_onto_axis(DEFAULT_BIAS, i)[2] for i in range(1, 5)]) * 1e3
    bx, by, bz = DEFAULT_BIAS * 1e3
    r2, r3 = np.sqrt(2), np.sqrt(3)
    hand = np.array([r2 * by + bz, r2 * bx + bz, r2 * by - bz, r2 * bx - bz]) / r3
    assert np.allclose(proj, hand, rtol=1e-13)
    assert np.allclose(proj, [1.657, 2.041, 0.907, 1.290], atol=6e-4)
    assert len(set(np.round(proj, 3))) == 4


def test_projection_errors():
    for bad in (0, 5, 1.5, True):
        with pytest.raises(UsageError):
            project_onto_axis([0, 0, 1e-3], bad)


@given(fields)
def test_projection_preserves_norm(B):
    for i in range(1, 5):
        assert np.linalg.norm(project_onto_axis(B, i)) == pytest.approx(np.linalg.norm(B),
                                                                        rel=1e-12, abs=1e-20)


def test_transverse_basis_is_observable_neutral(rng):
    # rotating the transverse basis about n_i leaves resonances unchanged
    B = rng.normal(0, 1e-3, (50, 3))
    ref = resonances_for_field(B)
    t = 0.7
    rot = []
    for (x, y) in AXES.transverse:
        rot.append([np.cos(t) * x + np.sin(t) * y, -np.sin(t) * x + np.cos(t) * y])
    other = NVAxisSet(AXES.axes, np.array(rot))
    alt = resonances_for_field(B, axes=other)
    assert np.allclose(ref.f_plus, alt.f_plus, atol=1e-9)
    assert np.allclose(ref.f_minus, alt.f_minus, atol=1e-9)


def test_perturbative_examples():
    fm, fp = resonances_perturbative(C, 0.0, [0, 0, 2e-3])
    assert (round(float(fm), 2), round(float(fp), 2)) == (2813.94, 2926.06)
    assert float(fp - fm) == pytest.approx(2 * 56.06, abs=1e-9)
    fm, fp = resonances_perturbative(C, 0.0, [2e-3, 0, 0])
    shift = 3 * (C.gamma * 2e-3) ** 2 / (2 * C.D0)
    assert float(fm) == float(fp) == pytest.approx(2870 + shift, abs=1e-12)
    assert round(float(fm), 3) == 2871.643
    assert resonances_perturbative(C, 0.0, [0, 0, 0]) == (2870.0, 2870.0)


def test_perturbative_temperature_and_stress():
    fm, fp = resonances_perturbative(C, 0.5, [0, 0, 0], dT=2.0)
    assert float(fm) == pytest.approx(2870 + 0.5 - 2 * 0.0742, abs=1e-12)


def test_exact_examples():
    fm, fp = resonances_exact(C, S0, [0, 0, 2e-3])
    assert float(fm) == pytest.approx(2870 - 56.06, abs=1e-9)
    assert float(fp) == pytest.approx(2870 + 56.06, abs=1e-9)
    # transverse field: the m=0 state couples to the symmetric +/-1 combination only
    g = C.gamma * 2e-3
    disc = np.sqrt(C.D0 ** 2 + 4 * g * g)
    lam = np.array([C.D0, (C.D0 + disc) / 2, (C.D0 - disc) / 2])
    oracle = np.sort(lam[:2] - lam[2])
    fm, fp = resonances_exact(C, S0, [2e-3, 0, 0])
    assert np.allclose([fm, fp], oracle, atol=1e-9)
    assert abs(float(fm) - 2871.095) < 1e-3 and abs(float(fp) - 2872.189) < 1e-3
    assert resonances_exact(C, S0, [0, 0, 0]) == pytest.approx((2870.0, 2870.0))


def test_hamiltonian_hermitian_with_stress():
    H = spin_hamiltonian(C, StressParams(1.0, -0.5, 0.2), [1e-3, 2e-3, -3e-4])
    assert np.allclose(H, H.conj().T)


def test_exact_zeeman_linearity_and_monotonicity():
    bz = np.linspace(0, 5e-3, 40)
    B = np.stack([0 * bz, 0 * bz, bz], axis=-1)
    fm, fp = resonances_exact(C, S0, B)
    assert np.allclose(fp - fm, 2 * C.gamma * bz, atol=1e-9)
    Bt = B + np.array([1e-3, 0.5e-3, 0])
    fm, fp = resonances_exact(C, S0, Bt)
    assert np.all(np.diff(fp - fm) > 0)


def test_default_bias_perturbative_within_1mhz():
    B = project_all_axes(DEFAULT_BIAS)
    p = np.array(resonances_perturbative(C, 0.0, B))
    e = np.array(resonances_exact(C, S0, B))
    assert np.max(np.abs(p - e)) < 1.0


def test_perturbative_error_is_cubic_in_field_magnitude():
    # the model mismatch scales as |B|^3: halving the whole field shrinks it about 8x
    B = project_all_axes(DEFAULT_BIAS)
    def err(Bn):
        return np.max(np.abs(np.array(resonances_perturbative(C, 0.0, Bn))
                             - np.array(resonances_exact(C, S0, Bn))), axis=0)
    ratio = err(B) / err(B / 2)
    assert np.all(ratio > 6.0)


def test_resonances_for_field_sign_convention():
    res = resonances_for_field(DEFAULT_BIAS, hamiltonian="exact")
    assert np.all(res.f_plus > res.f_minus)
    neg = resonances_for_field(-DEFAULT_BIAS, hamiltonian="exact")
    assert np.all(neg.f_plus < neg.f_minus)
    with pytest.raises(UsageError):
        resonances_for_field(DEFAULT_BIAS, hamiltonian="nope")


@given(arrays(np.float64, 3, elements=st.floats(-15e-6, 15e-6)))
def test_differential_cancellation_exact(dB):
    idle = resonances_for_field(DEFAULT_BIAS, hamiltonian="exact")
    act = resonances_for_field(DEFAULT_BIAS + dB, hamiltonian="exact")
    dBz, _ = delta_fields(act.f_plus - idle.f_plus, act.f_minus - idle.f_minus)
    truth = AXES.axes @ dB
    tol = np.maximum(1e-9, 0.01 * np.linalg.norm(dB))
    assert np.all(np.abs(dBz - truth) <= tol)


def test_hyperfine_examples():
    assert np.allclose(hyperfine_lines(2870.0), [2867.842, 2870.0, 2872.158], atol=1e-12)
    assert np.allclose(hyperfine_lines(3000.0), [2997.842, 3000.0, 3002.158], atol=1e-12)
    z = hyperfine_lines(2900.0, PhysicalConstants(A_hf=0.0))
    assert np.all(z == 2900.0)


@given(st.floats(2700, 3050))
def test_hyperfine_symmetric(f):
    lo, mid, hi = hyperfine_lines(f)
    assert mid == f
    assert (mid - lo) == pytest.approx(hi - mid, abs=1e-9)


def test_delta_fields_examples():
    dBz, dT = delta_fields(0.05606, -0.05606)
    assert dBz == pytest.approx(2.0e-6, rel=1e-12) and dT == 0
    assert delta_fields(0.0, 0.0) == (0.0, 0.0)
    dBz, dT = delta_fields(-0.0742, -0.0742)
    assert dBz == 0 and dT == pytest.approx(1.0, rel=1e-14)
    with pytest.raises(ConfigError):
        delta_fields(0.1, 0.1, PhysicalConstants(dD_dT=0.0))


def test_reconstruct_examples():
    p = AXES.axes @ np.array([1e-6, 0, 0])
    assert np.allclose(p, [0, 0.8165e-6, 0, 0.8165e-6], atol=1e-10)
    assert np.allclose(reconstruct_vector(p), [1e-6, 0, 0], atol=1e-20)
    p = AXES.axes @ np.array([0, 0, 1e-6])
    assert np.allclose(p, [0.5774e-6, 0.5774e-6, -0.5774e-6, -0.5774e-6], atol=1e-10)
    assert np.allclose(reconstruct_vector(p), [0, 0, 1e-6], atol=1e-20)
    assert np.all(reconstruct_vector([0, 0, 0, 0]) == 0)
    bad = reconstruct_vector([1e-6, np.nan, 0, 0])
    assert np.all(np.isnan(bad))
    with pytest.raises(UsageError):
        reconstruct_vector([1, 2, 3])


@given(arrays(np.float64, (20, 3), elements=st.floats(-100e-6, 100e-6)))
def test_reconstruct_is_left_inverse(B):
    proj = np.stack([project_onto_axis(B, i)[..., 2] for i in range(1, 5)], axis=-1)
    back = reconstruct_vector(proj)
    scale = np.maximum(np.linalg.norm(B, axis=-1, keepdims=True), 1e-30)
    assert np.all(np.abs(back - B) / scale < 1e-12)
