"""NV ground-state physics.

Frequencies are in MHz, fields in tesla and temperatures in kelvin. Every
Hamiltonian term is expressed as H/h, so Planck's constant never appears.

Array arguments broadcast: a field may be a single 3-vector or any stack of
shape ``(..., 3)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, UsageError

SQRT2 = np.sqrt(2.0)
SQRT3 = np.sqrt(3.0)


@dataclass(frozen=True)
class PhysicalConstants:
    """Constants of the NV ground-state Hamiltonian.

    Attributes
    ----------
    gamma : float
        Gyromagnetic ratio in MHz/T.
    D0 : float
        Zero-field splitting at the reference temperature, MHz.
    dD_dT : float
        Temperature coefficient of the zero-field splitting, MHz/K.
    A_hf : float
        14N hyperfine splitting, MHz.
    """

    gamma: float = 2.803e4
    D0: float = 2870.0
    dD_dT: float = -0.0742
    A_hf: float = 2.158

    def __post_init__(self):
        if not self.gamma > 0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}")
        if not self.A_hf >= 0:
            raise ConfigError(f"A_hf must be non-negative, got {self.A_hf}")
        if not np.isfinite(self.D0) or not np.isfinite(self.dD_dT):
            raise ConfigError("D0 and dD_dT must be finite")

    def to_dict(self):
        return {"gamma": self.gamma, "D0": self.D0, "dD_dT": self.dD_dT, "A_hf": self.A_hf}


@dataclass(frozen=True)
class StressParams:
    """Crystal stress terms of the Hamiltonian, MHz."""

    Mx: float = 0.0
    My: float = 0.0
    Mz: float = 0.0

    def __post_init__(self):
        if not all(np.isfinite([self.Mx, self.My, self.Mz])):
            raise ConfigError("stress terms must be finite")


def _transverse_basis(n):
    # Gram-Schmidt of lab Z against n, falling back to lab X when n is along Z
    for ref in (np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0])):
        x = ref - np.dot(ref, n) * n
        norm = np.linalg.norm(x)
        if norm > 1e-8:
            x = x / norm
            return x, np.cross(n, x)
    raise ConfigError("cannot build a transverse basis")  # pragma: no cover


@dataclass(frozen=True, eq=False)
class NVAxisSet:
    """The four NV symmetry axes in the lab frame.

    ``axes[i]`` is the unit vector of NV axis ``i + 1``;
    ``transverse[i]`` holds the orthonormal pair (x_i, y_i) completing the
    right-handed NV frame of that axis.
    """

    axes: np.ndarray
    transverse: np.ndarray = field(default=None)

    def __post_init__(self):
        axes = np.asarray(self.axes, dtype=float)
        if axes.shape != (4, 3):
            raise ConfigError(f"expected 4 axes of 3 components, got shape {axes.shape}")
        if not np.allclose(np.linalg.norm(axes, axis=1), 1.0, atol=1e-12):
            raise ConfigError("NV axes must be unit vectors")
        if self.transverse is None:
            trans = np.array([_transverse_basis(n) for n in axes])
        else:
            trans = np.asarray(self.transverse, dtype=float)
            if trans.shape != (4, 2, 3):
                raise ConfigError("transverse bases must have shape (4, 2, 3)")
            for n, (x, y) in zip(axes, trans):
                frame = np.array([x, y, n])
                if not np.allclose(frame @ frame.T, np.eye(3), atol=1e-10):
                    raise ConfigError("transverse bases must complete an orthonormal frame")
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "transverse", trans)

    @classmethod
    def standard(cls):
        """<111> axes of a (100)-cut diamond with edges along lab X and Y.

        With this convention the lab-frame vector follows from the four axial
        projections through the closed-form combination used by
        :func:`reconstruct_vector`.
        """
        axes = np.array(
            [
                [0.0, SQRT2, 1.0],
                [SQRT2, 0.0, 1.0],
                [0.0, SQRT2, -1.0],
                [SQRT2, 0.0, -1.0],
            ]
        ) / SQRT3
        return cls(axes)

    def frame(self, axis_index):
        """Rows (x_i, y_i, n_i) of the NV frame for a 1-based axis index."""
        i = _check_axis(axis_index)
        return np.vstack([self.transverse[i], self.axes[i]])

    def to_dict(self):
        return {"convention": "lab-frame unit vectors", "axes": self.axes.tolist()}


def _check_axis(axis_index):
    if isinstance(axis_index, bool) or int(axis_index) != axis_index or not 1 <= axis_index <= 4:
        raise UsageError(f"axis_index must be 1, 2, 3 or 4, got {axis_index!r}")
    return int(axis_index) - 1


@dataclass(frozen=True, eq=False)
class FieldState:
    """Bias field, state-dependent field (both lab frame, T) and temperature change (K)."""

    B_bias: np.ndarray = field(default_factory=lambda: np.array([2.04e-3, 1.57e-3, 0.65e-3]))
    dB: np.ndarray = field(default_factory=lambda: np.zeros(3))
    dT: float = 0.0

    def __post_init__(self):
        bias = np.asarray(self.B_bias, dtype=float)
        if bias.shape != (3,):
            raise UsageError("B_bias must be a 3-vector")
        magnitude = np.linalg.norm(bias)
        if not 0 < magnitude <= 10e-3:
            raise UsageError(f"|B_bias| = {magnitude:g} T is outside (0, 10 mT]")
        object.__setattr__(self, "B_bias", bias)
        object.__setattr__(self, "dB", np.asarray(self.dB, dtype=float))


DEFAULT_BIAS = np.array([2.04e-3, 1.57e-3, 0.65e-3])


@dataclass(frozen=True, eq=False)
class ResonanceSet:
    """ODMR transition frequencies for the four NV axes, MHz.

    ``f_minus`` and ``f_plus`` have shape ``(..., 4)``; index ``i`` is NV axis
    ``i + 1``.
    """

    f_minus: np.ndarray
    f_plus: np.ndarray

    def hyperfine(self, c=PhysicalConstants()):
        """Triplet line centers, shape ``(..., 4, 2, 3)``: axis, branch (-, +), line."""
        pair = np.stack([self.f_minus, self.f_plus], axis=-1)
        return hyperfine_lines(pair, c)


def project_onto_axis(B_lab, axis_index, axes=None):
    """Components of a lab-frame field in the frame of one NV axis.

    Parameters
    ----------
    B_lab : array_like, shape (..., 3)
        Field in the lab frame, T.
    axis_index : int
        NV axis, 1 to 4.
    axes : NVAxisSet, optional
        Axis convention; :meth:`NVAxisSet.standard` by default.

    Returns
    -------
    ndarray, shape (..., 3)
        ``(Bx, By, Bz)`` with ``Bz`` along the NV axis.
    """
    axes = NVAxisSet.standard() if axes is None else axes
    frame = axes.frame(axis_index)
    return np.asarray(B_lab, dtype=float) @ frame.T


def project_all_axes(B_lab, axes=None):
    """NV-frame components on every axis, shape ``(..., 4, 3)``."""
    axes = NVAxisSet.standard() if axes is None else axes
    frames = np.concatenate([axes.transverse, axes.axes[:, None, :]], axis=1)  # (4, 3, 3)
    return np.einsum("...k,ijk->...ij", np.asarray(B_lab, dtype=float), frames)


def resonances_perturbative(c, Mz, B_nv, dB_nv=None, dT=0.0):
    """Second-order resonance frequencies of one NV axis.

    ``f = D' + 3 gamma^2 (Bx^2 + By^2) / (2 D') +/- gamma Bz`` with
    ``D' = D0 + dD_dT * dT + Mz``, where the field is the bias plus the
    optional state-dependent part.

    Returns
    -------
    (f_minus, f_plus) : tuple of ndarray
    """
    B = np.asarray(B_nv, dtype=float)
    if dB_nv is not None:
        B = B + np.asarray(dB_nv, dtype=float)
    d_eff = c.D0 + c.dD_dT * np.asarray(dT, dtype=float) + Mz
    gb = c.gamma * B
    shift = 1.5 * (gb[..., 0] ** 2 + gb[..., 1] ** 2) / d_eff
    center = d_eff + shift
    return center - gb[..., 2], center + gb[..., 2]


_S = 1.0 / SQRT2
_SX = _S * np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=complex)
_SY = _S * np.array([[0, -1j, 0], [1j, 0, -1j], [0, 1j, 0]], dtype=complex)
_SZ = np.diag([1.0, 0.0, -1.0]).astype(complex)


def spin_hamiltonian(c, s, B_nv, dT=0.0):
    """Full 3x3 ground-state Hamiltonian in the (m=+1, 0, -1) basis, MHz."""
    B = np.asarray(B_nv, dtype=float)
    d_eff = c.D0 + c.dD_dT * np.asarray(dT, dtype=float) + s.Mz
    gb = c.gamma * B
    H = (
        np.asarray(d_eff)[..., None, None] * (_SZ @ _SZ)
        + gb[..., 0, None, None] * _SX
        + gb[..., 1, None, None] * _SY
        + gb[..., 2, None, None] * _SZ
    )
    H = H + s.Mx * (_SY @ _SY - _SX @ _SX) + s.My * (_SX @ _SY + _SY @ _SX)
    return H


def resonances_exact(c, s, B_nv, dT=0.0):
    """Transition frequencies from exact diagonalization of the spin Hamiltonian.

    Returns the two frequencies from the lowest eigenstate to the upper two,
    sorted ascending.
    """
    H = spin_hamiltonian(c, s, B_nv, dT)
    if not np.allclose(H, np.conj(np.swapaxes(H, -1, -2)), rtol=0, atol=1e-9):
        raise AssertionError("spin Hamiltonian is not Hermitian")  # pragma: no cover
    e = np.linalg.eigvalsh(H)
    return e[..., 1] - e[..., 0], e[..., 2] - e[..., 0]


def resonances_for_field(B_lab, c=PhysicalConstants(), axes=None, dT=0.0,
                         stress=StressParams(), hamiltonian="perturbative"):
    """Resonances on all four axes for a total lab-frame field.

    Parameters
    ----------
    B_lab : array_like, shape (..., 3)
        Total field (bias plus sample), T.
    hamiltonian : {"perturbative", "exact"}

    Returns
    -------
    ResonanceSet
        Arrays of shape ``(..., 4)``. In the exact case the pair is ordered so
        that ``f_plus`` tracks m=+1: the sorted pair is swapped on axes whose
        axial projection is negative.
    """
    B_nv = project_all_axes(B_lab, axes)
    dT = np.asarray(dT, dtype=float)[..., None]
    if hamiltonian == "perturbative":
        fm, fp = resonances_perturbative(c, stress.Mz, B_nv, None, dT)
    elif hamiltonian == "exact":
        lo, hi = resonances_exact(c, stress, B_nv, dT)
        flip = B_nv[..., 2] < 0
        fm = np.where(flip, hi, lo)
        fp = np.where(flip, lo, hi)
    else:
        raise UsageError(f"unknown hamiltonian {hamiltonian!r}")
    return ResonanceSet(fm, fp)


def hyperfine_lines(f_center, c=PhysicalConstants()):
    """The three 14N hyperfine lines, ascending, stacked on a new last axis."""
    f = np.asarray(f_center, dtype=float)
    return np.stack([f - c.A_hf, f, f + c.A_hf], axis=-1)


def delta_fields(df_plus, df_minus, c=PhysicalConstants()):
    """Axial field and temperature change from resonance shifts.

    ``dBz = (df_plus - df_minus) / (2 gamma)``,
    ``dT = (df_plus + df_minus) / (2 dD_dT)``.
    """
    if c.dD_dT == 0:
        raise ConfigError("dD_dT is zero; temperature cannot be recovered")
    dfp = np.asarray(df_plus, dtype=float)
    dfm = np.asarray(df_minus, dtype=float)
    return (dfp - dfm) / (2.0 * c.gamma), (dfp + dfm) / (2.0 * c.dD_dT)


_K_XY = SQRT3 / (2.0 * SQRT2)
_K_Z = SQRT3 / 4.0


def reconstruct_vector(dBz_axes):
    """Lab-frame vector from the four axial projections (standard axes).

    Parameters
    ----------
    dBz_axes : array_like, shape (..., 4)

    Returns
    -------
    ndarray, shape (..., 3)
        ``(dB_X, dB_Y, dB_Z)``. A non-finite projection on any axis makes all
        three components NaN.
    """
    p = np.asarray(dBz_axes, dtype=float)
    if p.shape[-1] != 4:
        raise UsageError("need four axial projections")
    p1, p2, p3, p4 = p[..., 0], p[..., 1], p[..., 2], p[..., 3]
    out = np.stack(
        [
            _K_XY * (p2 + p4),
            _K_XY * (p1 + p3),
            _K_Z * ((p1 - p3) - (p4 - p2)),
        ],
        axis=-1,
    )
    bad = ~np.all(np.isfinite(p), axis=-1)
    if np.any(bad):
        out[bad] = np.nan
    return out
