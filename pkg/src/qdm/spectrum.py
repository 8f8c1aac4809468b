"""Lorentzian ODMR spectra and synthetic spectral cubes.

Intensities are post-normalization fluorescence: a baseline near one with
Lorentzian dips at every resonance line.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError
from .nv import (
    DEFAULT_BIAS,
    NVAxisSet,
    PhysicalConstants,
    ResonanceSet,
    StressParams,
    _check_axis,
    resonances_for_field,
)

MODES = ("vector", "single_axis")


@dataclass(frozen=True)
class LorentzianLine:
    center: float
    fwhm: float
    contrast: float

    def __post_init__(self):
        if not self.fwhm > 0:
            raise UsageError(f"fwhm must be positive, got {self.fwhm}")
        if not 0 <= self.contrast < 1:
            raise UsageError(f"contrast must lie in [0, 1), got {self.contrast}")


@dataclass(frozen=True)
class Lineshape:
    """Default width and depth given to every hyperfine line."""

    fwhm: float = 1.0
    contrast: float = 0.02
    baseline: float = 1.0

    def to_dict(self):
        return {"fwhm": self.fwhm, "contrast": self.contrast, "baseline": self.baseline}


@dataclass(frozen=True)
class SpectrumModel:
    baseline: float
    lines: tuple = ()

    def __post_init__(self):
        if not self.baseline > 0:
            raise UsageError("baseline must be positive")
        object.__setattr__(self, "lines", tuple(self.lines))


@dataclass(frozen=True)
class SweepGrid:
    """Microwave sweep made of one or more uniform windows.

    ``windows`` holds ``(f_start, f_stop, n_points)`` triples in MHz;
    frequencies are the concatenation of the windows, ends included.
    """

    windows: tuple

    def __post_init__(self):
        wins = tuple((float(a), float(b), int(n)) for a, b, n in self.windows)
        if not wins:
            raise UsageError("a sweep needs at least one window")
        for a, b, n in wins:
            if not b > a:
                raise UsageError(f"window stop {b} must exceed start {a}")
            if n < 2:
                raise UsageError("each window needs at least 2 points")
        object.__setattr__(self, "windows", wins)

    @classmethod
    def uniform(cls, f_start, f_stop, n_points):
        return cls(((f_start, f_stop, n_points),))

    @classmethod
    def default_vector(cls):
        return cls.uniform(2750.0, 3000.0, 240)

    @classmethod
    def single_axis(cls, f_minus, f_plus, half_width=6.0, n_points=30):
        """Two windows centered on one axis' outer triplets."""
        lo, hi = sorted((float(f_minus), float(f_plus)))
        return cls(((lo - half_width, lo + half_width, n_points),
                    (hi - half_width, hi + half_width, n_points)))

    @property
    def frequencies(self):
        return np.concatenate([np.linspace(a, b, n) for a, b, n in self.windows])

    @property
    def n_points(self):
        return sum(n for _, _, n in self.windows)

    def segments(self):
        """Slices of :attr:`frequencies` belonging to each window."""
        out, start = [], 0
        for _, _, n in self.windows:
            out.append(slice(start, start + n))
            start += n
        return out

    def to_dict(self):
        return {"windows": [list(w) for w in self.windows]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(tuple(w) for w in d["windows"]))


@dataclass(frozen=True)
class NoiseSpec:
    """Additive Gaussian noise, ``sigma`` relative to the baseline."""

    sigma: float = 0.0
    seed: int = 0
    n_averages: int = 1

    def __post_init__(self):
        if not self.sigma >= 0:
            raise UsageError("noise sigma must be non-negative")
        if self.n_averages < 1:
            raise UsageError("n_averages must be at least 1")
        if not 0 <= int(self.seed) < 2**64:
            raise UsageError("seed must fit in 64 unsigned bits")

    @property
    def effective_sigma(self):
        return self.sigma / np.sqrt(self.n_averages)


def _freqs(grid):
    return grid.frequencies if isinstance(grid, SweepGrid) else np.asarray(grid, dtype=float)


def lorentzian_dips(freqs, centers, fwhm, contrast):
    """Sum of Lorentzian dips, broadcasting lines along the last axis.

    ``centers``, ``fwhm`` and ``contrast`` have shape ``(..., n_lines)``; the
    result has shape ``(..., n_freqs)``.
    """
    f = np.asarray(freqs, dtype=float)
    centers = np.asarray(centers, dtype=float)
    hw2 = (0.5 * np.asarray(fwhm, dtype=float)) ** 2
    hw2 = np.broadcast_to(hw2, centers.shape)
    contrast = np.broadcast_to(np.asarray(contrast, dtype=float), centers.shape)
    u = f[..., None, :] - centers[..., :, None]
    return np.sum(contrast[..., None] * hw2[..., None] / (u * u + hw2[..., None]), axis=-2)


def evaluate_spectrum(model, grid):
    """Intensity of a :class:`SpectrumModel` on a sweep."""
    f = _freqs(grid)
    if not model.lines:
        return np.full(f.shape, float(model.baseline))
    centers = np.array([ln.center for ln in model.lines])
    fwhm = np.array([ln.fwhm for ln in model.lines])
    contrast = np.array([ln.contrast for ln in model.lines])
    return model.baseline * (1.0 - lorentzian_dips(f, centers, fwhm, contrast))


def _axis_indices(mode, axis):
    if mode == "vector":
        return [0, 1, 2, 3]
    if mode == "single_axis":
        return [_check_axis(axis)]
    raise UsageError(f"mode must be one of {MODES}, got {mode!r}")


def line_centers(resonances, mode="vector", axis=1, c=PhysicalConstants()):
    """Hyperfine line centers for a mode, shape ``(..., n_lines)``.

    Lines come in triplets ordered axis by axis, minus branch before plus.
    """
    idx = _axis_indices(mode, axis)
    trip = resonances.hyperfine(c)[..., idx, :, :]  # (..., n_axes, 2, 3)
    return trip.reshape(trip.shape[:-3] + (-1,))


def group_assignment(resonances, mode="vector", axis=1):
    """Which (axis, branch) each triplet belongs to once sorted by frequency.

    Parameters
    ----------
    resonances : ResonanceSet
        Single-pixel resonances (arrays of shape ``(4,)``).

    Returns
    -------
    list of dict
        One entry per triplet in ascending frequency order with keys
        ``axis`` (1-based), ``branch`` (``"+"`` or ``"-"``) and
        ``expected_center`` (MHz).
    """
    idx = _axis_indices(mode, axis)
    entries = []
    for i in idx:
        entries.append({"axis": i + 1, "branch": "-", "expected_center": float(resonances.f_minus[i])})
        entries.append({"axis": i + 1, "branch": "+", "expected_center": float(resonances.f_plus[i])})
    return sorted(entries, key=lambda e: e["expected_center"])


def build_pixel_model(resonances, mode="vector", lineshape=Lineshape(), axis=1,
                      c=PhysicalConstants()):
    """Spectrum model for one pixel: 24 lines in vector mode, 6 in single-axis mode."""
    fm = np.asarray(resonances.f_minus, dtype=float)
    fp = np.asarray(resonances.f_plus, dtype=float)
    if not (np.all(np.isfinite(fm)) and np.all(np.isfinite(fp))):
        raise UsageError("resonances must be finite")
    centers = line_centers(ResonanceSet(fm, fp), mode, axis, c)
    lines = tuple(LorentzianLine(float(f0), lineshape.fwhm, lineshape.contrast) for f0 in centers)
    return SpectrumModel(lineshape.baseline, lines)


@dataclass(eq=False)
class SpectralCube:
    """Fluorescence versus (row, col, frequency).

    ``groups`` lists the expected triplet assignment in ascending frequency
    (see :func:`group_assignment`) so that analysis can tell which fitted
    resonance belongs to which NV axis and branch.
    """

    data: np.ndarray
    grid: SweepGrid
    mode: str = "vector"
    axis: int = 1
    pixel_size: float = 1e-5
    bias: np.ndarray = field(default_factory=lambda: DEFAULT_BIAS.copy())
    groups: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise UsageError(f"cube must be 3-D, got shape {self.data.shape}")
        if self.data.shape[2] != self.grid.n_points:
            raise UsageError("cube frequency axis does not match its sweep grid")
        if self.mode not in MODES:
            raise UsageError(f"unknown mode {self.mode!r}")
        self.bias = np.asarray(self.bias, dtype=float)

    @property
    def frequencies(self):
        return self.grid.frequencies

    @property
    def shape(self):
        return self.data.shape[:2]

    @property
    def n_groups(self):
        return 8 if self.mode == "vector" else 2


def pixel_rng(seed, index):
    """Independent generator for one pixel (or image) of a seeded run."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def synthesize_cube(field_map, bias=DEFAULT_BIAS, c=PhysicalConstants(), axes=None,
                    grid=None, noise=NoiseSpec(), mode="vector", hamiltonian="perturbative",
                    lineshape=Lineshape(), axis=1, dT=None, stress=StressParams(),
                    pixel_size=None):
    """Synthesize an ODMR cube from a lab-frame field map.

    Parameters
    ----------
    field_map : VectorFieldMap or ndarray, shape (rows, cols, 3)
        State-dependent field per pixel, T. ``None`` gives an idle cube of
        shape ``(1, 1)``; pass zeros for a larger idle cube.
    bias : array_like, shape (3,)
        Uniform bias field, T.
    grid : SweepGrid, optional
        Defaults to the 2750-3000 MHz vector sweep, or to two windows around
        the idle resonances of ``axis`` in single-axis mode.
    noise : NoiseSpec
        Per-pixel noise uses an independent stream keyed by (seed, pixel),
        so results do not depend on how pixels are scheduled.
    dT : float or ndarray, shape (rows, cols), optional
        Temperature change, K. Taken from ``field_map.dT`` when omitted.

    Returns
    -------
    SpectralCube
    """
    axes = NVAxisSet.standard() if axes is None else axes
    bias = np.asarray(getattr(bias, "B_bias", bias), dtype=float)
    if field_map is None:
        dB = np.zeros((1, 1, 3))
    elif hasattr(field_map, "stack"):
        dB = field_map.stack()
        pixel_size = field_map.pixel_size if pixel_size is None else pixel_size
        if dT is None:
            dT = getattr(field_map, "dT", None)
    else:
        dB = np.asarray(field_map, dtype=float)
    if dB.ndim != 3 or dB.shape[2] != 3:
        raise UsageError(f"field map must have shape (rows, cols, 3), got {dB.shape}")
    dT = np.asarray(0.0 if dT is None else dT, dtype=float)
    if dT.ndim and dT.shape != dB.shape[:2]:
        raise UsageError("temperature map does not match the field map")
    dT = np.broadcast_to(dT, dB.shape[:2])

    idle = resonances_for_field(bias, c, axes, 0.0, stress, "perturbative")
    if grid is None:
        if mode == "single_axis":
            i = _check_axis(axis)
            grid = SweepGrid.single_axis(idle.f_minus[i], idle.f_plus[i])
        else:
            grid = SweepGrid.default_vector()
    freqs = grid.frequencies

    res = resonances_for_field(bias + dB, c, axes, dT, stress, hamiltonian)
    centers = line_centers(res, mode, axis, c)  # (rows, cols, n_lines)
    out_lo, out_hi = freqs.min(), freqs.max()
    if np.any(centers < out_lo) or np.any(centers > out_hi):
        warnings.warn("some resonance lines fall outside the sweep range", RuntimeWarning,
                      stacklevel=2)
    rows, cols = dB.shape[:2]
    data = np.empty((rows, cols, freqs.size))
    for r in range(rows):
        dips = lorentzian_dips(freqs, centers[r], lineshape.fwhm, lineshape.contrast)
        data[r] = lineshape.baseline * (1.0 - dips)
    sigma = noise.effective_sigma * lineshape.baseline
    if sigma > 0:
        for r in range(rows):
            for col in range(cols):
                rng = pixel_rng(noise.seed, r * cols + col)
                data[r, col] += sigma * rng.standard_normal(freqs.size)

    return SpectralCube(
        data=data,
        grid=grid,
        mode=mode,
        axis=int(axis),
        pixel_size=1e-5 if pixel_size is None else float(pixel_size),
        bias=bias,
        groups=group_assignment(idle, mode, axis),
        meta={
            "hamiltonian": hamiltonian,
            "lineshape": lineshape.to_dict(),
            "noise": {"sigma": noise.sigma, "seed": int(noise.seed), "n_averages": noise.n_averages},
            "constants": c.to_dict(),
        },
    )
