"""Per-pixel Levenberg-Marquardt fitting of Lorentzian triplets.

Every spectrum is modeled as ``b * (1 - sum_g c_g * sum_l L(f; f_g + o_l, w_g))``
where the line offsets ``o_l`` are the hyperfine comb ``(-A, 0, +A)`` when the
triplet shape is shared, or a single ``0`` when each line is free.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import _backend
from .errors import UsageError
from .nv import PhysicalConstants
from .spectrum import SpectralCube, SweepGrid

STATUS_TEXT = {
    0: "cost change below tolerance",
    1: "step below tolerance",
    2: "iteration limit reached",
    3: "damping overflow at a minimum",
    4: "invalid input",
    5: "unphysical solution",
}
STATUS_UNPHYSICAL = 5
CONVERGED_STATUS = (0, 1, 3)

_GUESS_CHUNK = 1024
_FIT_CHUNK = 4096


@dataclass(frozen=True)
class FitConfig:
    """Solver settings.

    ``fwhm_guess`` and ``contrast_guess`` seed the line shape; ``workers``
    only changes speed, never results.
    """

    max_iterations: int = 200
    cost_tolerance: float = 1e-10
    param_tolerance: float = 1e-8
    initial_damping: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 0.1
    share_triplet_shape: bool = True
    fwhm_guess: float = 1.0
    contrast_guess: float = 0.02
    workers: int = 1

    def __post_init__(self):
        if self.max_iterations < 1:
            raise UsageError("max_iterations must be at least 1")
        if not (self.cost_tolerance > 0 and self.param_tolerance > 0):
            raise UsageError("tolerances must be positive")
        if not self.initial_damping > 0:
            raise UsageError("initial_damping must be positive")
        if not (self.damping_up > 1 and 0 < self.damping_down < 1):
            raise UsageError("damping_up must exceed 1 and damping_down lie in (0, 1)")
        if not (self.fwhm_guess > 0 and self.contrast_guess > 0):
            raise UsageError("line shape guesses must be positive")
        if self.workers < 1:
            raise UsageError("workers must be at least 1")

    def to_dict(self):
        return asdict(self)


@dataclass
class InitialGuess:
    """Starting parameters ``[baseline, center, fwhm, contrast, ...]``."""

    params: np.ndarray
    low_confidence: bool = False

    @property
    def centers(self):
        return self.params[1::3]


@dataclass
class PixelFitResult:
    centers: np.ndarray
    fwhms: np.ndarray
    contrasts: np.ndarray
    baseline: float
    residual_norm: float
    iterations: int
    converged: bool
    status: int = 0
    low_confidence: bool = False

    @property
    def params(self):
        p = np.empty(1 + 3 * self.centers.size)
        p[0] = self.baseline
        p[1::3], p[2::3], p[3::3] = self.centers, self.fwhms, self.contrasts
        return p


def line_offsets(shared, hyperfine):
    return np.array([-hyperfine, 0.0, hyperfine]) if shared else np.array([0.0])


def _segments(freqs, grid):
    if isinstance(grid, SweepGrid):
        return grid.segments()
    return [slice(0, freqs.size)]


def _smoothing_matrix(freqs, segments, width_mhz):
    """Moving average over about one linewidth, never crossing a window edge."""
    F = freqs.size
    S = np.zeros((F, F))
    for sl in segments:
        idx = np.arange(sl.start, sl.stop)
        if idx.size < 2:
            S[idx, idx] = 1.0
            continue
        df = (freqs[idx[-1]] - freqs[idx[0]]) / (idx.size - 1)
        half = int(round(0.5 * width_mhz / df)) if df > 0 else 0
        for k, j in enumerate(idx):
            lo, hi = max(0, k - half), min(idx.size, k + half + 1)
            S[j, idx[lo:hi]] = 1.0 / (hi - lo)
    return S


def _interp_matrix(freqs, segments, targets):
    """Rows interpolate a spectrum linearly at ``targets``; zero outside windows."""
    W = np.zeros((targets.size, freqs.size))
    for sl in segments:
        f = freqs[sl]
        inside = (targets >= f[0]) & (targets <= f[-1])
        t = targets[inside]
        j = np.clip(np.searchsorted(f, t, side="right") - 1, 0, f.size - 2)
        frac = (t - f[j]) / (f[j + 1] - f[j])
        rows = np.flatnonzero(inside)
        W[rows, sl.start + j] += 1.0 - frac
        W[rows, sl.start + j + 1] += frac
    return W


class _GuessPlan:
    """Linear operators shared by every pixel of one sweep grid."""

    def __init__(self, freqs, grid, hyperfine, fwhm):
        self.freqs = freqs
        segs = _segments(freqs, grid)
        step = fwhm / 10.0
        cand = [np.arange(freqs[s][0], freqs[s][-1] + 0.5 * step, step) for s in segs]
        self.candidates = np.unique(np.concatenate(cand))
        S = _smoothing_matrix(freqs, segs, fwhm)
        Q = np.zeros((self.candidates.size, freqs.size))
        for off in (-hyperfine, 0.0, hyperfine):
            Q += _interp_matrix(freqs, segs, self.candidates + off)
        self.Q = (Q @ S).T  # (F, n_cand): smoothed triplet-summed depth
        self.step = step
        self.exclusion = 2.0 * hyperfine + 2.0 * fwhm
        self.hyperfine = hyperfine
        self.fwhm = fwhm


def _robust_noise(dip):
    d = np.diff(dip, axis=1)
    med = np.median(d, axis=1, keepdims=True)
    return 1.4826 * np.median(np.abs(d - med), axis=1) / np.sqrt(2.0)


def _guess_batch(spectra, plan, n_groups, contrast_guess, shared):
    n, F = spectra.shape
    finite = np.all(np.isfinite(spectra), axis=1)
    y = np.where(finite[:, None], spectra, 1.0)
    b0 = np.percentile(y, 90, axis=1)
    bad_base = ~(b0 > 0)
    b0 = np.where(bad_base, 1.0, b0)
    dip = 1.0 - y / b0[:, None]
    score = dip @ plan.Q  # (n, n_cand)
    sigma = _robust_noise(dip)
    threshold = np.maximum(6.0 * np.sqrt(3.0) * sigma, 1e-6)

    cand = plan.candidates
    work = score.copy()
    centers = np.empty((n, n_groups))
    low = ~finite | bad_base
    rows = np.arange(n)
    for g in range(n_groups):
        k = np.argmax(work, axis=1)
        best = work[rows, k]
        low |= ~(best > threshold)
        # parabolic refinement on the unmasked score
        km = np.clip(k, 1, cand.size - 2)
        s0, s1, s2 = score[rows, km - 1], score[rows, km], score[rows, km + 1]
        denom = s0 - 2.0 * s1 + s2
        with np.errstate(divide="ignore", invalid="ignore"):
            shift = np.where(denom < 0, 0.5 * (s0 - s2) / denom, 0.0)
        shift = np.clip(np.where(k == km, shift, 0.0), -0.5, 0.5)
        centers[:, g] = cand[k] + shift * plan.step
        exhausted = ~np.isfinite(best)
        centers[exhausted, g] = cand[(cand.size // 2)]
        low |= exhausted
        near = np.abs(cand[None, :] - cand[k][:, None]) < plan.exclusion
        work[near] = -np.inf
    centers.sort(axis=1)

    # linear least-squares depth of each triplet at its guessed position
    w2 = (0.5 * plan.fwhm) ** 2
    contrasts = np.empty_like(centers)
    for g in range(n_groups):
        t = np.zeros((n, F))
        for off in (-plan.hyperfine, 0.0, plan.hyperfine):
            u = plan.freqs[None, :] - (centers[:, g:g + 1] + off)
            t += w2 / (u * u + w2)
        num = np.einsum("nf,nf->n", dip, t)
        den = np.einsum("nf,nf->n", t, t)
        contrasts[:, g] = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    contrasts = np.where(low[:, None], contrast_guess, np.clip(contrasts, 1e-4, 0.5))

    if shared:
        G = n_groups
        p = np.empty((n, 1 + 3 * G))
        p[:, 1::3] = centers
        p[:, 3::3] = contrasts
    else:
        offs = np.array([-plan.hyperfine, 0.0, plan.hyperfine])
        G = 3 * n_groups
        p = np.empty((n, 1 + 3 * G))
        p[:, 1::3] = (centers[:, :, None] + offs).reshape(n, G)
        p[:, 3::3] = np.repeat(contrasts, 3, axis=1)
    p[:, 0] = b0
    p[:, 2::3] = plan.fwhm
    p[~finite] = np.nan
    return p, low


def _grid_freqs(grid):
    if isinstance(grid, SweepGrid):
        return grid.frequencies
    return np.asarray(grid, dtype=float)


def initial_guess(spectrum, grid, n_groups, hyperfine=PhysicalConstants().A_hf,
                  fwhm=1.0, contrast=0.02, shared=True):
    """Starting point for one spectrum.

    The spectrum is normalized by a high percentile, smoothed with a moving
    average about one linewidth wide, and summed along a hyperfine comb; the
    ``n_groups`` deepest well-separated minima become triplet centers.

    Returns
    -------
    InitialGuess
        ``low_confidence`` is set when fewer than ``n_groups`` minima clear
        six times the noise level estimated from first differences.
    """
    freqs = _grid_freqs(grid)
    spectrum = np.asarray(spectrum, dtype=float)
    if spectrum.shape != freqs.shape:
        raise UsageError(f"spectrum length {spectrum.shape} does not match grid {freqs.shape}")
    if n_groups < 1:
        raise UsageError("n_groups must be at least 1")
    plan = _GuessPlan(freqs, grid, hyperfine, fwhm)
    p, low = _guess_batch(spectrum[None, :], plan, n_groups, contrast, shared)
    return InitialGuess(p[0], bool(low[0]))


def _scales(p0, fwhm):
    s = np.empty_like(p0)
    s[:, 0] = np.abs(p0[:, 0])
    s[:, 1::3] = fwhm
    s[:, 2::3] = fwhm
    s[:, 3::3] = np.maximum(np.abs(p0[:, 3::3]), 1e-3)
    bad = ~np.isfinite(s) | (s <= 0)
    s[bad] = 1.0
    return s


def _postprocess(p, status, spectra):
    """Canonical widths and the physical-validity check on converged fits."""
    p = p.copy()
    p[:, 2::3] = np.abs(p[:, 2::3])
    status = status.copy()
    ok = np.isin(status, CONVERGED_STATUS)
    # a fluorescence spectrum needs a baseline that is resolvable against the data
    scale = np.max(np.abs(np.nan_to_num(spectra)), axis=1)
    scale[scale == 0] = np.inf
    unphysical = ok & (~np.all(np.isfinite(p), axis=1) | np.any(p[:, 3::3] < 0, axis=1)
                       | np.any(p[:, 2::3] == 0, axis=1) | ~(p[:, 0] > 1e-9 * scale))
    status[unphysical] = STATUS_UNPHYSICAL
    return p, status


def fit_spectra(spectra, grid, p0, config=FitConfig(), hyperfine=PhysicalConstants().A_hf,
                history=None, backend=None):
    """Fit many spectra at once from given starting parameters.

    Returns ``(params, cost, iterations, status)`` with one row per spectrum.
    ``history``, if given, is a C-contiguous float64 array of shape
    ``(n, max_iterations + 1)`` that receives the cost after every iteration.
    """
    freqs = _grid_freqs(grid)
    spectra = np.ascontiguousarray(spectra, dtype=np.float64)
    p0 = np.ascontiguousarray(p0, dtype=np.float64)
    if spectra.ndim != 2 or spectra.shape[1] != freqs.size:
        raise UsageError("spectra must have shape (n, n_frequencies)")
    if p0.shape[0] != spectra.shape[0] or (p0.shape[1] - 1) % 3:
        raise UsageError("starting parameters must have shape (n, 1 + 3 * n_lines)")
    kern = _backend.get(backend)
    offs = line_offsets(config.share_triplet_shape, hyperfine)
    p, cost, iters, status = kern.lm_fit(
        spectra, freqs, p0, _scales(p0, config.fwhm_guess), offs,
        max_iter=config.max_iterations, cost_tol=config.cost_tolerance,
        param_tol=config.param_tolerance, lam0=config.initial_damping,
        up=config.damping_up, down=config.damping_down, workers=config.workers,
        history=history)
    p, status = _postprocess(p, status, spectra)
    return p, cost, iters, status


def fit_pixel(spectrum, grid, init=None, config=FitConfig(), n_groups=None,
              hyperfine=PhysicalConstants().A_hf, backend=None):
    """Fit one spectrum.

    Parameters
    ----------
    init : InitialGuess or array_like, optional
        Starting parameters; computed with :func:`initial_guess` when omitted
        (``n_groups`` is then required).
    """
    spectrum = np.asarray(spectrum, dtype=float)
    low = False
    if init is None:
        if n_groups is None:
            raise UsageError("either init or n_groups is required")
        init = initial_guess(spectrum, grid, n_groups, hyperfine, config.fwhm_guess,
                             config.contrast_guess, config.share_triplet_shape)
    if isinstance(init, InitialGuess):
        low = init.low_confidence
        init = init.params
    p0 = np.asarray(init, dtype=float)[None, :]
    p, cost, iters, status = fit_spectra(spectrum[None, :], grid, p0, config, hyperfine,
                                         backend=backend)
    p = p[0]
    return PixelFitResult(
        centers=p[1::3].copy(), fwhms=p[2::3].copy(), contrasts=p[3::3].copy(),
        baseline=float(p[0]), residual_norm=float(np.sqrt(cost[0])),
        iterations=int(iters[0]), converged=bool(status[0] in CONVERGED_STATUS),
        status=int(status[0]), low_confidence=low)


@dataclass(eq=False)
class ParameterMaps:
    """Fitted line parameters for every pixel of a cube.

    ``centers``, ``fwhms`` and ``contrasts`` have shape ``(rows, cols, n)``
    with ``n`` the number of fitted groups (triplets, or single lines when the
    triplet shape is not shared). Non-converged pixels keep their last
    parameters here but are excluded by :meth:`resonance`.
    """

    centers: np.ndarray
    fwhms: np.ndarray
    contrasts: np.ndarray
    baseline: np.ndarray
    residual_norm: np.ndarray
    iterations: np.ndarray
    status: np.ndarray
    low_confidence: np.ndarray
    grid: SweepGrid
    mode: str = "vector"
    axis: int = 1
    groups: list = field(default_factory=list)
    lines_per_group: int = 1
    pixel_size: float = 1e-5
    bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    meta: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.baseline.shape

    @property
    def converged(self):
        return np.isin(self.status, CONVERGED_STATUS)

    @property
    def converged_fraction(self):
        return float(np.mean(self.converged)) if self.status.size else 0.0

    def triplet_centers(self):
        """Center of every triplet, shape ``(rows, cols, n_triplets)``.

        With free lines the center is the mean of the three members.
        """
        if self.lines_per_group == 3:
            return self.centers
        r, c, n = self.centers.shape
        return self.centers.reshape(r, c, n // 3, 3).mean(axis=3)

    def resonance(self, axis, branch):
        """Map of one resonance (MHz) with NaN where the fit did not converge."""
        for k, g in enumerate(self.groups):
            if g["axis"] == axis and g["branch"] == branch:
                out = self.triplet_centers()[:, :, k].copy()
                out[~self.converged] = np.nan
                return out
        raise UsageError(f"no fitted resonance for axis {axis} branch {branch!r}")

    def axes(self):
        return sorted({g["axis"] for g in self.groups})

    def pixel(self, row, col):
        return PixelFitResult(
            centers=self.centers[row, col].copy(), fwhms=self.fwhms[row, col].copy(),
            contrasts=self.contrasts[row, col].copy(), baseline=float(self.baseline[row, col]),
            residual_norm=float(self.residual_norm[row, col]),
            iterations=int(self.iterations[row, col]),
            converged=bool(self.converged[row, col]), status=int(self.status[row, col]),
            low_confidence=bool(self.low_confidence[row, col]))


def _cube_hyperfine(cube, c):
    if c is not None:
        return c.A_hf
    consts = cube.meta.get("constants") if isinstance(cube.meta, dict) else None
    if consts and "A_hf" in consts:
        return float(consts["A_hf"])
    return PhysicalConstants().A_hf


def fit_cube(cube, config=FitConfig(), mode=None, c=None, progress=None, backend=None):
    """Guess and fit every pixel of a cube.

    Parameters
    ----------
    cube : SpectralCube
    mode : {"vector", "single_axis"}, optional
        Overrides ``cube.mode`` (8 or 2 triplets).
    c : PhysicalConstants, optional
        Source of the hyperfine splitting; defaults to the cube's metadata.
    progress : callable, optional
        Called as ``progress(done, total)`` after each block of pixels.

    Returns
    -------
    ParameterMaps
    """
    if not isinstance(cube, SpectralCube):
        raise UsageError("fit_cube expects a SpectralCube")
    mode = cube.mode if mode is None else mode
    n_groups = 8 if mode == "vector" else 2 if mode == "single_axis" else None
    if n_groups is None:
        raise UsageError(f"unknown mode {mode!r}")
    if cube.groups and len(cube.groups) != n_groups:
        raise UsageError(f"cube lists {len(cube.groups)} triplets but mode {mode} fits {n_groups}")
    hyperfine = _cube_hyperfine(cube, c)
    rows, cols, F = cube.data.shape
    freqs = cube.frequencies
    spectra = np.ascontiguousarray(cube.data.reshape(rows * cols, F), dtype=np.float64)
    n = spectra.shape[0]
    shared = config.share_triplet_shape
    G = n_groups if shared else 3 * n_groups
    P = 1 + 3 * G

    plan = _GuessPlan(freqs, cube.grid, hyperfine, config.fwhm_guess)
    p0 = np.empty((n, P))
    low = np.empty(n, dtype=bool)
    for s in range(0, n, _GUESS_CHUNK):
        sl = slice(s, min(s + _GUESS_CHUNK, n))
        p0[sl], low[sl] = _guess_batch(spectra[sl], plan, n_groups, config.contrast_guess, shared)

    p = np.empty((n, P))
    cost = np.empty(n)
    iters = np.empty(n, dtype=np.int32)
    status = np.empty(n, dtype=np.int8)
    for s in range(0, n, _FIT_CHUNK):
        sl = slice(s, min(s + _FIT_CHUNK, n))
        p[sl], cost[sl], iters[sl], status[sl] = fit_spectra(
            spectra[sl], freqs, p0[sl], config, hyperfine, backend=backend)
        if progress is not None:
            progress(sl.stop, n)

    def grid3(a):
        return a.reshape(rows, cols, G)

    return ParameterMaps(
        centers=grid3(p[:, 1::3]), fwhms=grid3(p[:, 2::3]), contrasts=grid3(p[:, 3::3]),
        baseline=p[:, 0].reshape(rows, cols),
        residual_norm=np.sqrt(cost).reshape(rows, cols),
        iterations=iters.reshape(rows, cols), status=status.reshape(rows, cols),
        low_confidence=low.reshape(rows, cols), grid=cube.grid, mode=mode, axis=cube.axis,
        groups=[dict(g) for g in cube.groups], lines_per_group=3 if shared else 1,
        pixel_size=cube.pixel_size, bias=np.array(cube.bias, dtype=float),
        meta={"fit": {k: v for k, v in config.to_dict().items() if k != "workers"},
              "hyperfine": hyperfine,
              "source": dict(cube.meta) if isinstance(cube.meta, dict) else {}},
    )


def parameter_covariance(grid, params, sigma, shared=True, hyperfine=PhysicalConstants().A_hf,
                         backend=None):
    """Cramer-Rao covariance of the fitted parameters under white noise ``sigma``.

    Computed as ``sigma**2 (J^T J)^-1`` at ``params``; used to size noise
    levels for a target field sensitivity.
    """
    freqs = _grid_freqs(grid)
    p = np.atleast_2d(np.asarray(params, dtype=float))
    _, J = _backend.get("python").model_jacobian(freqs, p, line_offsets(shared, hyperfine))
    A = np.einsum("nfi,nfj->nij", J, J)
    cov = sigma ** 2 * np.linalg.inv(A)
    return cov[0] if np.ndim(params) == 1 else cov
