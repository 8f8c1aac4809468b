"""Frequency shifts to field and temperature maps, plus map-space filters."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import UsageError
from .nv import PhysicalConstants, delta_fields, reconstruct_vector


@dataclass(eq=False)
class AxisFieldMap:
    """Field projection on one NV axis (T) and temperature change (K)."""

    dBz: np.ndarray
    dT: np.ndarray
    pixel_size: float
    axis: int

    def __post_init__(self):
        self.dBz = np.asarray(self.dBz, dtype=float)
        self.dT = np.asarray(self.dT, dtype=float)
        if self.dBz.shape != self.dT.shape or self.dBz.ndim != 2:
            raise UsageError("field and temperature maps must be 2-D and equal in shape")

    @property
    def mask(self):
        """True where the pixel is valid."""
        return np.isfinite(self.dBz) & np.isfinite(self.dT)

    @property
    def shape(self):
        return self.dBz.shape


@dataclass(eq=False)
class TemperatureMap:
    dT: np.ndarray
    pixel_size: float = 1e-5

    def __post_init__(self):
        self.dT = np.asarray(self.dT, dtype=float)

    @property
    def mask(self):
        return np.isfinite(self.dT)


@dataclass(eq=False)
class VectorFieldMap:
    """Lab-frame field maps (T), with optional temperature and per-axis maps."""

    B_X: np.ndarray
    B_Y: np.ndarray
    B_Z: np.ndarray
    pixel_size: float = 1e-5
    dT: np.ndarray | None = None
    axis_maps: list = field(default_factory=list)

    def __post_init__(self):
        self.B_X = np.asarray(self.B_X, dtype=float)
        self.B_Y = np.asarray(self.B_Y, dtype=float)
        self.B_Z = np.asarray(self.B_Z, dtype=float)
        if not (self.B_X.shape == self.B_Y.shape == self.B_Z.shape) or self.B_X.ndim != 2:
            raise UsageError("vector components must be 2-D maps of equal shape")
        if self.dT is not None:
            self.dT = np.asarray(self.dT, dtype=float)
            if self.dT.shape != self.B_X.shape:
                raise UsageError("temperature map does not match the field maps")

    @classmethod
    def from_stack(cls, B, pixel_size=1e-5, dT=None):
        B = np.asarray(B, dtype=float)
        if B.ndim != 3 or B.shape[2] != 3:
            raise UsageError(f"expected shape (rows, cols, 3), got {B.shape}")
        return cls(B[..., 0], B[..., 1], B[..., 2], pixel_size, dT)

    def stack(self):
        return np.stack([self.B_X, self.B_Y, self.B_Z], axis=-1)

    @property
    def shape(self):
        return self.B_X.shape

    @property
    def mask(self):
        return np.all(np.isfinite(self.stack()), axis=-1)

    def temperature(self):
        return TemperatureMap(self.dT, self.pixel_size) if self.dT is not None else None


@dataclass(frozen=True)
class MapStats:
    mean: float
    std: float
    min: float
    max: float
    noise_floor: float
    n_pixels: int
    mode: str = "region"

    def to_dict(self):
        return dict(self.__dict__)


def freqs_to_axis_field(active, idle, c=PhysicalConstants(), axis=None):
    """Differential field and temperature for one NV axis.

    Subtracts the idle resonances from the active ones and applies
    ``dBz = (df+ - df-) / 2 gamma`` and ``dT = (df+ + df-) / (2 dD/dT)``.

    Parameters
    ----------
    active, idle : ParameterMaps
    axis : int, optional
        Required for vector-mode maps; single-axis maps carry their own.
    """
    if active.shape != idle.shape:
        raise UsageError(f"active {active.shape} and idle {idle.shape} maps differ in size")
    if axis is None:
        if active.mode != "single_axis" or idle.mode != "single_axis":
            raise UsageError("an axis is required for vector-mode parameter maps")
        axis = active.axis
    for pm, name in ((active, "active"), (idle, "idle")):
        if axis not in pm.axes():
            raise UsageError(f"{name} parameter maps hold no fit for axis {axis}")
    if active.mode == idle.mode == "single_axis" and active.axis != idle.axis:
        raise UsageError(f"active axis {active.axis} does not match idle axis {idle.axis}")
    dfp = active.resonance(axis, "+") - idle.resonance(axis, "+")
    dfm = active.resonance(axis, "-") - idle.resonance(axis, "-")
    dBz, dT = delta_fields(dfp, dfm, c)
    bad = ~(np.isfinite(dBz) & np.isfinite(dT))
    dBz[bad] = np.nan
    dT[bad] = np.nan
    return AxisFieldMap(dBz, dT, active.pixel_size, int(axis))


def axis_fields(active, idle, c=PhysicalConstants()):
    """All axis maps available in a pair of parameter maps."""
    axes = sorted(set(active.axes()) & set(idle.axes()))
    return [freqs_to_axis_field(active, idle, c, a) for a in axes]


def combine_axes(maps):
    """Lab-frame vector map from the four axis projections.

    The temperature of the result is the mean over the four axes.
    """
    by_axis = {}
    for m in maps:
        if m.axis in by_axis:
            raise UsageError(f"axis {m.axis} given twice")
        by_axis[m.axis] = m
    missing = [a for a in (1, 2, 3, 4) if a not in by_axis]
    if missing:
        raise UsageError(f"missing axis map(s) {missing}")
    ordered = [by_axis[a] for a in (1, 2, 3, 4)]
    shape = ordered[0].shape
    if any(m.shape != shape for m in ordered):
        raise UsageError("axis maps differ in size")
    proj = np.stack([m.dBz for m in ordered], axis=-1)
    B = reconstruct_vector(proj)
    dT = np.mean(np.stack([m.dT for m in ordered]), axis=0)
    dT[~np.all(np.isfinite(B), axis=-1)] = np.nan
    return VectorFieldMap(B[..., 0], B[..., 1], B[..., 2], ordered[0].pixel_size, dT, ordered)


def transverse_shift_correction(vmap, bias, c=PhysicalConstants(), axes=None, iterations=3):
    """Remove the transverse-field part of the temperature estimate.

    The sum of the two resonance shifts also moves with the second-order
    term ``3 gamma^2 |B_perp|^2 / 2D``, which changes when the sample field
    adds to the bias. Given the reconstructed vector and the bias (lab frame,
    T), that change is subtracted from every axis before averaging.
    Crystal stress is assumed absent. Returns a new map; the input is untouched.
    """
    from .nv import NVAxisSet

    if not vmap.axis_maps:
        raise UsageError("the correction needs the per-axis maps that built the vector map")
    if c.dD_dT == 0:
        raise UsageError("dD_dT is zero; temperature cannot be recovered")
    axes = NVAxisSet.standard() if axes is None else axes
    bias = np.asarray(bias, dtype=float)
    total = bias + vmap.stack()

    def perp2(B, n):
        return np.sum(B * B, axis=-1) - (B @ n) ** 2

    new_maps = []
    for m in vmap.axis_maps:
        n = axes.axes[m.axis - 1]
        g2 = 1.5 * c.gamma ** 2
        idle_shift = g2 * perp2(bias, n) / c.D0
        tot2 = perp2(total, n)
        dT = m.dT.copy()
        for _ in range(iterations):
            dT = m.dT - (g2 * tot2 / (c.D0 + c.dD_dT * dT) - idle_shift) / c.dD_dT
        new_maps.append(AxisFieldMap(m.dBz.copy(), dT, m.pixel_size, m.axis))
    dT = np.mean(np.stack([m.dT for m in new_maps]), axis=0)
    dT[~vmap.mask] = np.nan
    return VectorFieldMap(vmap.B_X.copy(), vmap.B_Y.copy(), vmap.B_Z.copy(), vmap.pixel_size,
                          dT, new_maps)


def _bin_array(a, factor):
    a = np.asarray(a, dtype=float)
    H, W = a.shape[-2:]
    h, w = H // factor, W // factor
    if h == 0 or w == 0:
        raise UsageError(f"bin factor {factor} exceeds map size {(H, W)}")
    a = a[..., : h * factor, : w * factor]
    blocks = a.reshape(a.shape[:-2] + (h, factor, w, factor))
    valid = np.isfinite(blocks)
    count = valid.sum(axis=(-3, -1))
    total = np.where(valid, blocks, 0.0).sum(axis=(-3, -1))
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(count > 0, total / np.maximum(count, 1), np.nan)


def bin_map(m, factor):
    """NaN-aware block mean over ``factor x factor`` pixels.

    Accepts a plain array (binning the last two axes) or any of the map
    types, whose pixel size is scaled by ``factor``. Rows and columns that
    do not fill a whole block are dropped with a warning.
    """
    if int(factor) != factor or factor < 1:
        raise UsageError(f"bin factor must be a positive integer, got {factor}")
    factor = int(factor)
    shape = _map_shape(m)
    if shape[0] % factor or shape[1] % factor:
        warnings.warn(f"map shape {shape} is not a multiple of {factor}; trailing pixels dropped",
                      RuntimeWarning, stacklevel=2)
    if factor == 1:
        return _apply(m, lambda a: np.array(a, dtype=float), 1)
    return _apply(m, lambda a: _bin_array(a, factor), factor)


def _map_shape(m):
    if isinstance(m, AxisFieldMap):
        return m.dBz.shape
    if isinstance(m, VectorFieldMap):
        return m.B_X.shape
    if isinstance(m, TemperatureMap):
        return m.dT.shape
    a = np.asarray(m)
    if a.ndim < 2:
        raise UsageError("maps must be at least 2-D")
    return a.shape[-2:]


def _apply(m, fn, pixel_factor):
    if isinstance(m, AxisFieldMap):
        return AxisFieldMap(fn(m.dBz), fn(m.dT), m.pixel_size * pixel_factor, m.axis)
    if isinstance(m, TemperatureMap):
        return TemperatureMap(fn(m.dT), m.pixel_size * pixel_factor)
    if isinstance(m, VectorFieldMap):
        return VectorFieldMap(fn(m.B_X), fn(m.B_Y), fn(m.B_Z), m.pixel_size * pixel_factor,
                              None if m.dT is None else fn(m.dT),
                              [_apply(a, fn, pixel_factor) for a in m.axis_maps])
    return fn(m)


def _lowpass_array(a, sigma):
    a = np.asarray(a, dtype=float)
    valid = np.isfinite(a)
    radius = int(np.ceil(4.0 * sigma))
    x = np.arange(-radius, radius + 1)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    k /= k.sum()

    def smooth(v):
        for ax in (-2, -1):
            v = ndimage.convolve1d(v, k, axis=ax, mode="constant", cval=0.0)
        return v

    num = smooth(np.where(valid, a, 0.0))
    den = smooth(valid.astype(float))
    with np.errstate(invalid="ignore", divide="ignore"):
        out = num / den
    out[~valid] = np.nan
    return out


def gaussian_lowpass(m, sigma_px):
    """Separable Gaussian blur, renormalized over valid pixels near edges and NaNs.

    The kernel is truncated at four standard deviations. Invalid pixels stay
    invalid.
    """
    if not sigma_px >= 0:
        raise UsageError(f"sigma must be non-negative, got {sigma_px}")
    if sigma_px == 0:
        return _apply(m, lambda a: np.array(a, dtype=float), 1)
    return _apply(m, lambda a: _lowpass_array(a, float(sigma_px)), 1)


def _pad_plan(n, taper):
    """Source index and weight for each row of a 2n-long padded axis.

    The map occupies the first n samples untouched; the padding holds its
    mirror image fading to zero over ``taper`` samples at both wrap edges.
    """
    t = max(0, min(int(taper), n // 2))
    src = np.zeros(2 * n, dtype=int)
    wt = np.zeros(2 * n)
    src[:n] = np.arange(n)
    wt[:n] = 1.0
    if t:
        d = np.arange(1, t + 1)
        fall = 0.5 * (1.0 + np.cos(np.pi * d / (t + 1)))
        src[n:n + t] = n - d
        wt[n:n + t] = fall
        src[2 * n - d] = d - 1
        wt[2 * n - d] = fall
    return src, wt


def inpaint_local_mean(a, max_iter=1000):
    """Fill NaN pixels with the mean of their valid 3x3 neighbours, repeatedly."""
    a = np.array(a, dtype=float)
    k = np.ones((3, 3))
    for _ in range(max_iter):
        bad = ~np.isfinite(a)
        if not bad.any():
            break
        vals = ndimage.convolve(np.where(bad, 0.0, a), k, mode="constant")
        cnt = ndimage.convolve((~bad).astype(float), k, mode="constant")
        fill = bad & (cnt > 0)
        if not fill.any():
            raise UsageError("cannot inpaint a map with no valid pixels")
        a[fill] = vals[fill] / cnt[fill]
    return a


def upward_continue(bz_map, pixel_size, delta_z, strict=False, taper=10):
    """Continue a field map to a plane ``delta_z`` further from the sources.

    Multiplies the 2-D Fourier transform by ``exp(-2 pi |k| delta_z)``. The
    mean is removed, then the map is padded to twice its size with a
    mirrored copy that fades to zero over ``taper`` pixels, so the data
    itself is never modified and ``delta_z = 0`` is an identity. Pixels
    within a few stand-offs of the border are less accurate.

    NaN pixels are filled by local-mean inpainting (with a warning), or
    rejected when ``strict`` is set.
    """
    if not delta_z >= 0:
        raise UsageError(f"delta_z must be non-negative, got {delta_z}")
    if not pixel_size > 0:
        raise UsageError("pixel_size must be positive")
    a = np.asarray(bz_map, dtype=float)
    if a.ndim != 2:
        raise UsageError("upward continuation needs a 2-D map")
    if not np.all(np.isfinite(a)):
        if strict:
            raise UsageError("map contains non-finite pixels")
        warnings.warn("non-finite pixels inpainted before upward continuation",
                      RuntimeWarning, stacklevel=2)
        a = inpaint_local_mean(a)
    if delta_z == 0:
        return a.copy()
    H, W = a.shape
    mean = a.mean()
    r_src, r_wt = _pad_plan(H, taper)
    c_src, c_wt = _pad_plan(W, taper)
    padded = (a - mean)[np.ix_(r_src, c_src)] * r_wt[:, None] * c_wt[None, :]
    ky = np.fft.fftfreq(2 * H, d=pixel_size)
    kx = np.fft.rfftfreq(2 * W, d=pixel_size)
    k = np.hypot(ky[:, None], kx[None, :])
    spec = np.fft.rfft2(padded) * np.exp(-2.0 * np.pi * k * delta_z)
    out = np.fft.irfft2(spec, s=padded.shape)[:H, :W]
    return out + mean


def noise_floor(maps, region=None):
    """Noise level of a field map.

    Parameters
    ----------
    maps : sequence of 2-D arrays, or 3-D array
        Two or more nominally identical maps give the repeated-measurement
        estimate: the per-pixel standard deviation across repeats, reported
        as its median over pixels. A single map needs ``region``.
    region : tuple of slices or boolean mask, optional
        Signal-free area of a single map; the estimate is the standard
        deviation of its valid pixels.
    """
    stack = np.asarray(maps, dtype=float)
    if stack.ndim == 2:
        stack = stack[None]
    if stack.ndim != 3:
        raise UsageError("expected a 2-D map or a stack of maps")
    if region is None:
        if stack.shape[0] < 2:
            raise UsageError("the repeated-measurement estimate needs at least two maps")
        valid = np.all(np.isfinite(stack), axis=0)
        if not valid.any():
            raise UsageError("no pixel is valid in every repeat")
        sd = np.std(stack[:, valid], axis=0, ddof=1)
        vals = stack[:, valid]
        return MapStats(float(vals.mean()), float(vals.std()), float(vals.min()),
                        float(vals.max()), float(np.median(sd)), int(valid.sum()), "repeated")
    m = stack[0]
    if isinstance(region, np.ndarray) and region.dtype == bool:
        if region.shape != m.shape:
            raise UsageError("region mask does not match the map")
        vals = m[region]
    else:
        vals = m[region]
    vals = np.asarray(vals, dtype=float).ravel()
    vals = vals[np.isfinite(vals)]
    if vals.size < 2:
        raise UsageError("region holds fewer than two valid pixels")
    sd = float(np.std(vals, ddof=1))
    return MapStats(float(vals.mean()), sd, float(vals.min()), float(vals.max()), sd,
                    int(vals.size), "region")


__all__ = [
    "AxisFieldMap", "VectorFieldMap", "TemperatureMap", "MapStats", "freqs_to_axis_field",
    "axis_fields", "combine_axes", "transverse_shift_correction", "bin_map", "gaussian_lowpass", "upward_continue",
    "inpaint_local_mean", "noise_floor",
]
