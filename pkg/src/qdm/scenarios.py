"""Measurement scenarios: map processing and spectral noise tuned to a field floor.

A scenario fixes how field maps are post-processed (binning and Gaussian
smoothing) and which field noise floor the processed map should show. The
spectral noise that produces that floor follows from the Cramer-Rao
covariance of the line fit, so no trial fitting is needed.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import UsageError
from .fitting import parameter_covariance
from .nv import DEFAULT_BIAS, NVAxisSet, PhysicalConstants, resonances_for_field
from .recon import bin_map, gaussian_lowpass
from .spectrum import Lineshape, SweepGrid, group_assignment


@dataclass(frozen=True)
class ProcessingSpec:
    """Map post-processing: block binning then a Gaussian low-pass (pixels after binning)."""

    bin_factor: int = 1
    lowpass_sigma_px: float = 0.0

    def __post_init__(self):
        if int(self.bin_factor) != self.bin_factor or self.bin_factor < 1:
            raise UsageError("bin_factor must be a positive integer")
        if not self.lowpass_sigma_px >= 0:
            raise UsageError("lowpass_sigma_px must be non-negative")

    def apply(self, m):
        out = bin_map(m, self.bin_factor) if self.bin_factor > 1 else m
        return gaussian_lowpass(out, self.lowpass_sigma_px) if self.lowpass_sigma_px else out

    def noise_gain(self):
        """Standard-deviation factor this processing applies to white pixel noise."""
        return lowpass_noise_gain(self.lowpass_sigma_px) / self.bin_factor

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class MeasurementScenario:
    """Processed-map noise floor (T) and the processing that reaches it."""

    name: str
    noise_floor: float
    processing: ProcessingSpec

    def to_dict(self):
        return {"name": self.name, "noise_floor": self.noise_floor,
                "processing": self.processing.to_dict()}


MEASUREMENT_SCENARIOS = {
    "decapped": MeasurementScenario("decapped", 20e-9, ProcessingSpec(1, 0.0)),
    "intact": MeasurementScenario("intact", 2e-9, ProcessingSpec(2, float(np.sqrt(2.0)))),
}


def measurement_scenario(name):
    try:
        return MEASUREMENT_SCENARIOS[name]
    except KeyError:
        raise UsageError(f"unknown scenario {name!r}; choose from "
                         f"{sorted(MEASUREMENT_SCENARIOS)}") from None


def lowpass_noise_gain(sigma_px):
    """Noise reduction of :func:`~qdm.recon.gaussian_lowpass` away from edges."""
    if sigma_px == 0:
        return 1.0
    radius = int(np.ceil(4.0 * sigma_px))
    x = np.arange(-radius, radius + 1)
    k = np.exp(-0.5 * (x / sigma_px) ** 2)
    k /= k.sum()
    return float(np.sum(k * k))


def field_noise_per_sigma(mode="single_axis", axis=1, grid=None, lineshape=Lineshape(),
                          c=PhysicalConstants(), bias=DEFAULT_BIAS, axes=None,
                          idle_subtracted=True):
    """Axial-field standard deviation (T) per unit of spectral noise sigma.

    Evaluated at the idle resonances; the idle-map subtraction doubles the
    variance when ``idle_subtracted`` is set.
    """
    axes = NVAxisSet.standard() if axes is None else axes
    idle = resonances_for_field(np.asarray(bias, dtype=float), c, axes)
    if grid is None:
        i = axis - 1
        grid = (SweepGrid.single_axis(idle.f_minus[i], idle.f_plus[i]) if mode == "single_axis"
                else SweepGrid.default_vector())
    groups = group_assignment(idle, mode, axis)
    p = [lineshape.baseline]
    for g in groups:
        p += [g["expected_center"], lineshape.fwhm, lineshape.contrast]
    cov = parameter_covariance(grid, np.array(p), 1.0, True, c.A_hf)
    grad = np.zeros(len(p))
    for k, g in enumerate(groups):
        if g["axis"] == axis:
            grad[1 + 3 * k] = 1.0 if g["branch"] == "+" else -1.0
    var = float(grad @ cov @ grad) / (2.0 * c.gamma) ** 2
    if idle_subtracted:
        var *= 2.0
    return float(np.sqrt(var))


def spectral_sigma_for_floor(target_floor, processing=ProcessingSpec(), **kwargs):
    """Spectral noise sigma (relative to baseline) giving ``target_floor`` after processing.

    Keyword arguments go to :func:`field_noise_per_sigma`.
    """
    if not target_floor > 0:
        raise UsageError("target noise floor must be positive")
    return target_floor / (field_noise_per_sigma(**kwargs) * processing.noise_gain())


def scenario_spectral_sigma(name, **kwargs):
    sc = measurement_scenario(name)
    return spectral_sigma_for_floor(sc.noise_floor, sc.processing, **kwargs)
