"""Synthetic labelled image sets of ring-oscillator activity.

Each image is the field projection on one NV axis at the scenario stand-off,
plus a static background, per-image drift and white noise. Every image is
paired with an idle image acquired just before it, so that acquisition times
run idle, active, idle, active, ...
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import UsageError
from ..images import LabeledImageSet
from ..nv import NVAxisSet, _check_axis
from .field import PlaneGrid, biot_savart_plane
from .geometry import STANDOFF_PRESETS, ChipState, DiePlan, ro_current_layout

MU0_4PI = 1e-7
_BACKGROUND_KEY = 0xB6A
_IMAGE_KEY = 0x1A6


def stream(seed, *keys):
    """Independent generator keyed by a seed and any integer path."""
    return np.random.default_rng(np.random.SeedSequence([int(seed)] + [int(k) for k in keys]))


@dataclass(frozen=True)
class BackgroundSpec:
    """Static background and per-image fluctuations, all in tesla.

    ``gradient`` (T/m) and the solder-ball dipoles are common to every image.
    ``drift_rms`` sets a random smooth field, fresh for each image, with
    correlation length ``drift_length``; ``offset_rms`` adds a uniform
    per-image shift and ``gain_rms`` a relative jitter of the signal.
    """

    gradient: tuple = (20e-6, -12e-6)
    dipole_pitch: float = 0.8e-3
    dipole_depth: float = 1.5e-3
    dipole_moment: float = 2e-7
    dipole_spread: float = 0.3
    drift_rms: float = 0.0
    drift_length: float = 0.6e-3
    offset_rms: float = 0.0
    gain_rms: float = 0.0

    def __post_init__(self):
        for name in ("dipole_pitch", "dipole_depth", "drift_length"):
            if not getattr(self, name) > 0:
                raise UsageError(f"{name} must be positive")
        for name in ("dipole_moment", "dipole_spread", "drift_rms", "offset_rms", "gain_rms"):
            if not getattr(self, name) >= 0:
                raise UsageError(f"{name} must be non-negative")

    def to_dict(self):
        d = asdict(self)
        d["gradient"] = list(self.gradient)
        return d


def default_grid():
    """600 x 606 pixels over the 3.7 mm field of view, centred on the die."""
    return PlaneGrid(600, 606, 3.7e-3 / 606)


def static_background(grid, plane_z, spec, seed, axis=1, axes=None):
    """Idle-state pattern: bias gradient plus a grid of magnetized solder balls."""
    axes = NVAxisSet.standard() if axes is None else axes
    n = axes.axes[_check_axis(axis)]
    pts = grid.points(plane_z)
    gx, gy = spec.gradient
    B = np.zeros(pts.shape)
    B[..., 2] = gx * pts[..., 0] + gy * pts[..., 1]
    rng = stream(seed, _BACKGROUND_KEY)
    half_x = 0.5 * grid.cols * grid.pixel_size + 2 * spec.dipole_pitch
    half_y = 0.5 * grid.rows * grid.pixel_size + 2 * spec.dipole_pitch
    xs = np.arange(-half_x, half_x + 1e-12, spec.dipole_pitch) + grid.x0
    ys = np.arange(-half_y, half_y + 1e-12, spec.dipole_pitch) + grid.y0
    for x in xs:
        for y in ys:
            m = spec.dipole_moment * np.array([0.0, 0.0, 1.0]) + spec.dipole_moment * \
                spec.dipole_spread * rng.standard_normal(3)
            r = pts - np.array([x, y, -spec.dipole_depth])
            rn = np.linalg.norm(r, axis=-1, keepdims=True)
            rh = r / rn
            B += MU0_4PI * (3.0 * (rh @ m)[..., None] * rh - m) / rn ** 3
    return B @ n


def smooth_random_field(shape, pixel_size, length, rms, rng):
    """Gaussian random field with a Gaussian spectrum, scaled to a given RMS."""
    if rms == 0:
        return np.zeros(shape)
    white = rng.standard_normal(shape)
    ky = np.fft.fftfreq(shape[0], d=pixel_size)
    kx = np.fft.rfftfreq(shape[1], d=pixel_size)
    k2 = ky[:, None] ** 2 + kx[None, :] ** 2
    f = np.fft.irfft2(np.fft.rfft2(white) * np.exp(-2.0 * (np.pi * length) ** 2 * k2), s=shape)
    f -= f.mean()
    return f * (rms / np.sqrt(np.mean(f * f)))


@dataclass(frozen=True)
class ScenarioSpec:
    standoff: float
    noise_floor: float
    background: BackgroundSpec

    def to_dict(self):
        return {"standoff": self.standoff, "noise_floor": self.noise_floor,
                "background": self.background.to_dict()}


SCENARIOS = {
    "decapped": ScenarioSpec(STANDOFF_PRESETS["decapped"], 20e-9,
                             BackgroundSpec(offset_rms=5e-9, gain_rms=0.01)),
    "intact": ScenarioSpec(STANDOFF_PRESETS["intact"], 2e-9,
                           BackgroundSpec(drift_rms=0.35e-9, offset_rms=0.5e-9, gain_rms=0.01)),
}


def scenario_spec(scenario, standoff=None, noise_floor=None, background=None):
    if scenario not in SCENARIOS:
        raise UsageError(f"unknown scenario {scenario!r}; choose from {sorted(SCENARIOS)}")
    base = SCENARIOS[scenario]
    return ScenarioSpec(base.standoff if standoff is None else float(standoff),
                        base.noise_floor if noise_floor is None else float(noise_floor),
                        base.background if background is None else background)


def state_signal(plan, state, standoff, grid, per_ro_current=50e-6, axis=1, axes=None,
                 workers=1, backend=None):
    """Noise-free field projection (T) of one chip state on one NV axis."""
    axes = NVAxisSet.standard() if axes is None else axes
    layout = ro_current_layout(plan, state, per_ro_current)
    if len(layout) == 0:
        return np.zeros(grid.shape)
    B = biot_savart_plane(layout, standoff, grid, workers, backend).stack()
    return B @ axes.axes[_check_axis(axis)]


def make_dataset(plan=None, states=(0, 1, 5, 10, 50, 100, 200), n_images_per_state=40,
                 scenario="decapped", noise_floor=None, background=None, seed=0, grid=None,
                 per_ro_current=50e-6, region="R1", axis=1, standoff=None, workers=1,
                 dtype=np.float32, backend=None):
    """Labelled active images with their paired idle images.

    Parameters
    ----------
    states : sequence of int or ChipState
        Ring-oscillator counts (in ``region``) to image.
    scenario : {"decapped", "intact"}
        Sets the stand-off, noise floor and background defaults.
    noise_floor : float, optional
        White-noise standard deviation per image, T.
    seed : int
        Every image draws from its own stream keyed by its acquisition
        index, so the set is reproducible and independent of ``workers``.

    Returns
    -------
    LabeledImageSet
        Active images; the idle images are in ``.idles``.
    """
    plan = DiePlan() if plan is None else plan
    grid = default_grid() if grid is None else grid
    states = [s if isinstance(s, ChipState) else ChipState(region, s) for s in states]
    if not states:
        raise UsageError("at least one state is required")
    if n_images_per_state < 1:
        raise UsageError("n_images_per_state must be at least 1")
    spec = scenario_spec(scenario, standoff, noise_floor, background)
    bg = spec.background

    signals = {}
    for s in states:
        key = (s.region, s.n_ros)
        if key not in signals:
            signals[key] = state_signal(plan, s, spec.standoff, grid, per_ro_current, axis,
                                        workers=workers, backend=backend)
    static = static_background(grid, spec.standoff, bg, seed, axis)

    order = [(rep, j) for rep in range(n_images_per_state) for j in range(len(states))]
    n = len(order)
    active = np.empty((n,) + grid.shape, dtype=dtype)
    idle = np.empty((n,) + grid.shape, dtype=dtype)

    def one_image(signal, index):
        rng = stream(seed, _IMAGE_KEY, index)
        gain = 1.0 + bg.gain_rms * rng.standard_normal()
        offset = bg.offset_rms * rng.standard_normal()
        drift = smooth_random_field(grid.shape, grid.pixel_size, bg.drift_length,
                                    bg.drift_rms, rng)
        noise = spec.noise_floor * rng.standard_normal(grid.shape)
        return static + gain * signal + offset + drift + noise

    def job(k):
        rep, j = order[k]
        s = states[j]
        idle[k] = one_image(0.0, 2 * k)
        active[k] = one_image(signals[(s.region, s.n_ros)], 2 * k + 1)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            list(ex.map(job, range(n)))
    else:
        for k in range(n):
            job(k)

    labels = np.array([states[j].n_ros for _, j in order])
    times_idle = 2.0 * np.arange(n)
    meta = {
        "scenario": scenario,
        "scenario_spec": spec.to_dict(),
        "seed": int(seed),
        "grid": grid.to_dict(),
        "axis": int(axis),
        "per_ro_current": per_ro_current,
        "die_plan": plan.to_dict(),
        "states": [s.n_ros for s in states],
        "n_images_per_state": int(n_images_per_state),
        "units": "T",
    }
    idles = LabeledImageSet(idle, np.zeros(n, dtype=np.int64), times_idle, scenario,
                            grid.pixel_size, region, dict(meta, kind="idle"))
    return LabeledImageSet(active, labels, times_idle + 1.0, scenario, grid.pixel_size, region,
                           dict(meta, kind="active"), idles)
