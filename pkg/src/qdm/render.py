"""Field maps to 8-bit RGB PNG images, with the colour scale in a text sidecar."""
from __future__ import annotations

import io

import numpy as np

from .container import atomic_write_bytes, atomic_write_text
from .errors import UsageError

COLORMAPS = {"diverging": "RdBu_r", "sequential": "viridis"}
NAN_COLOR = (128, 128, 128)
_LEVELS = 256


def _lut(kind):
    from matplotlib import colormaps

    try:
        cmap = colormaps[COLORMAPS[kind]]
    except KeyError:
        raise UsageError(f"colormap must be one of {sorted(COLORMAPS)}") from None
    rgba = cmap(np.linspace(0.0, 1.0, _LEVELS))
    return np.round(rgba[:, :3] * 255.0).astype(np.uint8)


def auto_range(a, colormap="diverging"):
    """Symmetric 99th-percentile range for diverging maps, 1st..99th otherwise."""
    v = a[np.isfinite(a)]
    if colormap == "diverging":
        m = float(np.percentile(np.abs(v), 99))
        if m == 0:
            m = 1.0
        return -m, m
    lo, hi = (float(x) for x in np.percentile(v, (1, 99)))
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    return lo, hi


def colorize(a, colormap="diverging", range="auto"):
    """RGB uint8 image ``(rows, cols, 3)`` and the ``(lo, hi)`` range used."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise UsageError(f"can only render 2-D maps, got shape {a.shape}")
    finite = np.isfinite(a)
    if not finite.any():
        raise UsageError("map has no finite pixels to render")
    lo, hi = auto_range(a, colormap) if range == "auto" else (float(range[0]), float(range[1]))
    if not hi > lo:
        raise UsageError(f"range upper bound must exceed lower bound, got ({lo}, {hi})")
    lut = _lut(colormap)
    t = np.clip((np.where(finite, a, lo) - lo) / (hi - lo), 0.0, 1.0)
    idx = np.minimum((t * (_LEVELS - 1) + 0.5).astype(np.int64), _LEVELS - 1)
    rgb = lut[idx]
    rgb[~finite] = NAN_COLOR
    return rgb, (lo, hi)


def _map_array(m, component):
    from .recon import AxisFieldMap, TemperatureMap, VectorFieldMap

    if isinstance(m, AxisFieldMap):
        return {"dBz": m.dBz, "dT": m.dT}[component or "dBz"], "K" if component == "dT" else "T"
    if isinstance(m, TemperatureMap):
        return m.dT, "K"
    if isinstance(m, VectorFieldMap):
        comp = component or "B_Z"
        if comp == "dT":
            return m.dT, "K"
        if comp not in ("B_X", "B_Y", "B_Z"):
            raise UsageError(f"unknown component {comp!r}")
        return getattr(m, comp), "T"
    return np.asarray(m), "T"


def render_map(m, path, colormap="diverging", range="auto", component=None, units=None,
               title=None):
    """Write ``m`` as a PNG at ``path`` and its scale to ``path + '.txt'``.

    Returns the ``(lo, hi)`` range that was mapped to the colormap ends.
    """
    from PIL import Image

    a, default_units = _map_array(m, component)
    rgb, (lo, hi) = colorize(a, colormap, range)
    buf = io.BytesIO()
    Image.fromarray(rgb, mode="RGB").save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())
    lines = [f"title: {title}"] if title else []
    lines += [f"colormap: {COLORMAPS[colormap]} ({colormap})",
              f"range: {lo!r} .. {hi!r}",
              f"units: {units or default_units}",
              f"range_mode: {'auto' if range == 'auto' else 'explicit'}",
              f"nan_color: rgb{NAN_COLOR}",
              f"shape: {a.shape[0]} x {a.shape[1]}"]
    atomic_write_text(str(path) + ".txt", "\n".join(lines) + "\n")
    return lo, hi
