"""Magnetic field of a current layout on a sensing plane."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import _backend
from ..errors import UsageError
from ..recon import VectorFieldMap


@dataclass(frozen=True)
class PlaneGrid:
    """Pixel centres of a rectangular map; rows run along y, columns along x."""

    rows: int
    cols: int
    pixel_size: float
    x0: float = 0.0
    y0: float = 0.0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise UsageError("grid needs at least one row and column")
        if not self.pixel_size > 0:
            raise UsageError("pixel_size must be positive")

    @property
    def shape(self):
        return (self.rows, self.cols)

    @property
    def x(self):
        return self.x0 + (np.arange(self.cols) - 0.5 * (self.cols - 1)) * self.pixel_size

    @property
    def y(self):
        return self.y0 + (np.arange(self.rows) - 0.5 * (self.rows - 1)) * self.pixel_size

    def points(self, z):
        X, Y = np.meshgrid(self.x, self.y)
        return np.stack([X, Y, np.full_like(X, float(z))], axis=-1)

    def to_dict(self):
        return {"rows": self.rows, "cols": self.cols, "pixel_size": self.pixel_size,
                "x0": self.x0, "y0": self.y0}


def _segment_point_distance(a, b, pts):
    d = b - a
    t = np.clip(((pts - a) @ d) / (d @ d), 0.0, 1.0)
    return np.linalg.norm(pts - (a + t[:, None] * d), axis=1)


def _check_clearance(layout, plane_z, grid):
    a, b, _ = layout.arrays()
    tol = grid.pixel_size / 10.0
    zlo = np.minimum(a[:, 2], b[:, 2]) - tol
    zhi = np.maximum(a[:, 2], b[:, 2]) + tol
    near = np.flatnonzero((zlo <= plane_z) & (plane_z <= zhi))
    if near.size == 0:
        return
    pts = grid.points(plane_z).reshape(-1, 3)
    for k in near:
        if _segment_point_distance(a[k], b[k], pts).min() <= tol:
            s = layout.segments[k]
            raise UsageError(f"sensing plane z={plane_z:g} m touches segment {k} "
                             f"({s.net or s.layer}, {s.p0} -> {s.p1})")


def biot_savart_points(layout, points, workers=1, backend=None):
    """Field (T) of a layout at arbitrary points of shape (..., 3)."""
    pts = np.asarray(points, dtype=float)
    a, b, i = layout.arrays()
    flat = pts.reshape(-1, 3)
    if len(layout) == 0:
        return np.zeros_like(pts)
    out = _backend.get(backend).biot_savart(flat, a, b, i, workers=workers)
    return out.reshape(pts.shape)


def biot_savart_plane(layout, plane_z, grid, workers=1, backend=None):
    """Exact finite-segment Biot-Savart field on a horizontal plane.

    Parameters
    ----------
    layout : CurrentLayout
    plane_z : float
        Height of the plane, m.
    grid : PlaneGrid

    Returns
    -------
    VectorFieldMap

    Raises
    ------
    UsageError
        If any segment comes within a tenth of a pixel of a grid point.
    """
    if len(layout):
        _check_clearance(layout, plane_z, grid)
    B = biot_savart_points(layout, grid.points(plane_z), workers, backend)
    return VectorFieldMap(B[..., 0], B[..., 1], B[..., 2], grid.pixel_size)
