"""Stacks of labelled field images."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError


@dataclass(eq=False)
class LabeledImageSet:
    """Field images ``(n, rows, cols)`` in tesla with one label per image.

    ``labels`` hold the number of active ring oscillators, ``times`` the
    acquisition order. ``idles`` optionally carries the idle-state images
    acquired alongside.
    """

    images: np.ndarray
    labels: np.ndarray
    times: np.ndarray
    scenario: str = ""
    pixel_size: float = 1e-5
    region: str = "R1"
    meta: dict = field(default_factory=dict)
    idles: "LabeledImageSet | None" = None

    def __post_init__(self):
        self.images = np.asarray(self.images)
        if self.images.ndim != 3:
            raise UsageError(f"images must be stacked as (n, rows, cols), got {self.images.shape}")
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        self.times = np.asarray(self.times, dtype=np.float64).reshape(-1)
        n = self.images.shape[0]
        if self.labels.size != n or self.times.size != n:
            raise UsageError("need one label and one time per image")

    def __len__(self):
        return self.images.shape[0]

    @property
    def shape(self):
        return self.images.shape[1:]

    @property
    def classes(self):
        return np.unique(self.labels)

    def subset(self, index):
        index = np.asarray(index)
        if index.dtype != bool:
            index = index.astype(np.intp)
        return LabeledImageSet(self.images[index], self.labels[index], self.times[index],
                               self.scenario, self.pixel_size, self.region, dict(self.meta),
                               self.idles)

    def flat(self, dtype=np.float64):
        return self.images.reshape(len(self), -1).astype(dtype, copy=False)
