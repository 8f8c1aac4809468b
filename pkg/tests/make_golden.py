"""Regenerate the frozen container files in tests/data.

Run once by hand; the reader tests compare against the committed bytes.
"""
import os
import sys

import numpy as np

from qdm import container
from qdm.recon import AxisFieldMap, VectorFieldMap

HERE = os.path.join(os.path.dirname(os.path.abspath(__file__)), "data")
CREATION = {"software": "qdm", "software_version": "golden", "backend": "any"}


def golden_objects():
    """Deterministic objects behind each golden file."""
    i = np.arange(12.0).reshape(3, 4)
    axis = AxisFieldMap(1e-9 * i, 1e-3 * (i - 6), 1.25e-5, 3)
    vec = VectorFieldMap(1e-6 * i, -2e-6 * i, 0.5e-6 * np.ones((3, 4)), 2e-5,
                         dT=np.full((3, 4), 1.5))
    small = (np.arange(24, dtype=np.float32).reshape(2, 3, 4) - 7.5) / 8
    return {"axis_map": axis, "vector_map": vec, "float32_map2d": small}


def write_all(directory=HERE):
    os.makedirs(directory, exist_ok=True)
    extra = {"creation": CREATION}
    for name, obj in golden_objects().items():
        path = os.path.join(directory, name + ".qdmf")
        if isinstance(obj, np.ndarray):
            container.write_array(path, "map2d", obj, {
                "units": {"data": "arbitrary"}, "object": {"type": "array"}, **extra})
        else:
            container.write(obj, path, extra=extra)


if __name__ == "__main__":
    write_all(sys.argv[1] if len(sys.argv) > 1 else HERE)
