import numpy as np
import pytest
from PIL import Image

from qdm.errors import UsageError
from qdm.recon import VectorFieldMap
from qdm.render import NAN_COLOR, auto_range, colorize, render_map


def test_constant_map_is_uniform():
    rgb, _ = colorize(np.full((5, 7), 3e-9))
    assert rgb.dtype == np.uint8 and rgb.shape == (5, 7, 3)
    assert np.all(rgb == rgb[0, 0])


def test_explicit_range_endpoints(rng):
    a = rng.uniform(-2, 5, (6, 6))
    a[0, 0], a[1, 1] = -2.0, 5.0
    rgb, rng_used = colorize(a, "sequential", (-2.0, 5.0))
    lut, _ = colorize(np.linspace(0, 1, 256)[None, :], "sequential", (0.0, 1.0))
    assert rng_used == (-2.0, 5.0)
    assert np.array_equal(rgb[0, 0], lut[0, 0]) and np.array_equal(rgb[1, 1], lut[0, -1])


def test_nan_is_neutral_and_distinct():
    a = np.linspace(-1, 1, 16).reshape(4, 4)
    a[2, 3] = np.nan
    rgb, _ = colorize(a, "diverging", (-1.0, 1.0))
    assert tuple(rgb[2, 3]) == NAN_COLOR
    assert tuple(rgb[0, 0]) != NAN_COLOR and tuple(rgb[3, 3]) != NAN_COLOR


def test_auto_range_rules(rng):
    a = rng.normal(size=1000)
    lo, hi = auto_range(a, "diverging")
    assert lo == -hi and hi == pytest.approx(np.percentile(np.abs(a), 99))
    lo, hi = auto_range(a, "sequential")
    assert (lo, hi) == pytest.approx(tuple(np.percentile(a, (1, 99))))


def test_errors():
    with pytest.raises(UsageError):
        colorize(np.full((3, 3), np.nan))
    with pytest.raises(UsageError):
        colorize(np.zeros(3))
    with pytest.raises(UsageError):
        colorize(np.zeros((2, 2)), range=(1.0, 1.0))
    with pytest.raises(UsageError):
        colorize(np.zeros((2, 2)), colormap="rainbow")


def test_render_png_and_scale_sidecar(tmp_path, rng):
    v = VectorFieldMap.from_stack(rng.normal(0, 1e-7, (9, 11, 3)))
    p = tmp_path / "m.png"
    lo, hi = render_map(v, p, component="B_X", title="demo")
    img = Image.open(p)
    assert img.mode == "RGB" and img.size == (11, 9)
    assert np.array_equal(np.asarray(img), colorize(v.B_X)[0])
    txt = (tmp_path / "m.png.txt").read_text()
    assert f"range: {lo!r} .. {hi!r}" in txt and "units: T" in txt and "RdBu_r" in txt
    with pytest.raises(UsageError):
        render_map(v, tmp_path / "x.png", component="B_Q")
