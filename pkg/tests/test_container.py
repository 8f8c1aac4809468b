import json
import os
import struct
import tempfile

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

import make_golden
from qdm import container
from qdm.classify import SplitConfig, preprocess, split, train_classifier
from qdm.errors import FormatError
from qdm.fitting import fit_cube
from qdm.forward import PlaneGrid
from qdm.forward.dataset import make_dataset
from qdm.images import LabeledImageSet
from qdm.recon import AxisFieldMap, TemperatureMap, VectorFieldMap, axis_fields, combine_axes
from qdm.spectrum import NoiseSpec, SpectralCube, SweepGrid, synthesize_cube

DATA = os.path.join(os.path.dirname(__file__), "data")


def _same(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return a.shape == b.shape and a.tobytes() == b.tobytes()


def test_header_bytes_for_300x303_map(tmp_path):
    p = tmp_path / "m.qdmf"
    container.write(np.zeros((300, 303)), p)
    raw = p.read_bytes()
    assert raw[:4] == bytes([0x51, 0x44, 0x4D, 0x46])
    assert struct.unpack_from("<HBBB", raw, 4) == (1, 2, 2, 2)
    assert struct.unpack_from("<2Q", raw, 9) == (300, 303)
    assert len(raw) == 9 + 16 + 300 * 303 * 8
    assert container.encode_header("map2d", np.float64, (300, 303)) == raw[:25]


@settings(max_examples=25)
@given(arrays(st.sampled_from([np.float32, np.float64]),
              array_shapes(min_dims=1, max_dims=4, max_side=6),
              elements=st.floats(width=32)))
def test_array_round_trip_bitwise(a):
    with tempfile.TemporaryDirectory() as d:
        p = os.path.join(d, "a.qdmf")
        container.write_array(p, "map2d", a, {"units": {"data": "T"}, "object": {"type": "x"}})
        kind, b, doc = container.read_array(p)
    assert kind == "map2d" and b.dtype == a.dtype and _same(a, b)
    assert doc["shape"] == list(a.shape)


@settings(max_examples=15)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(2, 9)),
              elements=st.floats(allow_nan=True, allow_infinity=True)))
def test_cube_round_trip_bitwise(data):
    grid = SweepGrid.uniform(2800, 2900, data.shape[2])
    cube = SpectralCube(data, grid, "vector", 1, 1e-5, np.array([1e-3, 0, 0]), [], {"k": 1})
    with tempfile.TemporaryDirectory() as d:
        p = os.path.join(d, "c.qdmf")
        container.write(cube, p)
        back = container.read(p)
    assert _same(back.data, cube.data) and back.grid == grid
    assert back.meta == {"k": 1} and _same(back.bias, cube.bias)


@pytest.fixture(scope="module")
def pipeline_objects():
    rng = np.random.default_rng(5)
    B = rng.normal(0, 5e-6, (3, 4, 3))
    cube = synthesize_cube(B, noise=NoiseSpec(0.001, 2))
    idle = synthesize_cube(np.zeros((3, 4, 3)), noise=NoiseSpec(0.001, 3))
    pa, pi = fit_cube(cube), fit_cube(idle)
    vmap = combine_axes(axis_fields(pa, pi))
    data = make_dataset(states=(0, 1, 200), n_images_per_state=4,
                        grid=PlaneGrid(8, 10, 1e-4, x0=1e-3), seed=2)
    tr, _ = split(preprocess(data), SplitConfig(0.75, seed=1))
    clf = train_classifier(tr, k=3)
    return {"cube": cube, "params": pa, "vmap": vmap, "axis": vmap.axis_maps[1],
            "temp": TemperatureMap(vmap.dT, 1e-5), "dataset": data, "model": clf}


def test_pipeline_objects_round_trip(pipeline_objects, tmp_path):
    o = pipeline_objects
    r = {}
    for name, obj in o.items():
        p = tmp_path / f"{name}.qdmf"
        container.write(obj, p, config={"cmd": name})
        r[name] = container.read(p)
        assert json.loads((tmp_path / f"{name}.qdmf.json").read_text())["config"] == {"cmd": name}
    assert _same(r["cube"].data, o["cube"].data) and r["cube"].groups == o["cube"].groups
    for f in ("centers", "fwhms", "contrasts", "baseline", "residual_norm"):
        assert _same(getattr(r["params"], f), getattr(o["params"], f))
    assert np.array_equal(r["params"].status, o["params"].status)
    assert r["params"].groups == o["params"].groups
    assert _same(r["vmap"].stack(), o["vmap"].stack()) and _same(r["vmap"].dT, o["vmap"].dT)
    assert [m.axis for m in r["vmap"].axis_maps] == [1, 2, 3, 4]
    assert isinstance(r["axis"], AxisFieldMap) and r["axis"].axis == 2
    assert _same(r["axis"].dBz, o["axis"].dBz)
    assert isinstance(r["temp"], TemperatureMap) and _same(r["temp"].dT, o["temp"].dT)
    d, d0 = r["dataset"], o["dataset"]
    assert isinstance(d, LabeledImageSet) and _same(d.images, d0.images)
    assert _same(d.idles.images, d0.idles.images) and np.array_equal(d.labels, d0.labels)
    assert _same(d.times, d0.times) and d.meta == json.loads(json.dumps(d0.meta))
    m, m0 = r["model"], o["model"]
    assert _same(m.basis.components, m0.basis.components)
    assert _same(m.svm.weights, m0.svm.weights) and _same(m.svm.biases, m0.svm.biases)
    assert m.score_unit == m0.score_unit
    assert np.array_equal(m.predict(d0.images[:3] - d0.idles.images[:3]),
                          m0.predict(d0.images[:3] - d0.idles.images[:3]))


def test_rewrite_is_byte_identical(pipeline_objects, tmp_path):
    for name, obj in pipeline_objects.items():
        a, b = tmp_path / f"a_{name}.qdmf", tmp_path / f"b_{name}.qdmf"
        container.write(obj, a)
        container.write(container.read(a), b)
        assert a.read_bytes() == b.read_bytes(), name


def _written(tmp_path):
    p = tmp_path / "x.qdmf"
    container.write(np.arange(6.0).reshape(2, 3), p)
    return p, p.read_bytes()


def test_truncation_reports_offset(tmp_path):
    p, raw = _written(tmp_path)
    p.write_bytes(raw[:-1])
    with pytest.raises(FormatError) as e:
        container.read(p)
    assert e.value.offset == len(raw) - 1 and "truncated" in str(e.value)
    p.write_bytes(raw[:11])
    with pytest.raises(FormatError, match="dimensions"):
        container.read(p)


def test_trailing_bytes_and_bad_magic(tmp_path):
    p, raw = _written(tmp_path)
    p.write_bytes(raw + b"\0")
    with pytest.raises(FormatError) as e:
        container.read(p)
    assert e.value.offset == len(raw)
    p.write_bytes(b"QDMX" + raw[4:])
    with pytest.raises(FormatError) as e:
        container.read(p)
    assert e.value.offset == 0 and "magic" in str(e.value)


def test_future_version_rejected(tmp_path):
    p, raw = _written(tmp_path)
    p.write_bytes(raw[:4] + struct.pack("<H", 2) + raw[6:])
    with pytest.raises(FormatError, match="version 2") as e:
        container.read(p)
    assert e.value.offset == 4


def test_unknown_codes(tmp_path):
    p, raw = _written(tmp_path)
    p.write_bytes(raw[:6] + b"\x09" + raw[7:])
    with pytest.raises(FormatError) as e:
        container.read(p)
    assert e.value.offset == 6
    p.write_bytes(raw[:7] + b"\x07" + raw[8:])
    with pytest.raises(FormatError) as e:
        container.read(p)
    assert e.value.offset == 7


def test_sidecar_problems(tmp_path):
    p, raw = _written(tmp_path)
    side = tmp_path / "x.qdmf.json"
    doc = json.loads(side.read_text())
    side.write_text("{not json")
    with pytest.raises(FormatError, match="JSON"):
        container.read(p)
    bad = dict(doc)
    del bad["units"]
    side.write_text(json.dumps(bad))
    with pytest.raises(FormatError, match="units"):
        container.read(p)
    side.write_text(json.dumps(dict(doc, shape=[3, 2])))
    with pytest.raises(FormatError, match="does not describe"):
        container.read(p)
    side.unlink()
    with pytest.raises(FormatError, match="sidecar missing"):
        container.read(p)
    with pytest.raises(FormatError, match="not found"):
        container.read(tmp_path / "nope.qdmf")


def test_no_partial_file_on_failure(tmp_path):
    p = tmp_path / "y.qdmf"
    with pytest.raises(FormatError):
        container.write_array(p, "map2d", np.zeros(2), {"object": {}})  # no units
    assert not p.exists() and list(tmp_path.iterdir()) == []


def test_golden_files_read():
    objs = make_golden.golden_objects()
    axis = container.read(os.path.join(DATA, "axis_map.qdmf"))
    assert _same(axis.dBz, objs["axis_map"].dBz) and _same(axis.dT, objs["axis_map"].dT)
    assert axis.axis == 3 and axis.pixel_size == 1.25e-5
    vec = container.read(os.path.join(DATA, "vector_map.qdmf"))
    assert _same(vec.stack(), objs["vector_map"].stack()) and _same(vec.dT, objs["vector_map"].dT)
    arr = container.read(os.path.join(DATA, "float32_map2d.qdmf"))
    assert arr.dtype == np.float32 and _same(arr, objs["float32_map2d"])


def test_golden_files_rewritten_byte_for_byte(tmp_path):
    make_golden.write_all(str(tmp_path))
    for name in os.listdir(DATA):
        assert (tmp_path / name).read_bytes() == open(os.path.join(DATA, name), "rb").read(), name
