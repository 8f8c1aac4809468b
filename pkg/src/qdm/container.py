"""QDMF container files: a fixed binary header, a raw payload and a JSON sidecar.

Binary layout (all integers little-endian)::

    offset  size      field
    0       4         magic  b"QDMF"
    4       2         version (u16), currently 1
    6       1         kind (u8): 1 cube, 2 map2d, 3 vecmap, 4 params, 5 dataset, 6 model
    7       1         dtype (u8): 1 float32, 2 float64
    8       1         ndim (u8)
    9       8*ndim    dims (u64 each)
    9+8*ndim          payload, row-major (last axis fastest), little-endian floats

The sidecar ``<file>.json`` is validated against ``sidecar.schema.json``.
Objects made of several arrays list them in ``layout``: consecutive named
sections of the flattened payload.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from importlib import resources

import numpy as np

from . import __version__, _backend
from .errors import FormatError, UsageError

MAGIC = b"QDMF"
VERSION = 1
SUPPORTED_VERSIONS = (1,)
KINDS = {"cube": 1, "map2d": 2, "vecmap": 3, "params": 4, "dataset": 5, "model": 6}
KIND_NAMES = {v: k for k, v in KINDS.items()}
DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
DTYPE_CODES = {"float32": 1, "float64": 2}
_FIXED = 9
_UMASK = os.umask(0)
os.umask(_UMASK)


def encode_header(kind, dtype, shape):
    code = DTYPE_CODES[np.dtype(dtype).name]
    shape = tuple(int(d) for d in shape)
    if len(shape) > 255:
        raise UsageError("too many dimensions")
    return (MAGIC + struct.pack("<HBBB", VERSION, KINDS[kind], code, len(shape))
            + struct.pack(f"<{len(shape)}Q", *shape))


def decode_header(buf, path=None):
    """Parse a header; returns ``(version, kind, dtype, shape, payload_offset)``."""
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise FormatError("bad magic, not a QDMF container", 0, path)
    if len(buf) >= 6:
        version = struct.unpack_from("<H", buf, 4)[0]
        if version not in SUPPORTED_VERSIONS:
            raise FormatError(f"unsupported container version {version}; this reader handles "
                              f"{', '.join(map(str, SUPPORTED_VERSIONS))}", 4, path)
    if len(buf) < _FIXED:
        raise FormatError("truncated header", len(buf), path)
    version, kind, dcode, ndim = struct.unpack_from("<HBBB", buf, 4)
    if kind not in KIND_NAMES:
        raise FormatError(f"unknown kind code {kind}", 6, path)
    if dcode not in DTYPES:
        raise FormatError(f"unknown dtype code {dcode}", 7, path)
    end = _FIXED + 8 * ndim
    if len(buf) < end:
        raise FormatError("truncated header dimensions", len(buf), path)
    shape = struct.unpack_from(f"<{ndim}Q", buf, _FIXED)
    return version, KIND_NAMES[kind], DTYPES[dcode], tuple(shape), end


def _schema():
    return json.loads(resources.files("qdm").joinpath("sidecar.schema.json").read_text())


def validate_sidecar(doc, path=None):
    import jsonschema

    try:
        jsonschema.validate(doc, _schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise FormatError(f"sidecar invalid at {where}: {exc.message}", None, path) from None


def sidecar_path(path):
    return os.fspath(path) + ".json"


def _atomic_write_many(items):
    """Write ``{path: bytes}`` via temporary files renamed into place."""
    temps = []
    try:
        for path, data in items:
            d = os.path.dirname(os.path.abspath(path))
            os.makedirs(d, exist_ok=True)
            fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=d)
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.chmod(tmp, 0o666 & ~_UMASK)
            temps.append((tmp, path))
        for tmp, path in temps:
            os.replace(tmp, path)
    finally:
        for tmp, _ in temps:
            if os.path.exists(tmp):
                os.unlink(tmp)


def atomic_write_bytes(path, data):
    _atomic_write_many([(path, data)])


def atomic_write_text(path, text):
    _atomic_write_many([(path, text.encode("utf-8"))])


def dumps_json(doc):
    return json.dumps(_jsonable(doc), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, float) and not np.isfinite(x):
        return None
    return x


def _pack(sections, dtype):
    flat = [np.ascontiguousarray(a, dtype=dtype).reshape(-1) for _, a in sections]
    layout = [{"name": n, "shape": list(np.shape(a))} for n, a in sections]
    return (np.concatenate(flat) if flat else np.zeros(0, dtype=dtype)), layout


def _unpack(flat, layout, path=None):
    out, pos = {}, 0
    for sec in layout:
        n = int(np.prod(sec["shape"], dtype=np.int64))
        if pos + n > flat.size:
            raise FormatError(f"layout section {sec['name']} overruns the payload", None, path)
        out[sec["name"]] = flat[pos:pos + n].reshape(sec["shape"])
        pos += n
    if pos != flat.size:
        raise FormatError("layout does not cover the payload", None, path)
    return out


def write_array(path, kind, array, sidecar):
    """Write one payload array and its sidecar atomically."""
    array = np.asarray(array)
    if array.dtype not in (np.float32, np.float64):
        array = array.astype(np.float64)
    le = array.astype(array.dtype.newbyteorder("<"), copy=False)
    doc = dict(sidecar)
    doc.update({"format": "qdmf-sidecar", "version": VERSION, "kind": kind,
                "dtype": array.dtype.name, "shape": list(array.shape)})
    doc.setdefault("creation", {"software": "qdm", "software_version": __version__,
                                "backend": _backend.NAME})
    doc = _jsonable(doc)
    validate_sidecar(doc, path)
    payload = encode_header(kind, array.dtype, array.shape) + np.ascontiguousarray(le).tobytes()
    _atomic_write_many([(sidecar_path(path), dumps_json(doc).encode("utf-8")), (path, payload)])
    return doc


def read_array(path):
    """Read a container; returns ``(kind, array, sidecar)``."""
    p = os.fspath(path)
    try:
        with open(p, "rb") as fh:
            buf = fh.read()
    except FileNotFoundError:
        raise FormatError("file not found", None, p) from None
    except OSError as exc:
        raise FormatError(f"cannot read file: {exc.strerror}", None, p) from None
    _, kind, dtype, shape, off = decode_header(buf, p)
    n = int(np.prod(shape, dtype=np.int64)) if shape else 1
    need = off + n * dtype.itemsize
    if len(buf) < need:
        raise FormatError(f"payload truncated: expected {need} bytes, found {len(buf)}",
                          len(buf), p)
    if len(buf) > need:
        raise FormatError(f"{len(buf) - need} unexpected bytes after the payload", need, p)
    arr = np.frombuffer(buf, dtype=dtype, count=n, offset=off).reshape(shape)
    arr = arr.astype(dtype.newbyteorder("="))
    sp = sidecar_path(p)
    try:
        with open(sp) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise FormatError("sidecar missing", None, sp) from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"sidecar is not valid JSON: {exc.msg}", exc.pos, sp) from None
    validate_sidecar(doc, sp)
    if doc["kind"] != kind or doc["dtype"] != dtype.name or tuple(doc["shape"]) != tuple(shape):
        raise FormatError("sidecar does not describe this container", None, sp)
    return kind, arr, doc


# --------------------------------------------------------------------------- object codecs

def _grid_doc(grid):
    return grid.to_dict()


def write(obj, path, config=None, extra=None):
    """Persist any supported object; returns the sidecar document written.

    ``config``, if given, is recorded as the resolved run configuration.
    """
    from .classify import TrainedClassifier
    from .fitting import ParameterMaps
    from .images import LabeledImageSet
    from .recon import AxisFieldMap, TemperatureMap, VectorFieldMap
    from .spectrum import SpectralCube

    side = {} if extra is None else dict(extra)
    if config is not None:
        side["config"] = config

    if isinstance(obj, SpectralCube):
        side.update({"units": {"data": "normalized fluorescence", "frequency": "MHz",
                               "pixel_size": "m", "bias": "T"},
                     "grid": _grid_doc(obj.grid), "pixel_size": float(obj.pixel_size),
                     "bias": [float(v) for v in obj.bias],
                     "object": {"type": "SpectralCube", "mode": obj.mode, "axis": obj.axis,
                                "groups": obj.groups, "meta": obj.meta}})
        return write_array(path, "cube", obj.data.astype(np.float64, copy=False), side)

    if isinstance(obj, AxisFieldMap):
        side.update({"units": {"dBz": "T", "dT": "K", "pixel_size": "m"},
                     "pixel_size": float(obj.pixel_size),
                     "layout": [{"name": "dBz", "shape": list(obj.shape)},
                                {"name": "dT", "shape": list(obj.shape)}],
                     "object": {"type": "AxisFieldMap", "axis": int(obj.axis)}})
        return write_array(path, "map2d", np.stack([obj.dBz, obj.dT]), side)

    if isinstance(obj, TemperatureMap):
        side.update({"units": {"data": "K", "pixel_size": "m"},
                     "pixel_size": float(obj.pixel_size), "object": {"type": "TemperatureMap"}})
        return write_array(path, "map2d", obj.dT, side)

    if isinstance(obj, VectorFieldMap):
        sections = [("B_X", obj.B_X), ("B_Y", obj.B_Y), ("B_Z", obj.B_Z)]
        if obj.dT is not None:
            sections.append(("dT", obj.dT))
        for am in obj.axis_maps:
            sections += [(f"axis{am.axis}.dBz", am.dBz), (f"axis{am.axis}.dT", am.dT)]
        flat, layout = _pack(sections, np.float64)
        side.update({"units": {"B": "T", "dT": "K", "pixel_size": "m"},
                     "pixel_size": float(obj.pixel_size), "layout": layout,
                     "object": {"type": "VectorFieldMap"}})
        return write_array(path, "vecmap", flat.reshape((len(sections),) + obj.shape), side)

    if isinstance(obj, ParameterMaps):
        sections = [("centers", obj.centers), ("fwhms", obj.fwhms),
                    ("contrasts", obj.contrasts), ("baseline", obj.baseline),
                    ("residual_norm", obj.residual_norm), ("iterations", obj.iterations),
                    ("status", obj.status), ("low_confidence", obj.low_confidence)]
        flat, layout = _pack(sections, np.float64)
        side.update({"units": {"centers": "MHz", "fwhms": "MHz", "contrasts": "fraction",
                               "baseline": "normalized fluorescence", "pixel_size": "m",
                               "bias": "T"},
                     "grid": _grid_doc(obj.grid), "pixel_size": float(obj.pixel_size),
                     "bias": [float(v) for v in obj.bias], "layout": layout,
                     "object": {"type": "ParameterMaps", "mode": obj.mode, "axis": obj.axis,
                                "groups": obj.groups, "lines_per_group": obj.lines_per_group,
                                "meta": obj.meta}})
        return write_array(path, "params", flat, side)

    if isinstance(obj, LabeledImageSet):
        stack = obj.images if obj.idles is None else np.concatenate([obj.images,
                                                                     obj.idles.images])
        dtype = np.float32 if stack.dtype == np.float32 else np.float64
        o = {"type": "LabeledImageSet", "n_active": len(obj), "labels": obj.labels,
             "times": obj.times, "region": obj.region, "meta": obj.meta}
        if obj.idles is not None:
            o.update({"idle_labels": obj.idles.labels, "idle_times": obj.idles.times,
                      "idle_meta": obj.idles.meta})
        side.update({"units": {"images": "T", "pixel_size": "m", "times": "acquisition index"},
                     "pixel_size": float(obj.pixel_size), "scenario": obj.scenario,
                     "seed": obj.meta.get("seed"), "object": o})
        return write_array(path, "dataset", stack.astype(dtype, copy=False), side)

    if isinstance(obj, TrainedClassifier):
        b, m = obj.basis, obj.svm
        sections = [("mean", b.mean), ("components", b.components),
                    ("explained_variance_ratio", b.explained_variance_ratio),
                    ("singular_values", b.singular_values),
                    ("weights", m.weights), ("biases", m.biases)]
        if m.scale_mean is not None:
            sections += [("scale_mean", m.scale_mean), ("scale_std", m.scale_std)]
        machines = []
        for k, mc in enumerate(m.machines):
            sections += [(f"m{k}.alpha", mc.alpha), (f"m{k}.y", mc.y), (f"m{k}.index", mc.index)]
            machines.append({"positive": mc.positive, "negative": mc.negative,
                             "iterations": mc.iterations, "kkt_gap": mc.kkt_gap})
        flat, layout = _pack(sections, np.float64)
        side.update({"units": {"mean": "T", "components": "1", "scores": obj.score_unit},
                     "layout": layout,
                     "object": {"type": "TrainedClassifier", "score_unit": obj.score_unit,
                                "classes": m.classes, "C": m.C, "tie_break": m.tie_break,
                                "n_train": b.n_train, "machines": machines,
                                "svm_meta": m.meta, "meta": obj.meta}})
        return write_array(path, "model", flat, side)

    if isinstance(obj, np.ndarray) and obj.ndim == 2:
        side.setdefault("units", {"data": "T"})
        side.setdefault("object", {"type": "array"})
        return write_array(path, "map2d", obj, side)

    raise UsageError(f"cannot persist objects of type {type(obj).__name__}")


def read(path):
    """Load an object written by :func:`write`."""
    from .classify import BinarySVM, PCABasis, SVMModel, TrainedClassifier
    from .fitting import ParameterMaps
    from .images import LabeledImageSet
    from .recon import AxisFieldMap, TemperatureMap, VectorFieldMap
    from .spectrum import SpectralCube, SweepGrid

    kind, arr, doc = read_array(path)
    o = doc["object"]
    t = o.get("type")
    sp = sidecar_path(path)
    try:
        if kind == "cube" and t == "SpectralCube":
            return SpectralCube(arr, SweepGrid.from_dict(doc["grid"]), o["mode"], o["axis"],
                                doc["pixel_size"], np.array(doc["bias"]), o["groups"], o["meta"])
        if kind == "map2d" and t == "AxisFieldMap":
            return AxisFieldMap(arr[0], arr[1], doc["pixel_size"], o["axis"])
        if kind == "map2d" and t == "TemperatureMap":
            return TemperatureMap(arr, doc["pixel_size"])
        if kind == "map2d":
            return arr
        if kind == "vecmap":
            s = _unpack(arr.reshape(-1), doc["layout"], sp)
            axis_maps = []
            for a in (1, 2, 3, 4):
                if f"axis{a}.dBz" in s:
                    axis_maps.append(AxisFieldMap(s[f"axis{a}.dBz"], s[f"axis{a}.dT"],
                                                  doc["pixel_size"], a))
            return VectorFieldMap(s["B_X"], s["B_Y"], s["B_Z"], doc["pixel_size"],
                                  s.get("dT"), axis_maps)
        if kind == "params":
            s = _unpack(arr, doc["layout"], sp)
            return ParameterMaps(
                centers=s["centers"], fwhms=s["fwhms"], contrasts=s["contrasts"],
                baseline=s["baseline"], residual_norm=s["residual_norm"],
                iterations=s["iterations"].astype(np.int32), status=s["status"].astype(np.int8),
                low_confidence=s["low_confidence"].astype(bool),
                grid=SweepGrid.from_dict(doc["grid"]), mode=o["mode"], axis=o["axis"],
                groups=o["groups"], lines_per_group=o["lines_per_group"],
                pixel_size=doc["pixel_size"], bias=np.array(doc["bias"]), meta=o["meta"])
        if kind == "dataset":
            n = o["n_active"]
            idles = None
            if "idle_labels" in o:
                idles = LabeledImageSet(arr[n:], o["idle_labels"], o["idle_times"],
                                        doc.get("scenario", ""), doc["pixel_size"], o["region"],
                                        o["idle_meta"])
            return LabeledImageSet(arr[:n], o["labels"], o["times"], doc.get("scenario", ""),
                                   doc["pixel_size"], o["region"], o["meta"], idles)
        if kind == "model":
            s = _unpack(arr, doc["layout"], sp)
            basis = PCABasis(s["mean"], s["components"], s["explained_variance_ratio"],
                             s["singular_values"], o["n_train"])
            machines = []
            for k, mc in enumerate(o["machines"]):
                machines.append(BinarySVM(mc["positive"], mc["negative"], s["weights"][k].copy(),
                                          float(s["biases"][k]), s[f"m{k}.alpha"],
                                          s[f"m{k}.y"], s[f"m{k}.index"].astype(int),
                                          mc["iterations"], mc["kkt_gap"]))
            svm = SVMModel(np.array(o["classes"]), machines, o["C"], o["tie_break"],
                           s.get("scale_mean"), s.get("scale_std"), o["svm_meta"])
            return TrainedClassifier(basis, svm, o["score_unit"], o["meta"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"sidecar does not match a {kind} container: {exc}", None, sp) from None
    raise FormatError(f"unsupported object type {t!r} for kind {kind}", None, sp)
