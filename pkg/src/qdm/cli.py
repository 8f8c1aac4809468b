"""``qdm`` command line: one subcommand per pipeline stage.

Exit codes: 0 success, 2 usage or configuration error, 3 unreadable or
malformed input, 4 numerical failure (for example fewer than half of the
pixels converged). Outputs are written atomically and depend only on the
arguments and seeds, never on the worker count.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__, container
from .defaults import load_defaults
from .errors import ConfigError, NumericError, QDMError, UsageError

OUTPUT_DIR_ENV = "QDM_OUTPUT_DIR"
_NOT_RECORDED = {"workers", "verbose", "config", "command"}


# --------------------------------------------------------------------------- argument helpers

def _int_list(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(n):
    def parse(text):
        try:
            vals = [float(t) for t in text.split(",")]
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers") from None
        if len(vals) != n:
            raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers")
        return vals
    return parse


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _output_path(path, default_name):
    """Explicit path, else ``$QDM_OUTPUT_DIR/<default_name>``, else the working directory."""
    if path:
        if path.endswith(os.sep) or os.path.isdir(path):
            return os.path.join(path, default_name)
        return path
    return os.path.join(os.environ.get(OUTPUT_DIR_ENV, "."), default_name)


def _log(args, msg):
    if getattr(args, "verbose", 0):
        print(f"qdm: {msg}", file=sys.stderr)


# --------------------------------------------------------------------------- configuration

def _defaults_for(command):
    d = load_defaults()
    fit = d["fit"]
    clf = d["classifier"]
    table = {
        "simulate": {"layout": "ro", "scenario": "decapped", "standoff": None, "region": "R1",
                     "n_ros": 200, "per_ro_current": d["forward"]["per_ro_current"],
                     "die_plan": None, "rows": d["forward"]["grid"]["rows"],
                     "cols": d["forward"]["grid"]["cols"],
                     "pixel_size": d["forward"]["grid"]["pixel_size"], "x0": 0.0, "y0": 0.0,
                     "with_temperature": False,
                     "temperature_per_ro": d["forward"]["temperature_per_ro"],
                     "fea_current": 10e-3},
        "synth": {"idle": False, "mode": "vector", "axis": 1, "hamiltonian": "perturbative",
                  "noise_sigma": 0.0, "noise_scenario": None, "seed": 0,
                  "fwhm": d["lineshape"]["fwhm"], "contrast": d["lineshape"]["contrast"],
                  "sweep": None, "bias": d["bias"]},
        "fit": {k: fit[k] for k in ("max_iterations", "cost_tolerance", "param_tolerance",
                                    "initial_damping", "damping_up", "damping_down",
                                    "share_triplet_shape", "fwhm_guess", "contrast_guess",
                                    "min_converged_fraction")},
        "reconstruct": {"axis": None, "transverse_correction": True},
        "filter": {"processing": None, "bin": 1, "lowpass": 0.0, "upward": 0.0},
        "dataset": {"scenario": "decapped", "states": [0, 1, 5, 10, 50, 100, 200],
                    "per_state": 40, "seed": 0, "noise_floor": None,
                    "per_ro_current": d["forward"]["per_ro_current"], "region": "R1",
                    "axis": 1, "drift_rms": None, "rows": d["forward"]["grid"]["rows"],
                    "cols": d["forward"]["grid"]["cols"],
                    "pixel_size": d["forward"]["grid"]["pixel_size"], "die_plan": None},
        "train": {"bin": None, "train_fraction": None, "split_seed": 0,
                  "n_components": clf["n_components"], "C": clf["C"],
                  "score_unit": clf["score_unit"], "svm_tolerance": clf["svm_tolerance"],
                  "standardize": False},
        "predict": {"subset": "all"},
        "evaluate": {},
        "render": {"component": None, "colormap": "diverging", "range": None, "title": None},
    }
    return table[command]


def resolve_config(args):
    """Defaults, then ``--config`` file values, then explicit flags.

    Unknown keys in the file raise :class:`ConfigError`.
    """
    cfg = _defaults_for(args.command)
    io_keys = {a.dest for a in _IO_ACTIONS.get(args.command, [])}
    if args.config:
        try:
            with open(args.config) as fh:
                doc = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file {args.config} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {args.config} is not valid JSON: {exc.msg}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = sorted(set(doc) - set(cfg) - io_keys)
        if unknown:
            raise ConfigError(f"unknown config key(s) for {args.command}: {', '.join(unknown)}")
        for k, v in doc.items():
            if k in io_keys:
                if getattr(args, k) is None:
                    setattr(args, k, v)
            else:
                cfg[k] = v
    for k in cfg:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


def _record(args, cfg):
    """Config dict written into output sidecars: resolved values plus input paths."""
    rec = {"subcommand": args.command, "qdm_version": __version__}
    for a in _IO_ACTIONS.get(args.command, []):
        if a.dest != "output":
            rec[a.dest] = getattr(args, a.dest)
    rec.update({k: v for k, v in cfg.items() if k not in _NOT_RECORDED})
    return rec


# --------------------------------------------------------------------------- commands

def _read(path, expect=None):
    if path is None:
        raise UsageError("an input file is required (--in)")
    obj = container.read(path)
    if expect is not None and not isinstance(obj, expect):
        raise UsageError(f"{path} holds a {type(obj).__name__}, expected {expect.__name__}")
    return obj


def cmd_simulate(args, cfg):
    from .forward.field import PlaneGrid, biot_savart_plane
    from .forward.geometry import (STANDOFF_PRESETS, ChipState, DiePlan, fea_reference_layout,
                                   ro_current_layout, temperature_of_state)

    if cfg["scenario"] not in STANDOFF_PRESETS:
        raise UsageError(f"unknown scenario {cfg['scenario']!r}")
    z = STANDOFF_PRESETS[cfg["scenario"]] if cfg["standoff"] is None else float(cfg["standoff"])
    grid = PlaneGrid(int(cfg["rows"]), int(cfg["cols"]), float(cfg["pixel_size"]),
                     float(cfg["x0"]), float(cfg["y0"]))
    if cfg["layout"] == "fea":
        layout = fea_reference_layout(current=float(cfg["fea_current"]))
        n_ros = 0
    else:
        plan = DiePlan.from_json(cfg["die_plan"]) if cfg["die_plan"] else DiePlan()
        n_ros = int(cfg["n_ros"])
        layout = ro_current_layout(plan, ChipState(cfg["region"], n_ros),
                                   float(cfg["per_ro_current"]))
    _log(args, f"Biot-Savart over {len(layout)} segments on a {grid.rows}x{grid.cols} grid")
    vm = biot_savart_plane(layout, z, grid, workers=args.workers)
    if cfg["with_temperature"]:
        vm.dT = np.full(grid.shape, temperature_of_state(n_ros, cfg["temperature_per_ro"]))
    out = _output_path(args.output, "field.qdmf")
    container.write(vm, out, config=_record(args, cfg), extra={"state": n_ros})
    return out


def cmd_synth(args, cfg):
    from .nv import PhysicalConstants
    from .recon import VectorFieldMap
    from .scenarios import scenario_spectral_sigma
    from .spectrum import Lineshape, NoiseSpec, SweepGrid, synthesize_cube

    vm = _read(args.input, VectorFieldMap)
    if cfg["idle"]:
        z = np.zeros(vm.shape)
        vm = VectorFieldMap(z, z, z, vm.pixel_size, z)
    lineshape = Lineshape(float(cfg["fwhm"]), float(cfg["contrast"]))
    sigma = float(cfg["noise_sigma"])
    if cfg["noise_scenario"]:
        sigma = scenario_spectral_sigma(cfg["noise_scenario"], mode=cfg["mode"],
                                        axis=int(cfg["axis"]), lineshape=lineshape,
                                        bias=np.array(cfg["bias"], dtype=float))
        cfg["noise_sigma"] = sigma
    grid = SweepGrid.uniform(*cfg["sweep"][:2], int(cfg["sweep"][2])) if cfg["sweep"] else None
    cube = synthesize_cube(vm, np.array(cfg["bias"], dtype=float), PhysicalConstants(), None,
                           grid, NoiseSpec(sigma, int(cfg["seed"])), cfg["mode"],
                           cfg["hamiltonian"], lineshape, int(cfg["axis"]))
    out = _output_path(args.output, "cube.qdmf")
    container.write(cube, out, config=_record(args, cfg))
    return out


def cmd_fit(args, cfg):
    from .fitting import FitConfig, fit_cube
    from .spectrum import SpectralCube

    cube = _read(args.input, SpectralCube)
    fc = FitConfig(**{k: v for k, v in cfg.items() if k != "min_converged_fraction"},
                   workers=args.workers)

    def progress(done, total):
        _log(args, f"fit {done}/{total} pixels")

    pm = fit_cube(cube, fc, progress=progress)
    frac = pm.converged_fraction
    if frac < float(cfg["min_converged_fraction"]):
        raise NumericError(f"only {100 * frac:.1f}% of pixels converged "
                           f"(minimum {100 * cfg['min_converged_fraction']:.0f}%)")
    out = _output_path(args.output, "params.qdmf")
    container.write(pm, out, config=_record(args, cfg))
    return out


def cmd_reconstruct(args, cfg):
    from .fitting import ParameterMaps
    from .nv import PhysicalConstants
    from .recon import axis_fields, combine_axes, freqs_to_axis_field, transverse_shift_correction

    if args.active is None or args.idle is None:
        raise UsageError("both --active and --idle parameter maps are required")
    act = _read(args.active, ParameterMaps)
    idle = _read(args.idle, ParameterMaps)
    hf = act.meta.get("hyperfine", PhysicalConstants().A_hf)
    c = PhysicalConstants(A_hf=float(hf))
    if act.mode == "vector" and cfg["axis"] is None:
        result = combine_axes(axis_fields(act, idle, c))
        if cfg["transverse_correction"]:
            result = transverse_shift_correction(result, act.bias, c)
    else:
        result = freqs_to_axis_field(act, idle, c, cfg["axis"])
    out = _output_path(args.output, "field_map.qdmf")
    container.write(result, out, config=_record(args, cfg))
    return out


def cmd_filter(args, cfg):
    from .recon import AxisFieldMap, TemperatureMap, VectorFieldMap, bin_map, gaussian_lowpass, \
        upward_continue
    from .scenarios import measurement_scenario

    m = _read(args.input)
    if not isinstance(m, (AxisFieldMap, TemperatureMap, VectorFieldMap, np.ndarray)):
        raise UsageError(f"{args.input} does not hold a field map")
    b, s, dz = int(cfg["bin"]), float(cfg["lowpass"]), float(cfg["upward"])
    if cfg["processing"]:
        p = measurement_scenario(cfg["processing"]).processing
        b, s = p.bin_factor, p.lowpass_sigma_px
    if b > 1:
        m = bin_map(m, b)
    if s > 0:
        m = gaussian_lowpass(m, s)
    if dz:
        if isinstance(m, VectorFieldMap):
            px = m.pixel_size
            m = VectorFieldMap(upward_continue(m.B_X, px, dz), upward_continue(m.B_Y, px, dz),
                               upward_continue(m.B_Z, px, dz), px, m.dT)
        elif isinstance(m, AxisFieldMap):
            m = AxisFieldMap(upward_continue(m.dBz, m.pixel_size, dz), m.dT, m.pixel_size,
                             m.axis)
        else:
            raise UsageError("upward continuation applies to field maps only")
    out = _output_path(args.output, "filtered.qdmf")
    container.write(m, out, config=_record(args, cfg))
    return out


def cmd_dataset(args, cfg):
    from dataclasses import replace

    from .forward.dataset import make_dataset, scenario_spec
    from .forward.field import PlaneGrid
    from .forward.geometry import DiePlan

    states = cfg["states"]
    if isinstance(states, str):
        states = _int_list(states)
    cfg["states"] = [int(s) for s in states]
    spec = scenario_spec(cfg["scenario"])
    bg = spec.background
    if cfg["drift_rms"] is not None:
        bg = replace(bg, drift_rms=float(cfg["drift_rms"]))
    plan = DiePlan.from_json(cfg["die_plan"]) if cfg["die_plan"] else DiePlan()
    grid = PlaneGrid(int(cfg["rows"]), int(cfg["cols"]), float(cfg["pixel_size"]))
    _log(args, f"{len(cfg['states'])} states x {cfg['per_state']} images, scenario "
               f"{cfg['scenario']}")
    ds = make_dataset(plan, cfg["states"], int(cfg["per_state"]), cfg["scenario"],
                      cfg["noise_floor"], bg, int(cfg["seed"]), grid,
                      float(cfg["per_ro_current"]), cfg["region"], int(cfg["axis"]),
                      workers=args.workers)
    out = _output_path(args.output, "dataset.qdmf")
    container.write(ds, out, config=_record(args, cfg))
    return out


def _scenario_classifier_defaults(scenario):
    d = load_defaults()["scenarios"]
    return d.get(scenario, d["decapped"])["classifier"]


def cmd_train(args, cfg):
    from .classify import SplitConfig, preprocess, split_indices, train_classifier
    from .images import LabeledImageSet

    ds = _read(args.input, LabeledImageSet)
    sc = _scenario_classifier_defaults(ds.scenario)
    if cfg["bin"] is None:
        cfg["bin"] = sc["bin_factor"]
    if cfg["train_fraction"] is None:
        cfg["train_fraction"] = sc["train_fraction"]
    pre = preprocess(ds, bin_factor=int(cfg["bin"]))
    tr, te = split_indices(pre.labels, SplitConfig(float(cfg["train_fraction"]),
                                                    int(cfg["split_seed"])))
    _log(args, f"training on {tr.size} images, holding out {te.size}")
    model = train_classifier(pre.subset(tr), int(cfg["n_components"]), float(cfg["C"]),
                             cfg["score_unit"], float(cfg["svm_tolerance"]),
                             bool(cfg["standardize"]))
    model.meta = dict(model.meta, bin_factor=int(cfg["bin"]),
                      train_fraction=float(cfg["train_fraction"]),
                      split_seed=int(cfg["split_seed"]), train_index=tr.tolist(),
                      test_index=te.tolist(), dataset_scenario=ds.scenario,
                      dataset_seed=ds.meta.get("seed"),
                      explained_variance=float(np.sum(model.basis.explained_variance_ratio)))
    out = _output_path(args.output, "model.qdmf")
    container.write(model, out, config=_record(args, cfg))
    return out


def _model_and_data(args):
    from .classify import TrainedClassifier, preprocess
    from .images import LabeledImageSet

    if args.model is None:
        raise UsageError("a trained model is required (--model)")
    model = _read(args.model, TrainedClassifier)
    ds = _read(args.input, LabeledImageSet)
    pre = preprocess(ds, bin_factor=int(model.meta.get("bin_factor", 1)))
    if pre.shape != model.basis.shape:
        raise UsageError(f"dataset images {pre.shape} do not match the model {model.basis.shape}")
    return model, pre


def _write_json(path, doc):
    container.atomic_write_text(path, container.dumps_json(doc))


def cmd_predict(args, cfg):
    model, pre = _model_and_data(args)
    if cfg["subset"] == "test":
        idx = np.asarray(model.meta["test_index"], dtype=int)
    elif cfg["subset"] == "all":
        idx = np.arange(len(pre))
    else:
        raise UsageError("subset must be 'all' or 'test'")
    sub = pre.subset(idx)
    pred = model.predict(sub) if len(sub) else np.zeros(0, dtype=int)
    doc = {"config": _record(args, cfg), "index": idx.tolist(), "times": sub.times.tolist(),
           "labels": sub.labels.tolist(), "predicted": [int(p) for p in pred]}
    out = _output_path(args.output, "predictions.json")
    _write_json(out, doc)
    return out


def cmd_evaluate(args, cfg):
    from .report import pipeline_report

    model, pre = _model_and_data(args)
    test = pre.subset(np.asarray(model.meta.get("test_index", []), dtype=int))
    if len(test) == 0:
        raise UsageError("the test set is empty")
    ev = model.evaluate(test)
    title = f"Chip state prediction accuracy ({pre.scenario or 'dataset'}, test set)"
    text, summary = pipeline_report(ev, title)
    summary["config"] = _record(args, cfg)
    summary["explained_variance"] = model.meta.get("explained_variance")
    base = _output_path(args.output, "report")
    if base.endswith(".json"):
        base = base[:-5]
    _write_json(base + ".json", summary)
    container.atomic_write_text(base + ".txt", text)
    sys.stdout.write(text)
    return base + ".json"


def cmd_render(args, cfg):
    from .render import render_map

    m = _read(args.input)
    rng = "auto" if cfg["range"] is None else tuple(cfg["range"])
    out = _output_path(args.output, "map.png")
    render_map(m, out, cfg["colormap"], rng, cfg["component"], title=cfg["title"])
    return out


COMMANDS = {
    "simulate": cmd_simulate, "synth": cmd_synth, "fit": cmd_fit,
    "reconstruct": cmd_reconstruct, "filter": cmd_filter, "dataset": cmd_dataset,
    "train": cmd_train, "predict": cmd_predict, "evaluate": cmd_evaluate, "render": cmd_render,
}
_IO_ACTIONS = {}


# --------------------------------------------------------------------------- parser

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE",
                        help="JSON object of option values; unknown keys are rejected")
    common.add_argument("--workers", type=_positive_int, default=os.cpu_count() or 1,
                        help="worker threads (default: available cores); never changes results")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="qdm", description="Quantum diamond microscope image "
                                "analysis: synthesis, fitting, reconstruction and classification.")
    p.add_argument("--version", action="version", version=f"qdm {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def add(name, help_text):
        sp = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        _IO_ACTIONS[name] = []
        return sp

    def io(sp, name, *flags, **kw):
        a = sp.add_argument(*flags, default=None, **kw)
        _IO_ACTIONS[name].append(a)
        return a

    def out(sp, name, default_name):
        io(sp, name, "-o", "--output", dest="output", metavar="PATH",
           help=f"output file or directory (default: ${OUTPUT_DIR_ENV}/{default_name})")

    s = add("simulate", "Biot-Savart field of a chip state (or the reference wire array).")
    s.add_argument("--layout", choices=["ro", "fea"], default=None)
    s.add_argument("--scenario", choices=["decapped", "intact"], default=None,
                   help="stand-off preset")
    s.add_argument("--standoff", type=float, default=None, help="sensor height, m")
    s.add_argument("--region", default=None)
    s.add_argument("--n-ros", dest="n_ros", type=int, default=None)
    s.add_argument("--per-ro-current", dest="per_ro_current", type=float, default=None,
                   help="supply current per ring oscillator, A")
    s.add_argument("--die-plan", dest="die_plan", default=None, help="die plan JSON file")
    s.add_argument("--rows", type=int, default=None)
    s.add_argument("--cols", type=int, default=None)
    s.add_argument("--pixel-size", dest="pixel_size", type=float, default=None, help="m")
    s.add_argument("--x0", type=float, default=None)
    s.add_argument("--y0", type=float, default=None)
    s.add_argument("--with-temperature", dest="with_temperature", action="store_const",
                   const=True, default=None, help="attach the die temperature rise of the state")
    s.add_argument("--fea-current", dest="fea_current", type=float, default=None)
    out(s, "simulate", "field.qdmf")

    s = add("synth", "Synthesize an ODMR spectral cube from a field map.")
    io(s, "synth", "--in", dest="input", metavar="FIELD", help="vector field map container")
    s.add_argument("--idle", action="store_const", const=True, default=None,
                   help="zero-field cube of the same size (the idle reference)")
    s.add_argument("--mode", choices=["vector", "single_axis"], default=None)
    s.add_argument("--axis", type=int, choices=[1, 2, 3, 4], default=None)
    s.add_argument("--hamiltonian", choices=["perturbative", "exact"], default=None)
    s.add_argument("--noise-sigma", dest="noise_sigma", type=float, default=None,
                   help="white noise, fraction of baseline")
    s.add_argument("--noise-scenario", dest="noise_scenario", choices=["decapped", "intact"],
                   default=None, help="pick the noise that gives the scenario's field floor")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--fwhm", type=float, default=None, help="MHz")
    s.add_argument("--contrast", type=float, default=None)
    s.add_argument("--sweep", type=_float_list(3), default=None, metavar="START,STOP,N")
    s.add_argument("--bias", type=_float_list(3), default=None, metavar="BX,BY,BZ",
                   help="bias field, T")
    out(s, "synth", "cube.qdmf")

    s = add("fit", "Fit every pixel spectrum of a cube.")
    io(s, "fit", "--in", dest="input", metavar="CUBE")
    s.add_argument("--max-iterations", dest="max_iterations", type=int, default=None)
    s.add_argument("--cost-tolerance", dest="cost_tolerance", type=float, default=None)
    s.add_argument("--param-tolerance", dest="param_tolerance", type=float, default=None)
    s.add_argument("--initial-damping", dest="initial_damping", type=float, default=None)
    s.add_argument("--free-lines", dest="share_triplet_shape", action="store_const", const=False,
                   default=None, help="fit each hyperfine line independently")
    s.add_argument("--fwhm-guess", dest="fwhm_guess", type=float, default=None)
    s.add_argument("--contrast-guess", dest="contrast_guess", type=float, default=None)
    s.add_argument("--min-converged-fraction", dest="min_converged_fraction", type=float,
                   default=None)
    out(s, "fit", "params.qdmf")

    s = add("reconstruct", "Field and temperature maps from active and idle fits.")
    io(s, "reconstruct", "--active", dest="active", metavar="PARAMS")
    io(s, "reconstruct", "--idle", dest="idle", metavar="PARAMS")
    s.add_argument("--axis", type=int, choices=[1, 2, 3, 4], default=None,
                   help="return one axis projection instead of the vector map")
    s.add_argument("--no-transverse-correction", dest="transverse_correction",
                   action="store_const", const=False, default=None)
    out(s, "reconstruct", "field_map.qdmf")

    s = add("filter", "Bin, smooth or upward-continue a field map.")
    io(s, "filter", "--in", dest="input", metavar="MAP")
    s.add_argument("--processing", choices=["decapped", "intact"], default=None,
                   help="apply a scenario's binning and smoothing")
    s.add_argument("--bin", type=_positive_int, default=None)
    s.add_argument("--lowpass", type=float, default=None, help="Gaussian sigma, pixels")
    s.add_argument("--upward", type=float, default=None, help="continuation height, m")
    out(s, "filter", "filtered.qdmf")

    s = add("dataset", "Labelled synthetic images of ring-oscillator states.")
    s.add_argument("--scenario", choices=["decapped", "intact"], default=None)
    s.add_argument("--states", type=_int_list, default=None, metavar="N,N,...")
    s.add_argument("--per-state", dest="per_state", type=_positive_int, default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--noise-floor", dest="noise_floor", type=float, default=None, help="T")
    s.add_argument("--per-ro-current", dest="per_ro_current", type=float, default=None)
    s.add_argument("--region", default=None)
    s.add_argument("--axis", type=int, choices=[1, 2, 3, 4], default=None)
    s.add_argument("--drift-rms", dest="drift_rms", type=float, default=None, help="T")
    s.add_argument("--rows", type=int, default=None)
    s.add_argument("--cols", type=int, default=None)
    s.add_argument("--pixel-size", dest="pixel_size", type=float, default=None)
    s.add_argument("--die-plan", dest="die_plan", default=None)
    out(s, "dataset", "dataset.qdmf")

    s = add("train", "Fit the PCA basis and linear SVM on the training split.")
    io(s, "train", "--in", dest="input", metavar="DATASET")
    s.add_argument("--bin", type=_positive_int, default=None)
    s.add_argument("--train-fraction", dest="train_fraction", type=float, default=None)
    s.add_argument("--split-seed", dest="split_seed", type=int, default=None)
    s.add_argument("--components", dest="n_components", type=_positive_int, default=None)
    s.add_argument("-C", dest="C", type=float, default=None, help="SVM regularization")
    s.add_argument("--score-unit", dest="score_unit", choices=["T", "uT", "nT", "pT"],
                   default=None)
    s.add_argument("--svm-tolerance", dest="svm_tolerance", type=float, default=None)
    s.add_argument("--standardize", action="store_const", const=True, default=None)
    out(s, "train", "model.qdmf")

    s = add("predict", "Predict chip states of a dataset's images.")
    io(s, "predict", "--model", dest="model", metavar="MODEL")
    io(s, "predict", "--in", dest="input", metavar="DATASET")
    s.add_argument("--subset", choices=["all", "test"], default=None)
    out(s, "predict", "predictions.json")

    s = add("evaluate", "Accuracy table and confusion matrix on the held-out split.")
    io(s, "evaluate", "--model", dest="model", metavar="MODEL")
    io(s, "evaluate", "--in", dest="input", metavar="DATASET")
    out(s, "evaluate", "report")

    s = add("render", "Render a map to PNG.")
    io(s, "render", "--in", dest="input", metavar="MAP")
    s.add_argument("--component", default=None, help="B_X, B_Y, B_Z, dBz or dT")
    s.add_argument("--colormap", choices=["diverging", "sequential"], default=None)
    s.add_argument("--range", type=_float_list(2), default=None, metavar="LO,HI")
    s.add_argument("--title", default=None)
    out(s, "render", "map.png")
    return p


def run(argv=None):
    """Execute one command; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args)
        out = COMMANDS[args.command](args, cfg)
        _log(args, f"wrote {out}")
        return 0
    except QDMError as exc:
        print(f"qdm {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, TypeError) as exc:
        print(f"qdm {args.command}: error: {exc}", file=sys.stderr)
        return UsageError.exit_code
    except OSError as exc:
        print(f"qdm {args.command}: error: {exc}", file=sys.stderr)
        return 3


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":  # pragma: no cover
    main()
