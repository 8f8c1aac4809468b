import json
import os
import subprocess
import sys

import numpy as np
import pytest

from qdm import container
from qdm.cli import run
from qdm.report import parse_report_table

SMALL_SIM = ["--rows", "6", "--cols", "6", "--pixel-size", "1e-4", "--x0", "1e-3"]
SMALL_SET = ["--rows", "32", "--cols", "32", "--pixel-size", "9e-5"]


def ok(*argv):
    assert run([str(a) for a in argv]) == 0, argv


@pytest.fixture(scope="module")
def field_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("fieldrun")
    ok("simulate", "--n-ros", 200, *SMALL_SIM, "--with-temperature", "-o", d / "field.qdmf")
    ok("synth", "--in", d / "field.qdmf", "-o", d / "active.qdmf")
    ok("synth", "--in", d / "field.qdmf", "--idle", "-o", d / "idle.qdmf")
    ok("fit", "--in", d / "active.qdmf", "-o", d / "pa.qdmf")
    ok("fit", "--in", d / "idle.qdmf", "-o", d / "pi.qdmf")
    ok("reconstruct", "--active", d / "pa.qdmf", "--idle", d / "pi.qdmf", "-o", d / "map.qdmf")
    return d


def test_field_pipeline_recovers_simulation(field_run):
    truth = container.read(field_run / "field.qdmf")
    rec = container.read(field_run / "map.qdmf")
    assert np.max(np.abs(rec.stack() - truth.stack())) < 1e-9
    assert np.max(np.abs(rec.dT - 1.5)) < 1e-3


def test_sidecar_records_resolved_config(field_run):
    doc = json.loads((field_run / "pa.qdmf.json").read_text())
    cfg = doc["config"]
    assert cfg["subcommand"] == "fit" and cfg["max_iterations"] == 200
    assert cfg["input"].endswith("active.qdmf") and "workers" not in cfg


def test_filter_render_and_single_axis(field_run):
    d = field_run
    ok("filter", "--in", d / "map.qdmf", "--bin", 2, "--lowpass", 1.0, "-o", d / "f.qdmf")
    f = container.read(d / "f.qdmf")
    assert f.shape == (3, 3) and f.pixel_size == pytest.approx(2e-4)
    ok("filter", "--in", d / "map.qdmf", "--upward", 1e-4, "-o", d / "u.qdmf")
    ok("reconstruct", "--active", d / "pa.qdmf", "--idle", d / "pi.qdmf", "--axis", 2,
       "-o", d / "ax2.qdmf")
    assert container.read(d / "ax2.qdmf").axis == 2
    ok("render", "--in", d / "map.qdmf", "--component", "B_Z", "-o", d / "bz.png")
    assert (d / "bz.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    assert "range:" in (d / "bz.png.txt").read_text()


def test_rerun_is_byte_identical(field_run, tmp_path):
    d = field_run
    ok("synth", "--in", d / "field.qdmf", "--noise-sigma", 0.002, "--seed", 4,
       "-o", tmp_path / "a.qdmf")
    ok("synth", "--in", d / "field.qdmf", "--noise-sigma", 0.002, "--seed", 4,
       "-o", tmp_path / "b.qdmf", "--workers", 3)
    for suffix in ("", ".json"):
        assert (tmp_path / f"a.qdmf{suffix}").read_bytes() == \
            (tmp_path / f"b.qdmf{suffix}").read_bytes()
    ok("fit", "--in", tmp_path / "a.qdmf", "-o", tmp_path / "p1.qdmf", "--workers", 1)
    ok("fit", "--in", tmp_path / "a.qdmf", "-o", tmp_path / "p2.qdmf", "--workers", 4)
    assert (tmp_path / "p1.qdmf").read_bytes() == (tmp_path / "p2.qdmf").read_bytes()


def test_missing_input_exit_3(tmp_path, capsys):
    assert run(["fit", "--in", str(tmp_path / "missing.qdmf"), "-o", str(tmp_path / "o.qdmf")]) == 3
    assert "not found" in capsys.readouterr().err
    assert list(tmp_path.iterdir()) == []


def test_usage_errors_exit_2(tmp_path, capsys):
    assert run(["fit"]) == 2
    assert run(["synth", "--axis", "7"]) == 2
    assert run(["nonsense"]) == 2
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"max_iterations": 10, "bogus": 1}))
    assert run(["fit", "--config", str(cfg), "--in", "x"]) == 2
    assert "bogus" in capsys.readouterr().err


def test_numeric_failure_exit_4(field_run, tmp_path):
    code = run(["fit", "--in", str(field_run / "active.qdmf"), "--max-iterations", "1",
                "-o", str(tmp_path / "p.qdmf")])
    assert code == 4 and not (tmp_path / "p.qdmf").exists()


def test_config_file_then_flags(field_run, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"max_iterations": 150, "cost_tolerance": 1e-12,
                               "input": str(field_run / "idle.qdmf")}))
    ok("fit", "--config", cfg, "--max-iterations", 120, "-o", tmp_path / "p.qdmf")
    rec = json.loads((tmp_path / "p.qdmf.json").read_text())["config"]
    assert rec["max_iterations"] == 120 and rec["cost_tolerance"] == 1e-12


def test_help_exit_0(capsys):
    assert run(["train", "--help"]) == 0
    assert "usage" in capsys.readouterr().out


def test_console_script():
    r = subprocess.run([sys.executable, "-m", "qdm.cli", "--version"], capture_output=True,
                       text=True)
    assert r.returncode == 0 and r.stdout.startswith("qdm ")


def test_output_dir_env(field_run, tmp_path, monkeypatch):
    monkeypatch.setenv("QDM_OUTPUT_DIR", str(tmp_path))
    ok("render", "--in", field_run / "map.qdmf")
    assert (tmp_path / "map.png").exists()


@pytest.fixture(scope="module")
def classify_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("clsrun")
    ok("dataset", "--scenario", "decapped", "--states", "0,1,5,10,50,100,200", "--per-state", 40,
       "--seed", 7, *SMALL_SET, "-o", str(d) + os.sep)
    ok("train", "--in", d / "dataset.qdmf", "-o", d / "model.qdmf")
    ok("evaluate", "--model", d / "model.qdmf", "--in", d / "dataset.qdmf", "-o", d / "report")
    return d


def test_dataset_example_counts(classify_run):
    ds = container.read(classify_run / "dataset.qdmf")
    assert len(ds) == 280 and len(ds.idles) == 280
    assert sorted(set(ds.labels.tolist())) == [0, 1, 5, 10, 50, 100, 200]
    assert json.loads((classify_run / "dataset.qdmf.json").read_text())["seed"] == 7


def test_report_json_matches_text(classify_run):
    d = classify_run
    text = (d / "report.txt").read_text()
    summary = json.loads((d / "report.json").read_text())
    parsed = parse_report_table(text)
    assert parsed["states"] == summary["table"]["states"]
    assert parsed["accuracy"] == pytest.approx(summary["table"]["accuracy"], abs=5e-3)
    assert parsed["total"] == pytest.approx(summary["table"]["total"], abs=5e-3)
    assert len(summary["confusion"]["row_normalized"]) == 7


def test_predict_subsets(classify_run):
    d = classify_run
    ok("predict", "--model", d / "model.qdmf", "--in", d / "dataset.qdmf", "--subset", "test",
       "-o", d / "pred.json")
    doc = json.loads((d / "pred.json").read_text())
    assert len(doc["predicted"]) == 70 and doc["config"]["subset"] == "test"


def test_dataset_rerun_byte_identical(classify_run, tmp_path):
    ok("dataset", "--scenario", "decapped", "--states", "0,1,5,10,50,100,200", "--per-state", 40,
       "--seed", 7, *SMALL_SET, "-o", tmp_path / "again.qdmf", "--workers", 2)
    assert (tmp_path / "again.qdmf").read_bytes() == \
        (classify_run / "dataset.qdmf").read_bytes()
