import importlib.util
import os

BENCH = os.path.join(os.path.dirname(__file__), os.pardir, "benchmarks", "bench_kernels.py")


def test_benchmark_runs(capsys):
    spec = importlib.util.spec_from_file_location("bench_kernels", BENCH)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    mod.main(["--pixels", "4", "--repeat", "1"])
    out = capsys.readouterr().out
    assert "python" in out and "LM fit" in out
