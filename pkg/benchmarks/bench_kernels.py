"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--pixels 500] [--repeat 3]
"""
import argparse
import time

import numpy as np

from qdm import _backend
from qdm.fitting import fit_cube
from qdm.forward import (ChipState, DiePlan, PlaneGrid, biot_savart_plane,
                         ro_current_layout)
from qdm.spectrum import NoiseSpec, synthesize_cube


def best_of(fn, repeat):
    times, out = [], None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pixels", type=int, default=500)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    backends = ["python"]
    try:
        _backend.get("cython")
        backends.insert(0, "cython")
    except ImportError:
        print("compiled extension unavailable; timing the fallback only")

    side = int(np.ceil(np.sqrt(args.pixels)))
    rng = np.random.default_rng(0)
    cube = synthesize_cube(rng.normal(0, 5e-6, (side, side, 3)), noise=NoiseSpec(0.002, 1))
    layout = ro_current_layout(DiePlan(), ChipState("R1", 200))
    grid = PlaneGrid(200, 200, 5e-6, x0=1e-3)

    rows, results = [], {}
    for name in backends:
        t_fit, pm = best_of(lambda: fit_cube(cube, backend=name), args.repeat)
        t_bs, bmap = best_of(lambda: biot_savart_plane(layout, 1e-5, grid, backend=name),
                             args.repeat)
        results[name] = (pm, bmap)
        rows.append((name, t_fit, t_bs))

    print(f"{'backend':<8} {'LM fit (' + str(side * side) + ' px)':>18} "
          f"{'Biot-Savart (' + str(len(layout)) + ' seg x 40k pt)':>30}")
    for name, t_fit, t_bs in rows:
        print(f"{name:<8} {t_fit:>17.3f}s {t_bs:>29.3f}s")
    if len(rows) == 2:
        print(f"speed-up {rows[1][1] / rows[0][1]:.1f}x (fit), {rows[1][2] / rows[0][2]:.1f}x "
              f"(field)")
        (pa, ba), (pb, bb) = results["cython"], results["python"]
        print(f"max |center difference| {np.nanmax(np.abs(pa.centers - pb.centers)):.2e} MHz, "
              f"max |field difference| {np.max(np.abs(ba.stack() - bb.stack())):.2e} T")


if __name__ == "__main__":
    main()
