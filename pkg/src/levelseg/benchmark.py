"""Benchmark the compiled distance-transform kernels against pure Python.

Run with ``python -m levelseg.benchmark``. Times the exact signed distance
transform on random blob masks at a few grid sizes, once through the numba
path and once through the uncompiled fallback, and reports the speedup.
"""

import time

import numpy as np

from ._kernels import BIG, edt_squared_compiled, edt_squared_python
from .data import synth_generate
from .levelset import boundary_pixels


def _time(fn, costs, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        for c in costs:
            fn(c, 1.0, 1.0)
        best = min(best, (time.perf_counter() - t0) / len(costs))
    return best


def run(sizes=(64, 128, 256), n_masks=8, repeats=3):
    print(f"{'size':>6}  {'python (ms)':>12}  {'numba (ms)':>11}  {'speedup':>8}")
    for size in sizes:
        masks = [s.label for s in synth_generate(99, n_masks, size=max(size, 64))]
        masks = [m[:size, :size] for m in masks]
        costs = [np.where(boundary_pixels(m), 0.0, BIG) for m in masks]
        t_py = _time(edt_squared_python, costs, repeats=1)
        if edt_squared_compiled is not None:
            edt_squared_compiled(costs[0], 1.0, 1.0)  # trigger compilation
            t_jit = _time(edt_squared_compiled, costs, repeats)
            for c in costs:
                a = edt_squared_python(c, 1.0, 1.0)
                b = edt_squared_compiled(c, 1.0, 1.0)
                assert np.abs(a - b).max() < 1e-9, "kernel paths disagree"
            print(f"{size:>6}  {t_py * 1e3:>12.2f}  {t_jit * 1e3:>11.3f}"
                  f"  {t_py / t_jit:>7.1f}x")
        else:
            print(f"{size:>6}  {t_py * 1e3:>12.2f}  {'disabled':>11}  {'-':>8}")


if __name__ == "__main__":
    run()
