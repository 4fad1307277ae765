"""Compare the compiled core with the NumPy fallback.

Usage: python3 benchmarks/bench_core.py [--repeat N] [--trials N]

Times the kernels that dominate the experiments, checks that both backends
agree, then runs a small Monte Carlo experiment under each backend in a
subprocess (the backend is fixed at import).
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from quantctl import _pycore
from quantctl.density import from_gaussian

try:
    from quantctl import _core
except ImportError:
    _core = None

MC_SNIPPET = """
import time, warnings
warnings.simplefilter("ignore")
from quantctl._backend import BACKEND
from quantctl.control import SystemSpec
from quantctl.density import from_gaussian
from quantctl.sim import ExperimentConfig, run_monte_carlo
g = from_gaussian(0, 1, tail_mass=1e-9, points=256)
spec = SystemSpec(1.2, 30, 1.0, 0.0, 1, g, tail_mass=1e-9, max_points=1024)
t = time.perf_counter()
r = run_monte_carlo(ExperimentConfig(spec, "greedy", {trials}, 1))
print(BACKEND, time.perf_counter() - t, repr(r.steady_state))
"""


def cases():
    g = from_gaussian(0.0, 1.0, points=4096)
    w = from_gaussian(0.0, 1.0, tail_mass=1e-9, points=256)
    v, lo, st = g.values, g.lo, g.step
    bounds = np.linspace(lo, g.hi, 9)
    return {
        "cell_stats(8 cells, 4096 pts)": lambda m: m.cell_stats(v, lo, st, bounds),
        "lloyd(4 cells, 4096 pts)": lambda m: m.lloyd(v, lo, st, np.linspace(lo, g.hi, 5), 1e-12, 10_000, False)[:6],
        "design(2 cells, 256 pts)": lambda m: m.design(w.values, w.lo, w.step, 2, 1e-12, 10_000),
        "design(3 cells, 256 pts)": lambda m: m.design(w.values, w.lo, w.step, 3, 1e-12, 10_000),
        "convolve(256 x 256)": lambda m: m.convolve(w.values, w.lo, w.values, w.lo, w.step, 1e-9, 1024),
        "advance(one filter step)": lambda m: m.advance(
            w.values, w.lo, w.step, 0.0, w.hi, 1.2, -0.9, w.values, w.lo, w.step, 1e-9, 1024),
    }


def _agree(a, b):
    if isinstance(a, tuple):
        return all(_agree(x, y) for x, y in zip(a, b))
    if isinstance(a, np.ndarray):
        return a.shape == b.shape and np.allclose(a, b, rtol=1e-9, atol=1e-12)
    if isinstance(a, float):
        return np.isclose(a, b, rtol=1e-9, atol=1e-12)
    return a == b


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--trials", type=int, default=2000)
    args = ap.parse_args(argv)
    if _core is None:
        print("compiled core not available; nothing to compare", file=sys.stderr)
        return 1
    print(f"{'kernel':34s} {'python [ms]':>12s} {'compiled [ms]':>14s} {'speedup':>8s}  agree")
    for name, fn in cases().items():
        tp = min(timeit.repeat(lambda: fn(_pycore), number=1, repeat=args.repeat)) * 1e3
        tc = min(timeit.repeat(lambda: fn(_core), number=1, repeat=args.repeat)) * 1e3
        ok = _agree(fn(_pycore), fn(_core))
        print(f"{name:34s} {tp:12.3f} {tc:14.3f} {tp / tc:8.1f}  {ok}")
    print(f"\nMonte Carlo, greedy, T=30, {args.trials} trials")
    for backend in ("python", "compiled"):
        env = dict(os.environ, QUANTCTL_BACKEND=backend)
        out = subprocess.run([sys.executable, "-c", MC_SNIPPET.format(trials=args.trials)],
                             env=env, capture_output=True, text=True, check=True).stdout.split()
        print(f"  {out[0]:9s} {float(out[1]):8.2f} s   steady-state J = {out[2]}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
