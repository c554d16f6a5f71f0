"""Compare the compiled and numpy cores on system assembly and model evaluation.

    python benchmarks/bench_core.py [--n 400] [--d 8] [--m 10000] [--repeat 3]

Reports best-of-``repeat`` wall time per backend and the largest relative
difference between their outputs.
"""

import argparse
import time

import numpy as np

from kexpfam._backend import get_core
from kexpfam.kernels import KernelSpec


def best_time(fn, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def rel_diff(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), 1e-300))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=400)
    ap.add_argument("--d", type=int, default=8)
    ap.add_argument("--m", type=int, default=10000, help="evaluation points")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    X = rng.standard_normal((args.n, args.d))
    Z = rng.standard_normal((args.m, args.d))
    W = rng.standard_normal((args.n, args.d))
    params = KernelSpec.gaussian_poly2(2.0).core_params()

    cores = {"python": get_core("python")}
    try:
        cores["cython"] = get_core("cython")
    except ImportError:
        print("compiled extension not built; timing the numpy core only")

    results = {}
    for name, core in cores.items():
        tp, pair = best_time(lambda: core.pair_terms(X, *params), args.repeat)
        tm, model = best_time(lambda: core.model_terms(Z, X, W, 0.3, *params), args.repeat)
        results[name] = (tp, tm, pair, model)

    print(f"n={args.n} d={args.d} m={args.m} (best of {args.repeat})")
    print(f"{'backend':<8} {'pair_terms [s]':>15} {'model_terms [s]':>16}")
    for name, (tp, tm, _, _) in results.items():
        print(f"{name:<8} {tp:>15.4f} {tm:>16.4f}")
    if len(results) == 2:
        py, cy = results["python"], results["cython"]
        print(f"speedup  {py[0] / cy[0]:>15.1f}x {py[1] / cy[1]:>15.1f}x")
        diff = max(rel_diff(a, b) for a, b in zip(py[2] + py[3], cy[2] + cy[3]))
        print(f"max relative difference between backends: {diff:.3e}")


if __name__ == "__main__":
    main()
