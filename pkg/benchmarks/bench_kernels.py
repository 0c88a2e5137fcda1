"""Compiled core vs pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--targets 8] [--order 2] [--repeat 3]

Times the parametrix series and the stochastic flow on both backends and
reports the largest relative disagreement between them.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from langevin_kernels import _backend
from langevin_kernels.brownian import BrownianPath
from langevin_kernels.coefficients import builtin_family
from langevin_kernels.flow_engine import _em_flow_numpy
from langevin_kernels.parametrix_solver import ParametrixConfig, fundamental_solution_batch


def best_of(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_parametrix(n_targets, order, repeat):
    c = builtin_family("sin-perturbed-a", {"amp": 0.05})
    rng = np.random.default_rng(1)
    x = rng.uniform(-0.5, 0.5, n_targets)
    v = rng.uniform(-0.5, 0.5, n_targets)
    runs = {}
    for backend in ("compiled", "python"):
        cfg = ParametrixConfig(series_order=order, backend=backend)
        runs[backend] = best_of(lambda: fundamental_solution_batch(c, cfg, 0.5, x, v, 0.0, 0.0, 0.0), repeat)
    (tc, oc), (tp, op) = runs["compiled"], runs["python"]
    err = max(float(np.max(np.abs(a - b) / (np.abs(b) + 1e-300))) for a, b in zip(oc, op))
    return tc, tp, err


def bench_flow(n_points, repeat):
    c = builtin_family("flattening-sigma", {"sigma0": 0.3, "sigma1": 0.2})
    w = BrownianPath.sample(3, 1.0, 1e-3)
    g = np.linspace(-5, 5, n_points)
    X, V = np.meshgrid(g, g, indexing="ij")
    times = w.times
    tc, oc = best_of(lambda: _backend.em_flow(c.flow_tag, times, w.increments, X, V), repeat)
    tp, op = best_of(lambda: _em_flow_numpy(c, times, w.increments, X, V), repeat)
    err = max(float(np.max(np.abs(oc[k] - op[k]))) for k in oc)
    return tc, tp, err


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    p.add_argument("--targets", type=int, default=8)
    p.add_argument("--order", type=int, default=2)
    p.add_argument("--points", type=int, default=41)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)
    if not _backend.HAVE_COMPILED:
        raise SystemExit("compiled extension not built; run pip install -e . --no-build-isolation")
    tc, tp, err = bench_parametrix(args.targets, args.order, args.repeat)
    print(f"parametrix N={args.order}, {args.targets} targets: compiled {tc:.3f}s  python {tp:.3f}s  "
          f"speedup {tp / tc:.1f}x  max rel diff {err:.2e}")
    tc, tp, err = bench_flow(args.points, args.repeat)
    print(f"flow {args.points}x{args.points} points, 1000 steps: compiled {tc:.3f}s  python {tp:.3f}s  "
          f"speedup {tp / tc:.1f}x  max abs diff {err:.2e}")


if __name__ == "__main__":
    main()
