#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Times the three hot paths of a solve/evaluate cycle at a configurable
problem size: Gram-matrix assembly (fit), the Bellman statistics sweep
(one value-iteration pass), and batched dose selection (closed-loop
stepping).  The numba functions are warmed once so JIT compilation does
not pollute the timings.

Usage:
    python3 benchmarks/bench_backends.py --resolution 5 --clusters 10 --repeat 3
"""

import argparse
import time

import numpy as np

from chemodp.backends import get_impls
from chemodp.model import CostParams
from chemodp.regressor import GridKernel, dose_coefficients
from chemodp.solver import build_grid, grid_stage_costs, successor_states
from chemodp.uncertainty import UncertaintyModel, build_clusters


def _time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--resolution", type=int, default=5)
    ap.add_argument("--clusters", type=int, default=10)
    ap.add_argument("--samples", type=int, default=2000)
    ap.add_argument("--batch", type=int, default=4000,
                    help="states per dose-selection call")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    grid = build_grid(args.resolution)
    clusters = build_clusters(UncertaintyModel(
        sample_count=args.samples, cluster_count=args.clusters, seed=0))
    gk = GridKernel(grid.z)
    model = gk.fit(grid_stage_costs(grid, CostParams()))
    nxt = successor_states(grid, clusters, tau=0.25, h=20.2)
    state_centers, coef = dose_coefficients(model, grid.dose_set.encodings)
    x_batch = np.random.default_rng(1).uniform(0, 1, size=(args.batch, 4))

    cases = {
        "kernel_matrix": lambda impl: impl["kernel_matrix"](grid.z, grid.z, gk.bandwidth),
        "bellman_stats": lambda impl: impl["bellman_stats"](
            nxt, state_centers, coef, model.beta0, model.bandwidth,
            clusters.weights, 0.1),
        "dose_argmin": lambda impl: impl["dose_argmin"](
            x_batch, state_centers, coef, model.beta0, model.bandwidth),
    }

    print(f"grid points: {grid.n_points}, clusters: {len(clusters)}, "
          f"batch: {args.batch}, best of {args.repeat}")
    header = f"{'kernel':<16}{'numpy (s)':>12}{'numba (s)':>12}{'speedup':>10}"
    print(header)
    print("-" * len(header))
    tables = {name: get_impls(name) for name in ("numpy", "numba")}
    for case_name, runner in cases.items():
        runner(tables["numba"])  # JIT warm-up
        t_np = _time(lambda: runner(tables["numpy"]), args.repeat)
        t_nb = _time(lambda: runner(tables["numba"]), args.repeat)
        print(f"{case_name:<16}{t_np:>12.4f}{t_nb:>12.4f}{t_np / t_nb:>10.2f}x")


if __name__ == "__main__":
    main()
