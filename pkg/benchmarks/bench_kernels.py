"""Time the compiled kernels against the numpy fallback.

Usage::

    python3 benchmarks/bench_kernels.py [--n 1000] [--M 99] [--repeat 3]

Each row reports the best-of-``repeat`` wall time per backend and the
speedup of the compiled kernels. The pipeline row runs one QR/QR point
estimate on the simulation design with the selected backend swapped in.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from cfsf import _backend
from cfsf.design import RegressorSpec, first_stage_design, second_stage_design
from cfsf.first_stage import quantile_grid
from cfsf.numerics import _initial_basis
from cfsf.pipeline import EstimatorConfig, estimate
from cfsf.simulate import TriangularDesign, generate


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(n, M, seed):
    table = generate(TriangularDesign(), n, seed)
    spec = RegressorSpec().fitted(table.x, table.z1, table.z)
    rng = np.random.default_rng(seed)
    R = np.ascontiguousarray(first_stage_design(table.z, spec))
    taus = quantile_grid(M, 0.01)
    W = np.ascontiguousarray(second_stage_design(table.x, table.z1, rng.uniform(0.01, 0.99, n), spec))
    w = np.ones(n)
    basis = _initial_basis(W)
    P = rng.normal(size=(M, R.shape[1]))
    B = rng.normal(size=(M, W.shape[1]))
    grid = np.linspace(-3.0, 3.0, 599)
    xs = rng.normal(size=n)

    def run_pipeline():
        estimate(table, EstimatorConfig(M=M, S=599))

    return {
        "qr_path": lambda k: k.qr_path(W, table.y, w, taus, basis, 20 * n, 1e-10),
        "weighted_count_below": lambda k: k.weighted_count_below(W, B, w, grid, True),
        "count_rows_below": lambda k: k.count_rows_below(R, P, xs),
        "pipeline (QR/QR)": lambda k: run_pipeline(),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--M", type=int, default=99)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    names = _backend.available()
    saved = _backend.kernels
    print(f"n={args.n} M={args.M} repeat={args.repeat} backends={names}")
    print(f"{'kernel':<24}" + "".join(f"{b:>12}" for b in names) + f"{'speedup':>10}")
    try:
        for label, fn in cases(args.n, args.M, args.seed).items():
            row = {}
            for b in names:
                _backend.kernels = _backend.get(b)
                row[b] = best_of(lambda: fn(_backend.kernels), args.repeat)
            speed = row["python"] / row["compiled"] if "compiled" in row else float("nan")
            print(f"{label:<24}" + "".join(f"{row[b]:>11.4f}s" for b in names) + f"{speed:>9.1f}x")
    finally:
        _backend.kernels = saved


if __name__ == "__main__":
    main()
