"""Time the numba kernels against the pure-numpy fallback.

Runs the hot kernels (row-wise ADMM, masked loss, column scales) and one full
solver epoch on a MovieLens-sized synthetic matrix, then prints a table of
median wall times and the speedup. Usage::

    python benchmarks/bench_backends.py [--rows 943] [--cols 1152] [--rate 0.09] [--repeat 5]
"""
import argparse
import statistics
import time

import numpy as np

from etree import kernels
from etree.data import ObservedMatrix
from etree.model import Hyperparams, TreeSpec
from etree.nmf import init_factors
from etree.solver import init_model, run_epoch


def make_problem(n, m, rate, rank, seed=0):
    rng = np.random.default_rng(seed)
    A = np.abs(rng.standard_normal((n, rank)))
    B = np.abs(rng.standard_normal((m, rank)))
    dense = A @ B.T + 0.1 * rng.standard_normal((n, m))
    mask = rng.random((n, m)) < rate
    mask[np.arange(n), rng.integers(0, m, n)] = True
    mask[rng.integers(0, n, m), np.arange(m)] = True
    return ObservedMatrix.from_dense(dense, mask)


def median_time(fn, repeat):
    fn()  # warm-up (includes JIT compilation on the numba path)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def cases(X, rank):
    A, B = init_factors(X, rank, 0)
    d = np.ones(X.n_cols)
    U = np.zeros_like(A)
    extra = np.zeros_like(A)
    coef = d[X.cols]
    hp = Hyperparams(rank=rank, lam=0.1, mu=1.0)
    model = init_model(X, hp, TreeSpec((X.n_cols, 40, 10)), A, B)
    return {
        "admm_rows (K=5)": lambda: kernels.admm_rows(X.row_ptr, X.cols, coef, X.vals, B, A, U, extra, 1.1, 1.0, 5, 1e-4),
        "masked_sse": lambda: kernels.masked_sse(X.rows, X.cols, X.vals, A, B, d),
        "column_scales": lambda: kernels.column_scales(X.col_ptr, X.csc_rows, X.csc_vals, A, B, d),
        "solver epoch": lambda: run_epoch(X, model.copy(), hp),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=943)
    ap.add_argument("--cols", type=int, default=1152)
    ap.add_argument("--rate", type=float, default=0.09)
    ap.add_argument("--rank", type=int, default=10)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    X = make_problem(args.rows, args.cols, args.rate, args.rank)
    print(f"{X.n_rows} x {X.n_cols}, {X.nnz} observed entries, rank {args.rank}")
    results = {}
    for name in ("numba", "numpy"):
        with kernels.use_backend(name):
            for case, fn in cases(X, args.rank).items():
                results[(case, name)] = median_time(fn, args.repeat)
    print(f"{'kernel':<18}{'numba [ms]':>12}{'numpy [ms]':>12}{'speedup':>10}")
    for case in cases(X, args.rank):
        fast, slow = results[(case, "numba")], results[(case, "numpy")]
        print(f"{case:<18}{1e3 * fast:>12.2f}{1e3 * slow:>12.2f}{slow / fast:>9.1f}x")


if __name__ == "__main__":
    main()
