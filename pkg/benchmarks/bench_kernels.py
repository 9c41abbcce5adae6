"""Timing comparison: compiled kernels vs the numpy fallback.

Runs the two hot loops (factor-model SGD sweep, forest traversal) through both
backends on identically seeded workloads and prints a small table. The
numbers justify shipping the compiled extension; correctness parity between
the backends is covered by the test suite, not here.

Usage: python3 benchmarks/bench_kernels.py [--epochs N] [--queries N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from drlir.ann import build_forest
from drlir.kernels import HAVE_NATIVE, _pure

if HAVE_NATIVE:
    from drlir.kernels import _native


def bench_pmf(backend, epochs: int) -> float:
    rng = np.random.default_rng(0)
    n_users, n_items, m, n_obs = 943, 1682, 100, 80_000
    U = rng.normal(0.0, 0.05, size=(n_users, m))
    V = rng.normal(0.0, 0.05, size=(n_items, m))
    u_rows = rng.integers(0, n_users, size=n_obs).astype(np.int64)
    i_rows = rng.integers(0, n_items, size=n_obs).astype(np.int64)
    ratings = rng.integers(1, 6, size=n_obs).astype(np.float64)
    orders = [rng.permutation(n_obs).astype(np.int64) for _ in range(epochs)]

    t0 = time.perf_counter()
    for order in orders:
        backend.pmf_epoch(U, V, u_rows, i_rows, ratings, order, 0.01, 0.02, 0.02)
    return (time.perf_counter() - t0) / epochs


def bench_forest(backend, queries: int) -> float:
    rng = np.random.default_rng(1)
    items = rng.normal(size=(10_000, 100))
    forest = build_forest(items, n_trees=5, leaf_size=30, seed=0)
    qs = rng.normal(size=(queries, 100))

    t0 = time.perf_counter()
    for q in qs:
        backend.forest_collect(
            forest.roots,
            forest.node_left,
            forest.node_right,
            forest.node_plane,
            forest.leaf_start,
            forest.leaf_end,
            forest.planes,
            forest.plane_off,
            forest.leaf_items,
            np.ascontiguousarray(q),
            150,
            forest.num_items,
        )
    return (time.perf_counter() - t0) / queries


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--epochs", type=int, default=3, help="SGD sweeps per backend")
    parser.add_argument("--queries", type=int, default=2000, help="forest queries per backend")
    args = parser.parse_args()

    rows = []
    pmf_pure = bench_pmf(_pure, args.epochs)
    forest_pure = bench_forest(_pure, args.queries)
    rows.append(("pure", pmf_pure, forest_pure))
    if HAVE_NATIVE:
        pmf_nat = bench_pmf(_native, args.epochs)
        forest_nat = bench_forest(_native, args.queries)
        rows.append(("native", pmf_nat, forest_nat))

    print(f"{'backend':<8} {'sgd sweep (80k x m=100)':>26} {'forest query (10k items)':>28}")
    for name, sweep, q in rows:
        print(f"{name:<8} {sweep * 1e3:>22.1f} ms {q * 1e6:>24.1f} us")
    if HAVE_NATIVE:
        print(f"\nspeedup: sgd {pmf_pure / pmf_nat:.1f}x, forest query {forest_pure / forest_nat:.1f}x")
    else:
        print("\ncompiled backend not built; showing fallback only")


if __name__ == "__main__":
    main()
