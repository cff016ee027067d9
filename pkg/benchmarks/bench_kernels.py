"""Benchmark the numba-jitted kernels against the numpy/python fallbacks.

Usage: python benchmarks/bench_kernels.py [--quick]

The first numba timing includes nothing but steady-state calls: each kernel
is warmed up once before measurement so JIT compilation is excluded.
"""

import argparse
import time

import numpy as np

from tokpool import _kernels as kernels
from tokpool.pooling import PoolSpec, token_pool
from tokpool.transformer import TokenSet


def timeit(fn, repeats):
    fn()  # warmup (includes JIT compile on the numba path)
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - start) / repeats


def bench(quick=False):
    n, k, m = (197, 64, 384) if not quick else (64, 16, 64)
    draws = 1_000_000 if not quick else 50_000
    repeats = {"numba": 20, "numpy": 3 if not quick else 5}

    rng = np.random.default_rng(0)
    a = rng.normal(size=(n, m))
    b = rng.normal(size=(k, m))
    labels = rng.integers(0, k, size=n).astype(np.int64)
    labels[:k] = np.arange(k)
    d2 = ((a[:, None, :] - a[None, :, :]) ** 2).sum(axis=2)
    tokens = TokenSet(rng.normal(size=(n, m)))

    cases = {
        f"rng uniform fill ({draws})": lambda: kernels.fill_uniform(
            kernels.seed_state(1), draws
        ),
        f"rng normal fill ({draws})": lambda: kernels.fill_normal(
            kernels.seed_state(1), draws
        ),
        f"pairwise sq dists {n}x{k}x{m}": lambda: kernels.pairwise_sq_dists(a, b),
        f"medoid update n={n} k={k}": lambda: kernels.medoid_update(d2, labels, k),
        f"token_pool kmedoids n={n} k={k}": lambda: token_pool(
            tokens, PoolSpec("kmedoids", k, protect_first=False)
        ),
    }

    results = {}
    for backend in kernels.available_backends():
        prev = kernels.set_backend(backend)
        try:
            for name, fn in cases.items():
                reps = repeats[backend]
                results.setdefault(name, {})[backend] = timeit(fn, reps)
        finally:
            kernels.set_backend(prev)

    width = max(len(name) for name in cases)
    print(f"{'kernel':<{width}} {'numba':>12} {'numpy':>12} {'speedup':>9}")
    print("-" * (width + 36))
    for name, times in results.items():
        nb, np_ = times["numba"], times["numpy"]
        print(f"{name:<{width}} {nb * 1e3:>10.3f}ms {np_ * 1e3:>10.3f}ms {np_ / nb:>8.1f}x")

    # the integer streams must agree bit-for-bit between backends
    state_a, state_b = kernels.seed_state(7), kernels.seed_state(7)
    prev = kernels.set_backend("numba")
    ua = kernels.fill_u64(state_a, 10_000)
    kernels.set_backend("numpy")
    ub = kernels.fill_u64(state_b, 10_000)
    kernels.set_backend(prev)
    print(f"\nu64 streams bit-identical across backends: {bool((ua == ub).all())}")


if __name__ == "__main__":
    parser = argparse.ArgumentParser()
    parser.add_argument("--quick", action="store_true", help="small sizes, fast run")
    bench(parser.parse_args().quick)
