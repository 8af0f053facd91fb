#!/usr/bin/env python3
"""Time the numba kernels against their numpy forms and check they agree.

    python benchmarks/bench_kernels.py [--trials 2000000] [--n 10]
"""

import argparse
import time

import numpy as np

from dohpool import _accel, _kernels


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - start)
    return min(times), out


def report(name, numpy_time, numba_time):
    print(f"{name:<16} numpy {numpy_time * 1e3:9.2f} ms   numba {numba_time * 1e3:9.2f} ms   speedup {numpy_time / numba_time:6.1f}x")


def bench_threshold_hits(trials, n, repeat):
    u = np.random.default_rng(0).random((trials, n))
    p, m = 0.3, (n + 1) // 2
    _kernels.threshold_hits_numba(u[:10], p, m)  # compile outside the timing
    t_np, a = best_of(lambda: _kernels.threshold_hits_numpy(u, p, m), repeat)
    t_nb, b = best_of(lambda: _kernels.threshold_hits_numba(u, p, m), repeat)
    assert a == b, (a, b)
    report("threshold_hits", t_np, t_nb)


def bench_pool_counts(runs, n, repeat):
    rng = np.random.default_rng(1)
    lengths = rng.integers(-1, 8, size=(runs, n)).astype(np.int64)
    compromised = rng.random((runs, n)) < 0.3
    args = (lengths, compromised, n // 2, True)
    _kernels.pool_counts_numba(lengths[:10], compromised[:10], n // 2, True)
    t_np, a = best_of(lambda: _kernels.pool_counts_numpy(*args), repeat)
    t_nb, b = best_of(lambda: _kernels.pool_counts_numba(*args), repeat)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    report("pool_counts", t_np, t_nb)


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--trials", type=int, default=2_000_000)
    parser.add_argument("--n", type=int, default=10)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not installed; pip install numba")
    print(f"rows={args.trials:,} resolvers={args.n} (best of {args.repeat})")
    bench_threshold_hits(args.trials, args.n, args.repeat)
    bench_pool_counts(args.trials, args.n, args.repeat)


if __name__ == "__main__":
    main()
