"""Time the numba kernels against their numpy counterparts.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each kernel is run once beforehand so JIT compilation is not timed, and the
two outputs are compared before timing.
"""
import argparse
import time

import numpy as np

from sysid import _kernels
from sysid.complexity import eta_layout
from sysid.data import full_family


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases():
    rng = np.random.default_rng(0)
    n, p, trials = 4, 160, 2000
    A = 0.44 * np.array([[1, 0, 0, 1], [0, 1, 0, 1], [1, 0, 1, 0], [1, 0, 1, 1.0]])
    a = np.zeros((trials, n))
    x1 = rng.uniform(-1, 1, (trials, n))
    f = rng.uniform(-1, 1, (trials, p, n))
    yield ("propagate 2000x160x4",
           lambda: _kernels.propagate_numba(A, a, x1, f, 1e150),
           lambda: _kernels.propagate_numpy(A, a, x1, f, 1e150))

    lay = eta_layout(full_family(1, 12), 1)
    args = (lay.seg, lay.pm, lay.pq, lay.idx, 0.3, 0.1, 0.4, 0.05)
    yield (f"scalar_cov {lay.seg.shape[0]}x{lay.seg.shape[0]}",
           lambda: _kernels.scalar_cov_numba(*args),
           lambda: _kernels.scalar_cov_numpy(*args))

    tags = full_family(1, 40).tags()
    ms = np.array([t[0] for t in tags], dtype=np.int64)
    qs = np.array([t[1] for t in tags], dtype=np.int64)
    yield (f"loading_gram {len(tags)} pairs",
           lambda: _kernels.loading_gram_numba(ms, qs, 40),
           lambda: _kernels.loading_gram_numpy(ms, qs, 40))


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _kernels._HAVE_NUMBA:
        print("numba is not installed; nothing to compare")
        return
    print(f"{'kernel':<28}{'numba [ms]':>12}{'numpy [ms]':>12}{'speedup':>10}")
    for name, fast, slow in cases():
        r1, r2 = fast(), slow()
        r1 = r1[0] if isinstance(r1, tuple) else r1
        r2 = r2[0] if isinstance(r2, tuple) else r2
        assert np.allclose(r1, r2, rtol=1e-12, atol=1e-12), name
        t_fast = best_of(fast, args.repeat)
        t_slow = best_of(slow, args.repeat)
        print(f"{name:<28}{1e3 * t_fast:>12.3f}{1e3 * t_slow:>12.3f}{t_slow / t_fast:>10.1f}")


if __name__ == "__main__":
    main()
