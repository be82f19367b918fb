"""Time the numba and numpy kernel backends on the same inputs and check they agree.

    python benchmarks/bench_kernels.py [--n 4000] [--d 16] [--repeat 3]

The first numba call per kernel compiles (or loads the on-disk cache); it is
run once as warm-up and excluded from the timings.
"""

import argparse
import time

import numpy as np

from liger import kernels


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def cases(n, d, rng):
    X = rng.random((n, d))
    S = np.ascontiguousarray(X[: n // 4])
    C = np.ascontiguousarray(X[:16])
    vals = rng.integers(-1, 2, (n, 3)).astype(np.int8)
    labels = np.where(rng.random(n) < 0.5, 1, -1).astype(np.int8)
    support = rng.random((n, 3)) < 0.3
    grid = np.array([0.1, 0.3, 0.6])
    exclude = np.full(n, -1, dtype=np.int64)
    return {
        "nearest_in_support": lambda k: k.nearest_in_support(X, S, exclude, False),
        "assign_nearest": lambda k: k.assign_nearest(X, C),
        "radius_counts": lambda k: k.radius_counts(X, vals, grid, False),
        "knn_indices": lambda k: k.knn_indices(X, 10, False),
        "witness_distance": lambda k: k.witness_distance(X, labels, support, False),
        "max_pairwise_distance": lambda k: k.max_pairwise_distance(X, False),
    }


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    a, b = np.asarray(a), np.asarray(b)
    if a.dtype.kind == "f":
        return bool(np.allclose(a, b, rtol=1e-10, atol=1e-12))
    return bool(np.array_equal(a, b))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=4000)
    ap.add_argument("--d", type=int, default=16)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    backends = {"numpy": kernels.get_backend("numpy")}
    try:
        backends["numba"] = kernels.get_backend("numba")
    except ImportError:
        print("numba not importable; timing numpy only")

    print(f"n={args.n} d={args.d} repeat={args.repeat}")
    print(f"{'kernel':<24}" + "".join(f"{name:>12}" for name in backends) + f"{'speedup':>10}{'agree':>8}")
    disagree = []
    for name, fn in cases(args.n, args.d, np.random.default_rng(args.seed)).items():
        times, outs = {}, {}
        for bname, mod in backends.items():
            fn(mod)  # warm-up / compile
            times[bname], outs[bname] = best_of(lambda: fn(mod), args.repeat)
        row = f"{name:<24}" + "".join(f"{times[b]:>11.4f}s" for b in backends)
        if "numba" in backends:
            ok = same(outs["numpy"], outs["numba"])
            row += f"{times['numpy'] / times['numba']:>9.1f}x{str(ok):>8}"
            if not ok:
                disagree.append(name)
        print(row)
    return 1 if disagree else 0


if __name__ == "__main__":
    raise SystemExit(main())
