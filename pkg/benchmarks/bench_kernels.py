"""Time the numba and numpy distance kernels on random data.

    python3 benchmarks/bench_kernels.py --rows 20000 --pool 1000 --dim 128
"""

import argparse
import time

import numpy as np

from semvocab import kernels


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=20000)
    ap.add_argument("--pool", type=int, default=1000)
    ap.add_argument("--dim", type=int, default=128)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    x = rng.normal(size=(args.rows, args.dim))
    pool = rng.normal(size=(args.pool, args.dim))
    assign = rng.integers(0, args.pool, args.rows)
    radius = np.full(args.rows, np.sqrt(2.0 * args.dim))
    kp, kn = pool[: args.pool // 2], pool[args.pool // 2:]

    cases = {
        "nearest_rows": lambda k: k.nearest_rows(x, pool),
        "cluster_sums": lambda k: k.cluster_sums(x, assign, args.pool),
        "count_within": lambda k: k.count_within(x, pool, radius),
        "filter_mask": lambda k: k.filter_mask(x, kp, kn, 1.0),
    }
    backends = {"numpy": kernels.numpy_kernels}
    if kernels.numba_kernels is not None:
        backends["numba"] = kernels.numba_kernels
    else:
        print("numba not installed; timing numpy only")

    print(f"rows={args.rows} pool={args.pool} dim={args.dim} best of {args.repeats}")
    print(f"{'kernel':<14}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}")
    for name, call in cases.items():
        res = {}
        for b, k in backends.items():
            call(k)  # warm-up, includes jit compilation
            res[b] = best_of(lambda: call(k), args.repeats)
        line = f"{name:<14}" + "".join(f"{res[b]:>11.4f}s" for b in backends)
        if "numba" in res:
            line += f"{res['numpy'] / res['numba']:>9.1f}x"
        print(line)


if __name__ == "__main__":
    main()
