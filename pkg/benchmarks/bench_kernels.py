"""Time the compiled ring kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py --points 2000 --rings 600 --repeat 3
"""

import argparse
import time

import numpy as np

from blowup import _ring_py

try:
    from blowup import _ring
except ImportError:
    _ring = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=2000)
    ap.add_argument("--rings", type=int, default=600)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    a = rng.uniform(-1, 1, args.points)
    rho = rng.uniform(0, 1, args.points)
    th = rng.uniform(0, np.pi, args.rings)
    b, r = 3 * np.cos(th), 3 * np.sin(th)
    q = rng.standard_normal(args.rings)

    print(f"{'n':>2} {'python [s]':>11} {'compiled [s]':>13} {'speedup':>8} {'max rel diff':>13}")
    for n in (3, 4, 5, 6):
        tp, vp = best_of(lambda: _ring_py.ring_apply(a, rho, b, r, q, n), args.repeat)
        if _ring is None:
            print(f"{n:>2} {tp:11.4f} {'n/a':>13}")
            continue
        tc, vc = best_of(lambda: _ring.ring_apply(a, rho, b, r, q, n), args.repeat)
        diff = max(float(np.max(np.abs(x - y)) / np.max(np.abs(x))) for x, y in zip(vp, vc))
        print(f"{n:>2} {tp:11.4f} {tc:13.4f} {tp / tc:8.1f} {diff:13.2e}")


if __name__ == "__main__":
    main()
