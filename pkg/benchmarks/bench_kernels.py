"""Time the compiled kernels against the NumPy fallback.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 20]

Prints one row per kernel with the best-of-``repeat`` wall time for each
backend and the speedup. Inputs are sized like the real workloads: a 190-record
tau, a 512-pair training batch, and a 32-row RL batch over 18 decisions.
"""

import argparse
import timeit

import numpy as np

from roisearch import _kernels_py as py

try:
    from roisearch import _kernels as cy
except ImportError:
    cy = None


def workloads(rng: np.random.Generator) -> dict:
    n = 190
    a, b = rng.normal(size=n), rng.normal(size=n)
    pred, label = rng.normal(size=n), rng.normal(size=n)
    ii = rng.integers(0, n, 512)
    jj = (ii + rng.integers(1, n, 512)) % n
    offsets = np.arange(0, 36, 2, dtype=np.int64)
    probs = np.full(36, 0.5)
    idx = rng.integers(0, 2, (32, 18)).astype(np.int64)
    adv = rng.normal(size=32)
    return {
        "pair_counts(n=190)": lambda m: m.pair_counts(a, b),
        "hinge_pairs(512 pairs)": lambda m: m.hinge_pairs(pred, label, ii, jj, 0.001),
        "score_grad(32x18)": lambda m: m.score_grad(idx, adv, probs, offsets, 1.0),
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--number", type=int, default=200)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<26}{'python (us)':>14}{'cython (us)':>14}{'speedup':>10}")
    for name, fn in workloads(rng).items():
        t_py = min(timeit.repeat(lambda: fn(py), number=args.number, repeat=args.repeat)) / args.number
        if cy is None:
            print(f"{name:<26}{t_py * 1e6:>14.1f}{'n/a':>14}{'':>10}")
            continue
        t_cy = min(timeit.repeat(lambda: fn(cy), number=args.number, repeat=args.repeat)) / args.number
        print(f"{name:<26}{t_py * 1e6:>14.1f}{t_cy * 1e6:>14.1f}{t_py / t_cy:>9.1f}x")


if __name__ == "__main__":
    main()
