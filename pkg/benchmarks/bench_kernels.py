"""Time the compiled kernels against the pure-Python fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from nuggetbank import _kernels_py as py

try:
    from nuggetbank import _kernels as compiled
except ImportError:  # extension not built
    compiled = None


def cases(rng):
    x = rng.integers(0, 20, size=300).astype(np.float64)
    y = rng.normal(size=300)
    w = rng.uniform(0.01, 1.0, size=300)
    ranks = rng.integers(1, 60, size=25).astype(np.int64)
    X = np.ascontiguousarray(rng.normal(size=(200, 19)))
    labels = np.where(X[:, 2] + X[:, 12] + rng.normal(size=200) > 0, 1.0, -1.0)
    return {
        "kendall_pair_counts (n=300)": lambda k: k.kendall_pair_counts(x, y),
        "weighted_pair_sums (n=300)": lambda k: k.weighted_pair_sums(x, y, w),
        "signed_rank_null_counts (n=25)": lambda k: k.signed_rank_null_counts(ranks),
        "svm_dual_cd (200x19, 50 epochs)": lambda k: k.svm_dual_cd(X, labels, 1.0, 50, 0.0, 0),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if compiled is None:
        print("compiled extension not built; only the fallback is timed")
    print(f"{'kernel':34s} {'python s':>10s} {'compiled s':>11s} {'speedup':>8s}")
    for name, call in cases(np.random.default_rng(0)).items():
        t_py = min(timeit.repeat(lambda: call(py), number=1, repeat=args.repeat))
        if compiled is None:
            print(f"{name:34s} {t_py:10.6f} {'-':>11s} {'-':>8s}")
            continue
        t_c = min(timeit.repeat(lambda: call(compiled), number=1, repeat=args.repeat))
        print(f"{name:34s} {t_py:10.6f} {t_c:11.6f} {t_py / t_c:7.0f}x")


if __name__ == "__main__":
    main()
