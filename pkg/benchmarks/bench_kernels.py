"""Benchmark the compiled pairwise-kernel core against the NumPy fallback.

Usage: python benchmarks/bench_kernels.py [--lags P]

Times sqdist_and_dot (the O(n^2 p) pass under every kernel matrix) for both
backends across training-set sizes, and reports a full likelihood-gradient
evaluation with whichever backend is active.
"""

import argparse
import timeit

import numpy as np

from mimogpr import gpr
from mimogpr._core import BACKEND, _kernels_py

try:
    from mimogpr._core import _kernels_cy
except ImportError:
    _kernels_cy = None


def time_call(fn, *args, repeat=5):
    number = 1
    # grow the batch until one run takes at least ~10ms
    while timeit.timeit(lambda: fn(*args), number=number) < 0.01:
        number *= 4
    best = min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeat))
    return best / number


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--lags", type=int, default=12, help="input dimension p (default 12)")
    args = parser.parse_args()
    p = args.lags

    rng = np.random.default_rng(0)
    print(f"active backend: {BACKEND}")
    print(f"\nsqdist_and_dot, p = {p}")
    header = f"{'shape':>10} {'numpy':>12} {'cython':>12} {'speedup':>9}"
    print(header)
    print("-" * len(header))
    shapes = [
        (1, 84), (1, 156), (4, 156),  # one-step forecast workloads
        (50, 50), (100, 100), (200, 200), (400, 400),  # fitting workloads
    ]
    for m, n in shapes:
        a = rng.normal(size=(m, p))
        b = rng.normal(size=(n, p))
        t_py = time_call(_kernels_py.sqdist_and_dot, a, b)
        if _kernels_cy is not None:
            t_cy = time_call(_kernels_cy.sqdist_and_dot, a, b)
            print(f"{f'{m}x{n}':>10} {t_py * 1e6:>10.1f}us {t_cy * 1e6:>10.1f}us {t_py / t_cy:>8.2f}x")
        else:
            print(f"{f'{m}x{n}':>10} {t_py * 1e6:>10.1f}us {'n/a':>12} {'n/a':>9}")

    print(f"\nfull likelihood gradient (n=150, p={p}), active backend")
    x = rng.normal(size=(150, p))
    theta = gpr.KernelHyperparams(nu=1.0, lam=2.0, gamma=0.05, kappa=0.1, sigma=0.3)
    y = rng.normal(size=150)
    t = time_call(gpr.lml_gradient, x, y, theta)
    print(f"  {t * 1e3:.2f} ms per evaluation")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
