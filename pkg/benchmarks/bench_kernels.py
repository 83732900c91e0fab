"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one line per kernel with the best wall time of each backend, the
speedup, and the largest absolute difference between their outputs.
"""

import argparse
import timeit

import numpy as np

from dptune import _kernels_py, kdist

try:
    from dptune import _ckernels
except ImportError:
    _ckernels = None


def cases():
    rng = np.random.default_rng(0)
    q = np.linspace(1e-6, 1.0, 2001)
    orders = np.array([1.5, 2.0, 4.0, 8.0, 32.0, np.inf])
    limits = 0.1 * np.minimum(orders, 40.0)
    yield "feasible_lower", (q, orders, limits)

    pmf = rng.dirichlet(np.ones(6))
    cdf = np.cumsum(pmf)
    cdf[-1] = 1.0
    ks = rng.geometric(0.1, size=50_000)
    u = rng.random(int(ks.sum()))
    yield "best_of_k", (cdf, ks, u)

    # a heavy-tailed count law (about 1e6 tabulated terms) on a 6-outcome pair
    pmf_k = kdist.series_pmf(kdist.tnb_with_mean(-0.5, 100.0))
    w_le = np.cumsum(pmf[::-1])[::-1]
    w_lt = np.concatenate((w_le[1:], [0.0]))
    yield "max_law", (pmf_k, w_le, w_lt)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _ckernels is None:
        print("compiled backend not built; only the numpy backend is available")
    print(f"{'kernel':<16}{'python s':>12}{'cython s':>12}{'speedup':>10}{'max |diff|':>14}")
    for name, inputs in cases():
        py = getattr(_kernels_py, name)
        t_py = min(timeit.repeat(lambda: py(*inputs), number=1, repeat=args.repeat))
        if _ckernels is None:
            print(f"{name:<16}{t_py:>12.4f}{'-':>12}{'-':>10}{'-':>14}")
            continue
        cy = getattr(_ckernels, name)
        t_cy = min(timeit.repeat(lambda: cy(*inputs), number=1, repeat=args.repeat))
        diff = float(np.max(np.abs(np.asarray(py(*inputs), float) - np.asarray(cy(*inputs), float))))
        print(f"{name:<16}{t_py:>12.4f}{t_cy:>12.4f}{t_py / t_cy:>10.1f}{diff:>14.3g}")


if __name__ == "__main__":
    main()
