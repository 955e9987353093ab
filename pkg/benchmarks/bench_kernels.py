"""Time the compiled kernels against the numpy reference implementations.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one line per kernel with the best-of-N time for each backend and the
maximum absolute difference between their outputs.
"""

import argparse
import timeit

import numpy as np

from seng import _kernels_py as py

try:
    from seng import _kernels as cy
except ImportError:
    cy = None


def cases(rng):
    x = rng.standard_normal((16, 8, 16, 16))
    cols = py.im2col(x, 3, 3, 1, 1)
    G = rng.standard_normal((32, 64, 8))
    A = rng.standard_normal((32, 72, 8))
    Z = rng.standard_normal((64, 72))
    return [
        ("im2col", (x, 3, 3, 1, 1)),
        ("col2im", (cols, x.shape, 3, 3, 1, 1)),
        ("factor_gram", (G, A, G, A)),
        ("factor_dot", (G, A, Z)),
    ]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':<12} {'python ms':>10} {'cython ms':>10} {'speedup':>8} {'max diff':>10}")
    for name, call_args in cases(rng):
        f_py = getattr(py, name)
        t_py = min(timeit.repeat(lambda: f_py(*call_args), number=1, repeat=args.repeat))
        if cy is None:
            print(f"{name:<12} {1e3 * t_py:10.3f} {'n/a':>10}")
            continue
        f_cy = getattr(cy, name)
        t_cy = min(timeit.repeat(lambda: f_cy(*call_args), number=1, repeat=args.repeat))
        diff = float(np.max(np.abs(np.asarray(f_py(*call_args)) - np.asarray(f_cy(*call_args)))))
        print(f"{name:<12} {1e3 * t_py:10.3f} {1e3 * t_cy:10.3f} {t_py / t_cy:8.2f} {diff:10.2e}")


if __name__ == "__main__":
    main()
