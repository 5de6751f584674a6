"""Compare the compiled and pure-Python kernels.

    python3 benchmarks/bench_kernels.py [--repeat N]

Times the Jacobi eigensolver on the covariance sizes seen during collection
(feature dims 4 to 20).
"""
import argparse
import timeit

import numpy as np

from rp1 import _kernels_py

try:
    from rp1 import _kernels as _compiled
except ImportError:
    _compiled = None


def bench(fn, arg, repeat):
    return min(timeit.repeat(lambda: fn(arg), number=1, repeat=repeat))


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args()
    if _compiled is None:
        print("compiled extension not built; only the Python backend is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<22}{'python (ms)':>14}{'compiled (ms)':>16}{'speedup':>10}")
    cases = []
    for d in (4, 6, 10, 20):
        x = rng.standard_normal((3000, d))
        cases.append((f"jacobi_eigh d={d}", "jacobi_eigh", x.T @ x / len(x)))
    for label, name, arg in cases:
        t_py = bench(getattr(_kernels_py, name), arg, args.repeat) * 1e3
        if _compiled is None:
            print(f"{label:<22}{t_py:>14.3f}{'-':>16}{'-':>10}")
            continue
        t_c = bench(getattr(_compiled, name), arg, args.repeat) * 1e3
        print(f"{label:<22}{t_py:>14.3f}{t_c:>16.3f}{t_py / t_c:>9.1f}x")


if __name__ == "__main__":
    main()
