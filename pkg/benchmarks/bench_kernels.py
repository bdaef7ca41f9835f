"""Time the compiled im2col/col2im kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from signgan import _kernels_py

try:
    from signgan import _kernels as compiled
except ImportError:
    compiled = None

CASES = [(32, 3, 8, 8), (32, 64, 16, 16), (32, 64, 32, 32)]


def bench(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if compiled is None:
        print("compiled extension not built; only the fallback is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':8} {'shape':>16} {'python ms':>10} {'cython ms':>10} {'speedup':>8}")
    for shape in CASES:
        B, C, H, W = shape
        x = rng.standard_normal(shape)
        cols = rng.standard_normal((B, C * 9, H * W))
        pairs = [
            ("im2col", lambda m: m.im2col(x, 3)),
            ("col2im", lambda m: m.col2im(cols, C, H, W, 3)),
        ]
        for name, call in pairs:
            py = bench(lambda: call(_kernels_py), args.repeat) * 1e3
            if compiled is None:
                print(f"{name:8} {str(shape):>16} {py:10.2f}")
                continue
            cy = bench(lambda: call(compiled), args.repeat) * 1e3
            print(f"{name:8} {str(shape):>16} {py:10.2f} {cy:10.2f} {py / cy:7.2f}x")


if __name__ == "__main__":
    main()
