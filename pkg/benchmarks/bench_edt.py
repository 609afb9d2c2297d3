"""Benchmark the compiled vs pure-NumPy squared-EDT kernels.

Runs both backends on identical masks across a range of grid sizes,
verifies they agree bit-for-bit, and prints per-size timings plus the
speedup factor.  Usage:

    python benchmarks/bench_edt.py [--sizes 128,256,512,1024] [--repeats 5]
"""

import argparse
import time

import numpy as np

from hierseg import _edt_py

try:
    from hierseg import _edt_fast
except ImportError:
    _edt_fast = None


def disk_mask(size: int, rng: np.random.Generator) -> np.ndarray:
    """A few random disks: representative of instance-mask workloads."""
    yy, xx = np.mgrid[0:size, 0:size]
    mask = np.zeros((size, size), dtype=bool)
    for _ in range(4):
        cy, cx = rng.uniform(0, size, size=2)
        r = rng.uniform(size / 16, size / 5)
        mask |= (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    if not mask.any():
        mask[size // 2, size // 2] = True
    return mask


def best_of(fn, mask: np.ndarray, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(mask)
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", default="128,256,512,1024",
                        help="comma-separated grid sizes")
    parser.add_argument("--repeats", type=int, default=5,
                        help="timing repeats per size (best is reported)")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    sizes = [int(s) for s in args.sizes.split(",")]
    rng = np.random.default_rng(args.seed)

    if _edt_fast is None:
        print("compiled backend not available; timing pure NumPy only\n")
    header = f"{'size':>6}  {'python':>12}  {'compiled':>12}  {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for size in sizes:
        mask = disk_mask(size, rng)
        t_py = best_of(_edt_py.squared_edt, mask, args.repeats)
        if _edt_fast is not None:
            t_c = best_of(_edt_fast.squared_edt, mask, args.repeats)
            same = np.array_equal(_edt_py.squared_edt(mask),
                                  _edt_fast.squared_edt(mask))
            flag = "" if same else "  MISMATCH!"
            print(f"{size:>6}  {1e3 * t_py:>10.2f}ms  {1e3 * t_c:>10.2f}ms"
                  f"  {t_py / t_c:>7.1f}x{flag}")
        else:
            print(f"{size:>6}  {1e3 * t_py:>10.2f}ms  {'-':>12}  {'-':>8}")


if __name__ == "__main__":
    main()
