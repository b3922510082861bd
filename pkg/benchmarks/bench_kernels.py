"""Benchmark the numba kernels against their pure-numpy twins.

Runs every hot kernel on model-realistic shapes and prints a table with
the per-call time of both paths and the speedup. The numba functions are
called once before timing so JIT compilation is not measured.

    python benchmarks/bench_kernels.py [--quick]
"""

import argparse
import time

import numpy as np

from stmlab.kernels import numba_impl, numpy_impl


def timeit(fn, *args, repeats):
    fn(*args)  # warm-up (and JIT compile for the numba path)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_case(name, fn_name, args, repeats):
    t_np = timeit(getattr(numpy_impl, fn_name), *args, repeats=repeats)
    t_nb = timeit(getattr(numba_impl, fn_name), *args, repeats=repeats)
    print(f"{name:44s} {t_np * 1e3:9.2f} {t_nb * 1e3:9.2f} {t_np / t_nb:7.1f}x")
    return t_np, t_nb


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--quick", action="store_true", help="smaller shapes, fewer repeats")
    args = parser.parse_args()

    rng = np.random.Generator(np.random.Philox(0))
    repeats = 3 if args.quick else 7
    side = 28 if args.quick else 56
    c = 32 if args.quick else 64

    print(f"{'kernel (shape)':44s} {'numpy ms':>9s} {'numba ms':>9s} {'speedup':>8s}")

    x = rng.standard_normal((1, c, side, side)).astype(np.float32)
    k7 = rng.standard_normal((c, 7, 7)).astype(np.float32)
    bench_case(f"depthwise_conv2d_fwd 7x7 ({c}x{side}x{side})",
               "depthwise_conv2d_fwd", (x, k7, 1, 3, False), repeats)
    g = rng.standard_normal(x.shape).astype(np.float32)
    bench_case(f"depthwise_conv2d_bwd 7x7 ({c}x{side}x{side})",
               "depthwise_conv2d_bwd", (g, k7, 1, 3, False, side, side), repeats)

    # halo-style overlapping windows: 13x13 patches on a stride-7 grid
    nw = side // 7
    bench_case(f"extract_patches_fwd 13/7 ({c}x{side}x{side})",
               "extract_patches_fwd", (x, 13, 7, 3, 3, nw, nw), repeats)
    gp = rng.standard_normal((1, nw, nw, c, 13, 13)).astype(np.float32)
    bench_case(f"extract_patches_bwd 13/7 ({c}x{side}x{side})",
               "extract_patches_bwd", (gp, 13, 7, 3, 3, side, side), repeats)

    # deformable-style gather/scatter: 9 points per pixel
    p = side * side * 9
    ys = (rng.random((1, p)) * (side + 1) - 0.5).astype(np.float32)
    xs = (rng.random((1, p)) * (side + 1) - 0.5).astype(np.float32)
    bench_case(f"bilinear_gather 9pt ({c}x{side}x{side})",
               "bilinear_gather", (x, ys, xs), repeats)
    gs = rng.standard_normal((1, c, p)).astype(np.float32)
    bench_case(f"bilinear_scatter 9pt ({c}x{side}x{side})",
               "bilinear_scatter", (gs, ys, xs, side, side), repeats)


if __name__ == "__main__":
    main()
