#!/usr/bin/env python3
"""Time the jitted convolution backend against the pure-numpy fallback.

Run from the repository root:

    python3 benchmarks/bench_kernels.py

Backend selection follows ZEROLIGHT_BACKEND (auto by default).  With the
jitted backend active, every case reports both implementations, the speedup,
and the maximum absolute deviation between their outputs; forced to numpy,
the script times the fallback alone.
"""

import time

import numpy as np

from zerolight import kernels

# (label, n, c_in, c_out, size, kernel, stride, pad) covering the network's
# convolution shapes at smoke and full-image scale
CASES = [
    ("stem    3->16  64px", 1, 3, 16, 64, 3, 1, 1),
    ("encoder 13->16 64px", 1, 13, 16, 64, 3, 1, 1),
    ("head    16->3  64px", 1, 16, 3, 64, 3, 1, 1),
    ("stem    3->16  256px", 1, 3, 16, 256, 3, 1, 1),
    ("wide    32->32 128px", 1, 32, 32, 128, 3, 1, 1),
]


def best_of(fn, repeats=5):
    fn()  # warm-up (also triggers jit compilation)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_case(label, n, c_in, c_out, size, kernel, stride, pad):
    rng = np.random.default_rng(17)
    x = rng.uniform(0.0, 1.0, (n, c_in, size, size))
    w = rng.normal(0.0, 0.1, (c_out, c_in, kernel, kernel))
    out_size = kernels.conv_output_size(size, kernel, stride, pad)
    dout = rng.normal(size=(n, c_out, out_size, out_size))

    ops = {
        "forward": (
            lambda: kernels.conv2d_forward(x, w, stride, pad),
            lambda: kernels._conv2d_forward_np(x, w, stride, pad)),
        "backward_w": (
            lambda: kernels.conv2d_backward_w(x, dout, kernel, stride, pad),
            lambda: kernels._conv2d_backward_w_np(x, dout, kernel, stride, pad)),
        "backward_x": (
            lambda: kernels.conv2d_backward_x(w, dout, stride, pad, size, size),
            lambda: kernels._conv2d_backward_x_np(w, dout, stride, pad, size, size)),
    }
    for op, (active, fallback) in ops.items():
        deviation = float(np.abs(active() - fallback()).max())
        t_active = best_of(active)
        if kernels.BACKEND == "numpy":
            print(f"{label}  {op:<10}  numpy {1e3 * t_active:8.3f} ms")
            continue
        t_np = best_of(fallback)
        print(f"{label}  {op:<10}  numpy {1e3 * t_np:8.3f} ms  "
              f"numba {1e3 * t_active:8.3f} ms  "
              f"speedup {t_np / t_active:5.2f}x  max|diff| {deviation:.2e}")


def main():
    print(f"active backend: {kernels.BACKEND}")
    for case in CASES:
        bench_case(*case)


if __name__ == "__main__":
    main()
