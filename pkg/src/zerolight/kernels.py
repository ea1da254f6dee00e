"""2D convolution kernels with two interchangeable backends.

The jitted backend compiles direct convolution loops with numba; the fallback
backend is vectorized numpy (im2col via sliding windows). Selection happens
once at import time through the ``ZEROLIGHT_BACKEND`` environment variable:

    ZEROLIGHT_BACKEND=numpy   force the pure-numpy path
    ZEROLIGHT_BACKEND=numba   require numba (ImportError if missing)
    ZEROLIGHT_BACKEND=auto    numba if importable, numpy otherwise (default)

Both backends produce the same values up to floating-point summation order;
``benchmarks/bench_kernels.py`` times them against each other.  All arrays are
float64, layout NCHW for activations and OIKK for weights.
"""

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _resolve_backend() -> str:
    choice = os.environ.get("ZEROLIGHT_BACKEND", "auto").strip().lower()
    if choice not in ("auto", "numba", "numpy"):
        raise ValueError(
            f"ZEROLIGHT_BACKEND must be one of auto|numba|numpy, got {choice!r}"
        )
    if choice == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        if choice == "numba":
            raise
        return "numpy"
    return "numba"


BACKEND = _resolve_backend()


def conv_output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


# ---------------------------------------------------------------------------
# numpy backend (im2col)
# ---------------------------------------------------------------------------

def _windows(x, kernel, stride, pad):
    # (N, C, Ho, Wo, K, K) view of the zero-padded input
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kernel, kernel), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def _conv2d_forward_np(x, w, stride, pad):
    win = _windows(x, w.shape[2], stride, pad)
    out = np.einsum("nchwkl,ockl->nohw", win, w, optimize=True)
    return np.ascontiguousarray(out)


def _conv2d_backward_w_np(x, dout, kernel, stride, pad):
    win = _windows(x, kernel, stride, pad)
    dw = np.einsum("nchwkl,nohw->ockl", win, dout, optimize=True)
    return np.ascontiguousarray(dw)


def _conv2d_backward_x_np(w, dout, stride, pad, height, width):
    n, _, out_h, out_w = dout.shape
    c, kernel = w.shape[1], w.shape[2]
    dwin = np.einsum("nohw,ockl->nchwkl", dout, w, optimize=True)
    dxp = np.zeros((n, c, height + 2 * pad, width + 2 * pad))
    for kh in range(kernel):
        for kw in range(kernel):
            dxp[:, :, kh:kh + out_h * stride:stride,
                kw:kw + out_w * stride:stride] += dwin[..., kh, kw]
    return np.ascontiguousarray(dxp[:, :, pad:pad + height, pad:pad + width])


# ---------------------------------------------------------------------------
# numba backend (direct loops)
# ---------------------------------------------------------------------------

if BACKEND == "numba":
    from numba import njit

    # Kernel offsets sit in outer loops and the padded input makes every
    # access in-bounds, so the innermost loop runs branch-free over
    # contiguous rows and vectorizes.

    @njit(cache=True)
    def _padded_nb(x, pad):  # pragma: no cover - jitted
        n, c, h, wd = x.shape
        xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
        xp[:, :, pad : pad + h, pad : pad + wd] = x
        return xp

    @njit(cache=True)
    def _conv2d_forward_nb(x, w, stride, pad):  # pragma: no cover - jitted
        n, c, h, wd = x.shape
        o, _, k, _ = w.shape
        out_h = (h + 2 * pad - k) // stride + 1
        out_w = (wd + 2 * pad - k) // stride + 1
        xp = _padded_nb(x, pad)
        out = np.empty((n, o, out_h, out_w))
        for ni in range(n):
            for oi in range(o):
                for oh in range(out_h):
                    # Fresh buffer cannot alias xp, so the ow loop vectorizes.
                    row = np.zeros(out_w)
                    for ci in range(c):
                        for kh in range(k):
                            ih = oh * stride + kh
                            for kw in range(k):
                                wv = w[oi, ci, kh, kw]
                                if stride == 1:
                                    # Unit-stride index keeps the loop SIMD.
                                    for ow in range(out_w):
                                        row[ow] += wv * xp[ni, ci, ih, ow + kw]
                                else:
                                    for ow in range(out_w):
                                        row[ow] += wv * xp[ni, ci, ih, ow * stride + kw]
                    for ow in range(out_w):
                        out[ni, oi, oh, ow] = row[ow]
        return out

    @njit(cache=True)
    def _conv2d_backward_w_nb(x, dout, kernel, stride, pad):  # pragma: no cover
        n, c = x.shape[0], x.shape[1]
        o, out_h, out_w = dout.shape[1], dout.shape[2], dout.shape[3]
        xp = _padded_nb(x, pad)
        dw = np.zeros((o, c, kernel, kernel))
        for ni in range(n):
            for oi in range(o):
                for ci in range(c):
                    for kh in range(kernel):
                        for kw in range(kernel):
                            # Four accumulator lanes break the serial
                            # dependency of the dot product.
                            a0 = 0.0
                            a1 = 0.0
                            a2 = 0.0
                            a3 = 0.0
                            for oh in range(out_h):
                                ih = oh * stride + kh
                                if stride == 1:
                                    ow = 0
                                    while ow + 4 <= out_w:
                                        a0 += dout[ni, oi, oh, ow] \
                                            * xp[ni, ci, ih, ow + kw]
                                        a1 += dout[ni, oi, oh, ow + 1] \
                                            * xp[ni, ci, ih, ow + 1 + kw]
                                        a2 += dout[ni, oi, oh, ow + 2] \
                                            * xp[ni, ci, ih, ow + 2 + kw]
                                        a3 += dout[ni, oi, oh, ow + 3] \
                                            * xp[ni, ci, ih, ow + 3 + kw]
                                        ow += 4
                                    while ow < out_w:
                                        a0 += dout[ni, oi, oh, ow] \
                                            * xp[ni, ci, ih, ow + kw]
                                        ow += 1
                                else:
                                    for ow in range(out_w):
                                        a0 += dout[ni, oi, oh, ow] \
                                            * xp[ni, ci, ih, ow * stride + kw]
                            dw[oi, ci, kh, kw] += (a0 + a2) + (a1 + a3)
        return dw

    @njit(cache=True)
    def _conv2d_backward_x_nb(w, dout, stride, pad, height, width):  # pragma: no cover
        n, o, out_h, out_w = dout.shape
        c, kernel = w.shape[1], w.shape[2]
        wp = width + 2 * pad
        dxp = np.empty((n, c, height + 2 * pad, wp))
        for ni in range(n):
            for ci in range(c):
                for ih in range(height + 2 * pad):
                    # Gather every (oi, kh) that lands on this padded row into
                    # a fresh buffer; no aliasing, so the ow loop vectorizes.
                    row = np.zeros(wp)
                    for oi in range(o):
                        for kh in range(kernel):
                            dh = ih - kh
                            if dh < 0 or dh % stride != 0:
                                continue
                            oh = dh // stride
                            if oh >= out_h:
                                continue
                            for kw in range(kernel):
                                wv = w[oi, ci, kh, kw]
                                if stride == 1:
                                    # Unit-stride index keeps the loop SIMD.
                                    for ow in range(out_w):
                                        row[ow + kw] += wv * dout[ni, oi, oh, ow]
                                else:
                                    for ow in range(out_w):
                                        row[ow * stride + kw] += \
                                            wv * dout[ni, oi, oh, ow]
                    for iw in range(wp):
                        dxp[ni, ci, ih, iw] = row[iw]
        return np.ascontiguousarray(
            dxp[:, :, pad : pad + height, pad : pad + width])


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

def conv2d_forward(x, w, stride, pad):
    if BACKEND == "numba":
        return _conv2d_forward_nb(x, w, stride, pad)
    return _conv2d_forward_np(x, w, stride, pad)


def conv2d_backward_w(x, dout, kernel, stride, pad):
    if BACKEND == "numba":
        return _conv2d_backward_w_nb(x, dout, kernel, stride, pad)
    return _conv2d_backward_w_np(x, dout, kernel, stride, pad)


def conv2d_backward_x(w, dout, stride, pad, height, width):
    if BACKEND == "numba":
        return _conv2d_backward_x_nb(w, dout, stride, pad, height, width)
    return _conv2d_backward_x_np(w, dout, stride, pad, height, width)
