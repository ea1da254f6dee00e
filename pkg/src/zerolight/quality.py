"""Full-reference image quality metrics on [0,1] float images."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PSNR_CAP_DB = 100.0
_MSE_FLOOR = 1e-10


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB, capped at 100 for near-identity."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse < _MSE_FLOOR:
        return PSNR_CAP_DB
    return float(10.0 * np.log10(1.0 / mse))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    window = np.outer(g, g)
    return window / window.sum()


def _ssim_channel(x: np.ndarray, y: np.ndarray, window: np.ndarray,
                  c1: float, c2: float) -> float:
    """Mean local SSIM over valid window positions of one channel."""
    k = window.shape[0]
    wx = sliding_window_view(x, (k, k))
    wy = sliding_window_view(y, (k, k))
    mu_x = np.tensordot(wx, window, axes=([2, 3], [0, 1]))
    mu_y = np.tensordot(wy, window, axes=([2, 3], [0, 1]))
    xx = np.tensordot(wx * wx, window, axes=([2, 3], [0, 1]))
    yy = np.tensordot(wy * wy, window, axes=([2, 3], [0, 1]))
    xy = np.tensordot(wx * wy, window, axes=([2, 3], [0, 1]))
    var_x = xx - mu_x**2
    var_y = yy - mu_y**2
    cov = xy - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def ssim(a: np.ndarray, b: np.ndarray, window_size: int = 11,
         sigma: float = 1.5) -> float:
    """Single-scale SSIM with a Gaussian window, averaged over channels.

    Uses the canonical constants C1 = 0.01^2, C2 = 0.03^2 for [0,1] data and
    valid-mode windows (no padding).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    if min(a.shape[0], a.shape[1]) < window_size:
        raise ValueError(
            f"image {a.shape[:2]} smaller than {window_size}x{window_size} window")
    window = _gaussian_window(window_size, sigma)
    c1, c2 = 0.01**2, 0.03**2
    vals = [_ssim_channel(a[:, :, c], b[:, :, c], window, c1, c2)
            for c in range(a.shape[2])]
    return float(np.mean(vals))
