"""Illumination and frequency priors, and their convolutional encoder.

The frequency analysis uses the orthonormal 2D DCT-II::

    F[u,v] = (2/sqrt(h*w)) m(u) m(v) sum_{i,j} x[i,j]
             cos((2i+1) u pi / (2h)) cos((2j+1) v pi / (2w))

with m(0) = 1/sqrt(2) and m(k) = 1 otherwise, computed as separable matrix
products against precomputed cosine bases (exact inverse, Parseval holds).
Four binary masks select diagonal frequency bands indexed by u+v and a
bandwidth t; filtering back to the spatial domain yields four band maps that,
together with the channel-mean luminance, form the 13-channel prior stack fed
to a two-layer convolutional encoder.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import tensor as T


@lru_cache(maxsize=32)
def _dct_basis(n: int) -> np.ndarray:
    """Orthonormal DCT-II basis: row u is the length-n cosine at frequency u."""
    i = np.arange(n)
    u = np.arange(n)[:, None]
    basis = np.sqrt(2.0 / n) * np.cos((2 * i + 1) * u * np.pi / (2 * n))
    basis[0] /= np.sqrt(2.0)
    basis.setflags(write=False)
    return basis


def dct2(channel: np.ndarray) -> np.ndarray:
    """Orthonormal 2D DCT-II of a single (H, W) map."""
    x = np.asarray(channel, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"dct2 expects a 2-d map, got shape {x.shape}")
    return _dct_basis(x.shape[0]) @ x @ _dct_basis(x.shape[1]).T


def idct2(coeffs: np.ndarray) -> np.ndarray:
    """Inverse of dct2 (transpose of the orthonormal basis)."""
    f = np.asarray(coeffs, dtype=np.float64)
    if f.ndim != 2:
        raise ValueError(f"idct2 expects a 2-d map, got shape {f.shape}")
    return _dct_basis(f.shape[0]).T @ f @ _dct_basis(f.shape[1])


def default_bandwidth(h: int, w: int) -> int:
    """t = round((h+w)/16), clamped to keep every band non-empty."""
    t = int(round((h + w) / 16.0))
    return max(1, min(t, (h + w - 2) // 5))


def band_masks(h: int, w: int, t: int):
    """Four binary (h, w) masks over diagonal frequency index u+v.

    low1: u+v <= t; low2: u+v <= 3t; high1: 2t < u+v <= 4t; high2: u+v >= 5t.
    Requires t >= 1 and 5t <= h+w-2 so the outermost band is non-empty.
    """
    t = int(t)
    if t < 1:
        raise ValueError(f"bandwidth must be >= 1, got {t}")
    if 5 * t > h + w - 2:
        raise ValueError(f"bandwidth {t} leaves no u+v >= 5t frequencies "
                         f"in an {h}x{w} spectrum")
    diag = np.add.outer(np.arange(h), np.arange(w))
    low1 = (diag <= t).astype(np.float64)
    low2 = (diag <= 3 * t).astype(np.float64)
    high1 = ((diag > 2 * t) & (diag <= 4 * t)).astype(np.float64)
    high2 = (diag >= 5 * t).astype(np.float64)
    return low1, low2, high1, high2


def apply_band(pixels: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Filter each channel through a frequency mask: idct2(dct2(ch) * mask).

    Output is not clamped; band-limited maps may leave [0,1].
    """
    arr = np.asarray(pixels, dtype=np.float64)
    if mask.shape != arr.shape[:2]:
        raise ValueError(f"mask {mask.shape} does not match image {arr.shape[:2]}")
    out = np.empty_like(arr)
    for c in range(arr.shape[2]):
        out[:, :, c] = idct2(dct2(arr[:, :, c]) * mask)
    return out


def illumination_prior(pixels: np.ndarray) -> np.ndarray:
    """Per-pixel channel mean, shape (H, W, 1)."""
    return np.asarray(pixels, dtype=np.float64).mean(axis=2, keepdims=True)


@dataclass(frozen=True)
class PriorStack:
    """Luminance plus the four band-filtered maps at one bandwidth."""

    i_lu: np.ndarray
    c_low1: np.ndarray
    c_low2: np.ndarray
    c_high1: np.ndarray
    c_high2: np.ndarray
    t: int

    def channels(self) -> np.ndarray:
        """All priors as one (1, 13, H, W) activation block."""
        maps = [self.i_lu, self.c_low1, self.c_low2, self.c_high1, self.c_high2]
        return np.concatenate([m.transpose(2, 0, 1) for m in maps], axis=0)[None]


def prior_stack(pixels: np.ndarray, t: int | None = None) -> PriorStack:
    """Compute the full prior stack; t defaults to round((h+w)/16), clamped."""
    arr = np.asarray(pixels, dtype=np.float64)
    h, w = arr.shape[:2]
    if t is None:
        t = default_bandwidth(h, w)
    low1, low2, high1, high2 = band_masks(h, w, t)
    return PriorStack(
        i_lu=illumination_prior(arr),
        c_low1=apply_band(arr, low1),
        c_low2=apply_band(arr, low2),
        c_high1=apply_band(arr, high1),
        c_high2=apply_band(arr, high2),
        t=int(t),
    )


def encode_priors(stack: PriorStack, w1: T.Tensor, b1: T.Tensor,
                  w2: T.Tensor, b2: T.Tensor) -> T.Tensor:
    """Two-layer encoder producing the degradation representation.

    conv3x3(13 -> C) -> tanh -> conv3x3(C -> C), padding 1 so the spatial
    size is preserved.  tanh fixes f(0) = 0, so an all-zero stack with zero
    biases encodes to exactly zero.  Returns a (1, C, H, W) tensor.
    """
    x = T.constant(stack.channels())
    if w1.shape[1] != 13:
        raise T.ShapeError(f"encoder expects 13 input channels, got weights {w1.shape}")
    h = T.conv2d(x, w1, stride=1, padding=1)
    h = T.add(h, T.reshape(b1, (1, b1.shape[0], 1, 1)))
    h = T.tanh(h)
    p = T.conv2d(h, w2, stride=1, padding=1)
    p = T.add(p, T.reshape(b2, (1, b2.shape[0], 1, 1)))
    return p
