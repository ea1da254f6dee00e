"""Masked sub-image pairs for self-supervised training.

A source image is partitioned into small patches and, per patch, one pixel is
routed to each of two sub-images so the pair shares content but carries
independent noise realizations.  The second sub-image is then brightened by a
random gamma so the pair also differs in illumination.  The pixel selection is
kept (as index/weight gather terms) so the identical masking can later be
replayed differentiably on a network output at full resolution.

Strategies:

* ``neighbor``    2x2 patches, a uniformly drawn ordered pair of 4-adjacent
                  pixels (8 possibilities; diagonals excluded) -> (H/2, W/2)
* ``noise2fast_h``  2x1 patches, top/bottom pixels -> (H/2, W)
* ``noise2fast_w``  1x2 patches, left/right pixels -> (H, W/2)
* ``mean``        2x2 patches, the two diagonal averages -> (H/2, W/2)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T

STRATEGIES = ("neighbor", "noise2fast_h", "noise2fast_w", "mean")

# ordered 4-adjacent pixel pairs of a 2x2 patch [[a,b],[c,d]], as
# ((row,col) of the sub1 pixel, (row,col) of the sub2 pixel)
_ADJ_OFFSETS = np.array(
    [
        [[0, 0], [0, 1]],  # (a,b)
        [[0, 1], [0, 0]],  # (b,a)
        [[0, 0], [1, 0]],  # (a,c)
        [[1, 0], [0, 0]],  # (c,a)
        [[0, 1], [1, 1]],  # (b,d)
        [[1, 1], [0, 1]],  # (d,b)
        [[1, 0], [1, 1]],  # (c,d)
        [[1, 1], [1, 0]],  # (d,c)
    ],
    dtype=np.int64,
)


@dataclass(frozen=True)
class MaskTerm:
    """One weighted gather: output[i,j] += weight * source[rows[i,j], cols[i,j]]."""

    rows: np.ndarray
    cols: np.ndarray
    weight: float


@dataclass(frozen=True)
class MaskSelection:
    """A realized masking: gather terms producing each sub-image."""

    kind: str
    height: int
    width: int
    route1: tuple[MaskTerm, ...]
    route2: tuple[MaskTerm, ...]

    def apply(self, pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Gather both sub-images from an (H, W, 3) array."""
        return self._gather(pixels, self.route1), self._gather(pixels, self.route2)

    @staticmethod
    def _gather(pixels, route):
        out = route[0].weight * pixels[route[0].rows, route[0].cols, :]
        for term in route[1:]:
            out = out + term.weight * pixels[term.rows, term.cols, :]
        return out

    def apply_tensor(self, x: T.Tensor) -> tuple[T.Tensor, T.Tensor]:
        """Gather both sub-images differentiably from an (N, C, H, W) tensor."""
        if x.shape[-2] != self.height or x.shape[-1] != self.width:
            raise T.ShapeError(
                f"selection built for {self.height}x{self.width}, "
                f"tensor is {x.shape[-2]}x{x.shape[-1]}")
        return self._gather_t(x, self.route1), self._gather_t(x, self.route2)

    @staticmethod
    def _gather_t(x, route):
        idx = (slice(None), slice(None), route[0].rows, route[0].cols)
        out = T.mul(T.take(x, idx), route[0].weight)
        for term in route[1:]:
            idx = (slice(None), slice(None), term.rows, term.cols)
            out = T.add(out, T.mul(T.take(x, idx), term.weight))
        return out


def _require_even(value: int, what: str) -> None:
    if value % 2 != 0:
        raise ValueError(f"{what} must be even for masking, got {value}")


def draw_selection(height, width, strategy, rng=None) -> MaskSelection:
    """Construct the gather indices for one masking realization.

    Only ``neighbor`` consumes randomness (one uniform draw over the 8
    ordered adjacent pairs per 2x2 patch); the other strategies are fixed.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown masking strategy {strategy!r}")

    if strategy == "noise2fast_h":
        _require_even(height, "height")
        cols = np.broadcast_to(np.arange(width), (height // 2, width))
        top = np.broadcast_to(2 * np.arange(height // 2)[:, None], cols.shape)
        route1 = (MaskTerm(top.copy(), cols.copy(), 1.0),)
        route2 = (MaskTerm(top + 1, cols.copy(), 1.0),)
        return MaskSelection("noise2fast_h", height, width, route1, route2)

    if strategy == "noise2fast_w":
        _require_even(width, "width")
        rows = np.broadcast_to(np.arange(height)[:, None], (height, width // 2))
        left = np.broadcast_to(2 * np.arange(width // 2), rows.shape)
        route1 = (MaskTerm(rows.copy(), left.copy(), 1.0),)
        route2 = (MaskTerm(rows.copy(), left + 1, 1.0),)
        return MaskSelection("noise2fast_w", height, width, route1, route2)

    _require_even(height, "height")
    _require_even(width, "width")
    base_r = 2 * np.arange(height // 2)[:, None] + np.zeros(width // 2, dtype=np.int64)
    base_c = 2 * np.arange(width // 2) + np.zeros((height // 2, 1), dtype=np.int64)

    if strategy == "mean":
        route1 = (MaskTerm(base_r, base_c, 0.5),           # a
                  MaskTerm(base_r + 1, base_c + 1, 0.5))   # d
        route2 = (MaskTerm(base_r, base_c + 1, 0.5),       # b
                  MaskTerm(base_r + 1, base_c, 0.5))       # c
        return MaskSelection("mean", height, width, route1, route2)

    if rng is None:
        raise ValueError("neighbor masking requires an RNG")
    choice = rng.integers(0, 8, size=(height // 2, width // 2))
    off = _ADJ_OFFSETS[choice]  # (h/2, w/2, 2, 2)
    route1 = (MaskTerm(base_r + off[..., 0, 0], base_c + off[..., 0, 1], 1.0),)
    route2 = (MaskTerm(base_r + off[..., 1, 0], base_c + off[..., 1, 1], 1.0),)
    return MaskSelection("neighbor", height, width, route1, route2)


def neighbor_mask(pixels: np.ndarray, rng: np.random.Generator):
    """Random adjacent-pixel sub-images, each (H/2, W/2, 3)."""
    sel = draw_selection(pixels.shape[0], pixels.shape[1], "neighbor", rng)
    return sel.apply(pixels)


def alt_mask(pixels: np.ndarray, strategy: str):
    """Deterministic ablation maskers: noise2fast_h, noise2fast_w, or mean."""
    if strategy == "neighbor":
        raise ValueError("neighbor masking is random; use neighbor_mask")
    sel = draw_selection(pixels.shape[0], pixels.shape[1], strategy)
    return sel.apply(pixels)


def gamma_enhance(pixels: np.ndarray, sigma: float) -> np.ndarray:
    """Brighten by the power law out = in**(1/sigma); monotone, [0,1]-preserving."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    return np.asarray(pixels, dtype=np.float64) ** (1.0 / sigma)


def taylor_residual(r, n, lam):
    """|(r+n)**lam - (r**lam + lam * r**(lam-1) * n)|.

    Gap between the exact gamma-corrected noisy signal and its first-order
    expansion around the clean signal; shrinks quadratically in n.  Test
    diagnostic only.
    """
    r = np.asarray(r, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    if np.any(r + n <= 0.0):
        raise ValueError("taylor_residual requires r + n > 0")
    exact = (r + n) ** lam
    linear = r**lam + lam * r ** (lam - 1.0) * n
    return np.abs(exact - linear)


@dataclass(frozen=True)
class SubImagePair:
    """Training pair: raw sub-image, gamma-enhanced partner, sampling record.

    ``lam`` is the gamma exponent 1/sigma actually applied to the second
    sub-image; ``selection`` allows replaying the identical masking on a
    full-resolution network output.
    """

    d1: np.ndarray
    d2_enhanced: np.ndarray
    lam: float
    sigma: float
    selection: MaskSelection


def make_pair(pixels: np.ndarray, sigma_interval, strategy: str,
              rng: np.random.Generator) -> SubImagePair:
    """Mask the image, then gamma-enhance the second sub-image.

    Draw order is fixed (mask choice, then sigma) so seeded runs reproduce.
    Sigma is sampled uniformly from the open interval, whose lower bound must
    exceed 1 so the enhancement actually brightens.
    """
    lo, hi = float(sigma_interval[0]), float(sigma_interval[1])
    if not 1.0 < lo < hi:
        raise ValueError(f"sigma interval must satisfy 1 < lo < hi, got ({lo}, {hi})")
    sel = draw_selection(pixels.shape[0], pixels.shape[1], strategy, rng)
    sub1, sub2 = sel.apply(pixels)
    sigma = float(rng.uniform(lo, hi))
    return SubImagePair(
        d1=sub1,
        d2_enhanced=gamma_enhance(sub2, sigma),
        lam=1.0 / sigma,
        sigma=sigma,
        selection=sel,
    )
