"""Self-supervised training losses.

Five terms drive training, all computed on (1, 3, H, W) tensors:

* reflectance consistency: squared distance between the reflectances of the
  two masked sub-images, plus a weighted regularizer,
* masking regularizer: the sub-image reflectance difference should match the
  difference obtained by masking the full-image reflectance the same way,
* illumination: reconstruction, a channel-max illumination anchor, a
  reflectance anchor with the illumination gradient stopped, and a
  total-variation smoothness penalty, equally weighted,
* consistency: patch-mean intensity contrasts of the enhanced image should
  match those of its input (kept exactly as formulated, so it can dip below
  zero),
* enhancement: patch means near an exposure target plus squared differences
  of global channel means.

Every squared norm is mean-reduced so the configured weight ratios behave
identically across crop sizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T


@dataclass(frozen=True)
class LossWeights:
    """Loss term weights and statistics hyperparameters."""

    w_r: float = 1.0
    w_l: float = 1.0
    w_con: float = 0.1
    w_enh: float = 1.0
    w_reg: float = 1.0
    w_exp: float = 1.0
    w_col: float = 0.5
    e_target: float = 0.6
    patch_size: int = 16

    def __post_init__(self):
        for name in ("w_r", "w_l", "w_con", "w_enh", "w_reg", "w_exp", "w_col"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not 0.0 < self.e_target < 1.0:
            raise ValueError(f"e_target must lie in (0,1), got {self.e_target}")
        if self.patch_size < 1:
            raise ValueError("patch_size must be >= 1")


@dataclass(frozen=True)
class LossBreakdown:
    """Scalar values of one training step, for logging."""

    l_r: float
    l_reg: float
    l_l: float
    l_con: float
    l_enh: float
    total: float


def _check_same_shape(a: T.Tensor, b: T.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise T.ShapeError(f"{what}: shapes {a.shape} and {b.shape} differ")


def _mean_sq(x: T.Tensor) -> T.Tensor:
    return T.reduce_mean(T.mul(x, x))


def loss_r(r1: T.Tensor, r2: T.Tensor, reg_term, w_reg: float) -> T.Tensor:
    """Reflectance consistency: mean||r1 - r2||^2 + w_reg * reg_term."""
    _check_same_shape(r1, r2, "loss_r")
    base = _mean_sq(T.sub(r1, r2))
    return T.add(base, T.mul(T.as_tensor(reg_term), w_reg))


def loss_reg(r1: T.Tensor, r2: T.Tensor, full_masked_pair) -> T.Tensor:
    """Masking regularizer.

    ``full_masked_pair`` holds the full-crop reflectance pushed through the
    identical two mask routes used for the training pair (the second route
    gamma-corrected with the same exponent).  Penalizes the sub-image
    reflectance difference deviating from that masked full-image difference.
    """
    fm1, fm2 = full_masked_pair
    _check_same_shape(r1, r2, "loss_reg")
    _check_same_shape(fm1, fm2, "loss_reg (masked pair)")
    _check_same_shape(r1, fm1, "loss_reg (sub vs masked)")
    return _mean_sq(T.sub(T.sub(r1, r2), T.sub(fm1, fm2)))


def _tv(l: T.Tensor) -> T.Tensor:
    """Mean absolute forward differences; replicated edges contribute zero."""
    n = float(l.size)
    dy = T.sub(T.take(l, (slice(None), slice(None), slice(1, None), slice(None))),
               T.take(l, (slice(None), slice(None), slice(0, -1), slice(None))))
    dx = T.sub(T.take(l, (slice(None), slice(None), slice(None), slice(1, None))),
               T.take(l, (slice(None), slice(None), slice(None), slice(0, -1))))
    total = T.add(T.reduce_sum(T.absolute(dy)), T.reduce_sum(T.absolute(dx)))
    return T.mul(total, 1.0 / n)


def loss_l(r1: T.Tensor, l1: T.Tensor, d1: T.Tensor,
           l_anchor: T.Tensor | None = None) -> T.Tensor:
    """Illumination loss: four equally weighted mean-reduced terms.

    Reconstruction ||r1*l1 - d1||^2; anchor ||l1 - L0||^2 where L0 is the
    per-pixel channel max of d1; reflectance anchor ||r1 - d1/l_anchor||^2;
    and total variation of l1.

    ``l_anchor`` defaults to a gradient-stopped copy of l1, so the third term
    pins the reflectance without dragging the illumination estimate around.
    Numerical gradient checks should pass a constant captured at the base
    point instead: central differences otherwise see the anchor move with l1,
    a derivative backpropagation deliberately does not have.
    """
    _check_same_shape(r1, l1, "loss_l")
    _check_same_shape(r1, d1, "loss_l (input)")
    if np.any(l1.data <= 0.0):
        raise T.DomainError("illumination must be strictly positive")
    if l_anchor is None:
        l_anchor = T.stop_gradient(l1)
    l0 = T.constant(d1.data.max(axis=1, keepdims=True))
    recon = _mean_sq(T.sub(T.mul(r1, l1), d1))
    anchor = _mean_sq(T.sub(l1, l0))
    detached = _mean_sq(T.sub(r1, T.div(d1, l_anchor)))
    return T.add(T.add(recon, anchor), T.add(detached, _tv(l1)))


def _patch_means(x: T.Tensor, patch_size: int) -> T.Tensor:
    """Patch means of per-pixel channel-mean intensity: (1,3,H,W) -> (1,gh,gw)."""
    n, _, h, w = x.shape
    if h % patch_size or w % patch_size:
        raise T.ShapeError(
            f"patch grid {patch_size} does not divide image {h}x{w}")
    gh, gw = h // patch_size, w // patch_size
    lum = T.reduce_mean(x, axes=(1,))
    grid = T.reshape(lum, (n, gh, patch_size, gw, patch_size))
    return T.reduce_mean(grid, axes=(2, 4))


def _neighborhood_contrast(pm: T.Tensor) -> T.Tensor:
    """Sum over ordered 4-neighbor patch pairs of |mean_i - mean_j|.

    Each unordered adjacent pair appears twice in the ordered double sum.
    """
    dh = T.sub(T.take(pm, (slice(None), slice(1, None), slice(None))),
               T.take(pm, (slice(None), slice(0, -1), slice(None))))
    dw = T.sub(T.take(pm, (slice(None), slice(None), slice(1, None))),
               T.take(pm, (slice(None), slice(None), slice(0, -1))))
    unordered = T.add(T.reduce_sum(T.absolute(dh)), T.reduce_sum(T.absolute(dw)))
    return T.mul(unordered, 2.0)


def loss_con(i_en: T.Tensor, d1: T.Tensor, patch_size: int) -> T.Tensor:
    """Patch-contrast consistency between enhanced output and its input.

    (1/K) sum_i sum_{j in 4-neighborhood} (|en_i - en_j| - |in_i - in_j|)
    over patch-mean intensities; evaluated exactly as written, so the value
    may be negative when enhancement flattens local contrast.
    """
    _check_same_shape(i_en, d1, "loss_con")
    pm_en = _patch_means(i_en, patch_size)
    pm_in = _patch_means(d1, patch_size)
    k = float(pm_en.size)
    diff = T.sub(_neighborhood_contrast(pm_en), _neighborhood_contrast(pm_in))
    return T.mul(diff, 1.0 / k)


def loss_enh(i_en: T.Tensor, weights: LossWeights) -> T.Tensor:
    """Exposure control plus color-balance control.

    w_exp * mean_K |patch mean - E|  +  w_col * sum over channel pairs of
    (global mean_p - global mean_q)^2.
    """
    pm = _patch_means(i_en, weights.patch_size)
    exposure = T.reduce_mean(T.absolute(T.sub(pm, weights.e_target)))
    v = T.reduce_mean(i_en, axes=(0, 2, 3))
    pairs = ((0, 1), (0, 2), (1, 2))
    color = None
    for p, q in pairs:
        d = T.sub(T.take(v, p), T.take(v, q))
        sq = T.mul(d, d)
        color = sq if color is None else T.add(color, sq)
    return T.add(T.mul(exposure, weights.w_exp), T.mul(color, weights.w_col))


def total_loss(l_r: T.Tensor, l_l: T.Tensor, l_con: T.Tensor,
               l_enh: T.Tensor, weights: LossWeights) -> T.Tensor:
    """Weighted sum; the regularizer is already folded into l_r."""
    out = T.mul(l_r, weights.w_r)
    out = T.add(out, T.mul(l_l, weights.w_l))
    out = T.add(out, T.mul(l_con, weights.w_con))
    return T.add(out, T.mul(l_enh, weights.w_enh))
