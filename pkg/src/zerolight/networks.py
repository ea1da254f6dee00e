"""Retinex decomposition networks.

Three small transformer-style networks share one parameter dictionary:

* reflectance net: stem conv, then blocks whose attention queries come from
  image tokens and whose keys/values come from tokens of the degradation
  representation (cross-attention prior injection), then a head conv and a
  sigmoid, so r lands in [0,1].
* illumination net: same layout with self-attention, squashed into
  (1e-4, 1] so later divisions by l are safe.
* correction net: one block over illumination tokens, global average pool,
  two linear layers, squashed into (0.05, 1]; raising l to a power below 1
  can only brighten values in (0,1].

Tokens are non-overlapping patch embeddings (patch size 4 by default); the
degradation representation is average-pooled onto the same token grid.  Each
block applies residual attention then a residual gate, where the gate is an
elementwise product of a linear branch and a sigmoid-activated linear branch.
No positional encodings or normalization layers are used; at these depths
training is stable without them and every operation stays shape-agnostic.

The enhanced image is i_en = r * l**alpha.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import priors
from . import tensor as T

L_FLOOR = 1e-4
ALPHA_FLOOR = 0.05


@dataclass(frozen=True)
class ArchConfig:
    """Architecture hyperparameters shared by all networks."""

    patch_size: int = 4
    stem_channels: int = 16
    token_dim: int = 32
    head_count: int = 2
    ref_blocks: int = 2
    lum_blocks: int = 2
    lc_blocks: int = 1
    prior_channels: int = 16

    def __post_init__(self):
        if self.token_dim % self.head_count != 0:
            raise ValueError(
                f"token_dim {self.token_dim} not divisible by "
                f"head_count {self.head_count}")
        for name in ("patch_size", "stem_channels", "token_dim", "head_count",
                     "ref_blocks", "lum_blocks", "lc_blocks", "prior_channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

def _block_specs(prefix, dim, kv_dim):
    return [
        (f"{prefix}.q.w", (dim, dim), dim),
        (f"{prefix}.q.b", (dim,), None),
        (f"{prefix}.k.w", (kv_dim, dim), kv_dim),
        (f"{prefix}.k.b", (dim,), None),
        (f"{prefix}.v.w", (kv_dim, dim), kv_dim),
        (f"{prefix}.v.b", (dim,), None),
        (f"{prefix}.o.w", (dim, dim), dim),
        (f"{prefix}.o.b", (dim,), None),
        (f"{prefix}.g1.w", (dim, dim), dim),
        (f"{prefix}.g1.b", (dim,), None),
        (f"{prefix}.g2.w", (dim, dim), dim),
        (f"{prefix}.g2.b", (dim,), None),
    ]


def parameter_specs(cfg: ArchConfig):
    """Ordered (name, shape, fan_in) for every trainable tensor.

    fan_in None marks biases, which are zero-initialized.  The order is the
    initialization draw order and therefore part of the determinism contract.
    """
    p, s, d, c = cfg.patch_size, cfg.stem_channels, cfg.token_dim, cfg.prior_channels
    patch_feat = s * p * p
    specs = [
        ("encoder.w1", (c, 13, 3, 3), 13 * 9),
        ("encoder.b1", (c,), None),
        ("encoder.w2", (c, c, 3, 3), c * 9),
        ("encoder.b2", (c,), None),
    ]
    for net, blocks, kv_dim in (("ref", cfg.ref_blocks, c),
                                ("lum", cfg.lum_blocks, d)):
        specs += [
            (f"{net}.stem.w", (s, 3, 3, 3), 3 * 9),
            (f"{net}.stem.b", (s,), None),
            (f"{net}.embed.w", (patch_feat, d), patch_feat),
            (f"{net}.embed.b", (d,), None),
        ]
        for i in range(blocks):
            specs += _block_specs(f"{net}.block{i}", d, kv_dim)
        specs += [
            (f"{net}.unembed.w", (d, patch_feat), d),
            (f"{net}.unembed.b", (patch_feat,), None),
            (f"{net}.head.w", (3, s, 3, 3), s * 9),
            (f"{net}.head.b", (3,), None),
        ]
    specs += [
        ("lc.embed.w", (3 * p * p, d), 3 * p * p),
        ("lc.embed.b", (d,), None),
    ]
    for i in range(cfg.lc_blocks):
        specs += _block_specs(f"lc.block{i}", d, d)
    specs += [
        ("lc.fc1.w", (d, d), d),
        ("lc.fc1.b", (d,), None),
        ("lc.fc2.w", (d, 1), d),
        ("lc.fc2.b", (1,), None),
    ]
    return specs


def init_params(cfg: ArchConfig, rng: np.random.Generator) -> dict[str, T.Tensor]:
    """Fan-in-scaled uniform weights, zero biases, in parameter_specs order."""
    params = {}
    for name, shape, fan_in in parameter_specs(cfg):
        if fan_in is None:
            data = np.zeros(shape)
        else:
            bound = 1.0 / math.sqrt(fan_in)
            data = rng.uniform(-bound, bound, size=shape)
        params[name] = T.Tensor(data, requires_grad=True)
    return params


def count_params(params: dict[str, T.Tensor]) -> int:
    return sum(p.size for p in params.values())


# ---------------------------------------------------------------------------
# token plumbing
# ---------------------------------------------------------------------------

def _tokenize(x: T.Tensor, w, b, patch: int) -> T.Tensor:
    """(1, C, H, W) -> (1, T, D) non-overlapping patch embedding."""
    n, c, h, wd = x.shape
    if h % patch or wd % patch:
        raise T.ShapeError(f"spatial dims {h}x{wd} not divisible by patch {patch}")
    gh, gw = h // patch, wd // patch
    x = T.reshape(x, (n, c, gh, patch, gw, patch))
    x = T.transpose(x, (0, 2, 4, 1, 3, 5))
    x = T.reshape(x, (n, gh * gw, c * patch * patch))
    return T.add(T.matmul(x, w), b)


def _detokenize(tok: T.Tensor, w, b, patch: int, channels: int,
                grid: tuple[int, int]) -> T.Tensor:
    """(1, T, D) -> (1, C, H, W), inverse layout of _tokenize."""
    gh, gw = grid
    x = T.add(T.matmul(tok, w), b)
    x = T.reshape(x, (x.shape[0], gh, gw, channels, patch, patch))
    x = T.transpose(x, (0, 3, 1, 4, 2, 5))
    return T.reshape(x, (x.shape[0], channels, gh * patch, gw * patch))


def _pool_to_grid(p: T.Tensor, patch: int) -> T.Tensor:
    """Average-pool (1, C, H, W) onto the token grid -> (1, T, C)."""
    n, c, h, w = p.shape
    gh, gw = h // patch, w // patch
    x = T.reshape(p, (n, c, gh, patch, gw, patch))
    x = T.reduce_mean(x, axes=(3, 5))
    x = T.reshape(x, (n, c, gh * gw))
    return T.transpose(x, (0, 2, 1))


def _split_heads(x: T.Tensor, heads: int) -> T.Tensor:
    n, t, d = x.shape
    x = T.reshape(x, (n, t, heads, d // heads))
    return T.transpose(x, (0, 2, 1, 3))


def _merge_heads(x: T.Tensor) -> T.Tensor:
    n, h, t, dh = x.shape
    x = T.transpose(x, (0, 2, 1, 3))
    return T.reshape(x, (n, t, h * dh))


def _linear(x, params, name):
    return T.add(T.matmul(x, params[f"{name}.w"]), params[f"{name}.b"])


def _attention(x_tok, kv_tok, params, prefix, heads):
    """Multi-head scaled dot-product attention; q from x, k/v from kv."""
    q = _split_heads(_linear(x_tok, params, f"{prefix}.q"), heads)
    k = _split_heads(_linear(kv_tok, params, f"{prefix}.k"), heads)
    v = _split_heads(_linear(kv_tok, params, f"{prefix}.v"), heads)
    scale = 1.0 / math.sqrt(q.shape[-1])
    scores = T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), scale)
    mixed = T.matmul(T.softmax(scores, axis=-1), v)
    return _linear(_merge_heads(mixed), params, f"{prefix}.o")


def _gate(x_tok, params, prefix):
    return T.mul(_linear(x_tok, params, f"{prefix}.g1"),
                 T.sigmoid(_linear(x_tok, params, f"{prefix}.g2")))


def _block(x_tok, kv_tok, params, prefix, heads):
    x_tok = T.add(x_tok, _attention(x_tok, kv_tok, params, prefix, heads))
    return T.add(x_tok, _gate(x_tok, params, prefix))


def _conv_bias(x, params, name, padding=1):
    w = params[f"{name}.w"]
    b = params[f"{name}.b"]
    y = T.conv2d(x, w, stride=1, padding=padding)
    return T.add(y, T.reshape(b, (1, b.shape[0], 1, 1)))


# ---------------------------------------------------------------------------
# network forwards
# ---------------------------------------------------------------------------

def refnet_forward(img: T.Tensor, p: T.Tensor, params, cfg: ArchConfig) -> T.Tensor:
    """Reflectance from an image and its degradation representation."""
    if img.shape[-2:] != p.shape[-2:]:
        raise T.ShapeError(
            f"image {img.shape[-2:]} and prior {p.shape[-2:]} spatial dims differ")
    ps = cfg.patch_size
    grid = (img.shape[-2] // ps, img.shape[-1] // ps)
    feat = _conv_bias(img, params, "ref.stem")
    tok = _tokenize(feat, params["ref.embed.w"], params["ref.embed.b"], ps)
    kv = _pool_to_grid(p, ps)
    for i in range(cfg.ref_blocks):
        tok = _block(tok, kv, params, f"ref.block{i}", cfg.head_count)
    feat = _detokenize(tok, params["ref.unembed.w"], params["ref.unembed.b"],
                       ps, cfg.stem_channels, grid)
    return T.sigmoid(_conv_bias(feat, params, "ref.head"))


def lumnet_forward(img: T.Tensor, params, cfg: ArchConfig) -> T.Tensor:
    """Illumination in (1e-4, 1] via self-attention blocks."""
    ps = cfg.patch_size
    grid = (img.shape[-2] // ps, img.shape[-1] // ps)
    feat = _conv_bias(img, params, "lum.stem")
    tok = _tokenize(feat, params["lum.embed.w"], params["lum.embed.b"], ps)
    for i in range(cfg.lum_blocks):
        tok = _block(tok, tok, params, f"lum.block{i}", cfg.head_count)
    feat = _detokenize(tok, params["lum.unembed.w"], params["lum.unembed.b"],
                       ps, cfg.stem_channels, grid)
    y = T.sigmoid(_conv_bias(feat, params, "lum.head"))
    return T.add(T.mul(y, 1.0 - L_FLOOR), L_FLOOR)


def lcnet_forward(l: T.Tensor, params, cfg: ArchConfig) -> T.Tensor:
    """Scalar correction exponent in (0.05, 1] from the illumination map."""
    ps = cfg.patch_size
    tok = _tokenize(l, params["lc.embed.w"], params["lc.embed.b"], ps)
    for i in range(cfg.lc_blocks):
        tok = _block(tok, tok, params, f"lc.block{i}", cfg.head_count)
    pooled = T.reduce_mean(tok, axes=(1,))
    hidden = T.tanh(_linear(pooled, params, "lc.fc1"))
    z = T.sigmoid(_linear(hidden, params, "lc.fc2"))
    return T.add(T.mul(z, 1.0 - ALPHA_FLOOR), ALPHA_FLOOR)


@dataclass
class RetinexDecomp:
    """Differentiable decomposition of one image (all NCHW tensors)."""

    r: T.Tensor
    l: T.Tensor
    alpha: T.Tensor
    i_en: T.Tensor

    @property
    def alpha_value(self) -> float:
        return float(self.alpha.data.reshape(-1)[0])

    def r_image(self) -> np.ndarray:
        return self.r.data[0].transpose(1, 2, 0)

    def l_image(self) -> np.ndarray:
        return self.l.data[0].transpose(1, 2, 0)

    def enhanced_image(self) -> np.ndarray:
        return self.i_en.data[0].transpose(1, 2, 0)


def _pad_multiple(pixels: np.ndarray, multiple: int) -> np.ndarray:
    h, w = pixels.shape[:2]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return pixels
    return np.pad(pixels, ((0, ph), (0, pw), (0, 0)), mode="edge")


def to_nchw(pixels: np.ndarray) -> T.Tensor:
    return T.constant(np.ascontiguousarray(pixels.transpose(2, 0, 1))[None])


def denet_forward(pixels: np.ndarray, params, cfg: ArchConfig,
                  t: int | None = None) -> RetinexDecomp:
    """Full decomposition of an (H, W, 3) image.

    Sizes not divisible by the patch size are edge-padded for the networks
    and cropped back, so any image (odd sizes included) is accepted.
    """
    h, w = pixels.shape[:2]
    padded = _pad_multiple(np.asarray(pixels, dtype=np.float64), cfg.patch_size)
    stack = priors.prior_stack(padded, t)
    p = priors.encode_priors(stack, params["encoder.w1"], params["encoder.b1"],
                             params["encoder.w2"], params["encoder.b2"])
    img = to_nchw(padded)
    r = refnet_forward(img, p, params, cfg)
    l = lumnet_forward(img, params, cfg)
    if padded.shape[:2] != (h, w):
        r = T.take(r, (slice(None), slice(None), slice(0, h), slice(0, w)))
        l = T.take(l, (slice(None), slice(None), slice(0, h), slice(0, w)))
    alpha = lcnet_any_size(l, params, cfg)
    i_en = T.mul(r, T.power(l, T.reshape(alpha, (1, 1, 1, 1))))
    return RetinexDecomp(r=r, l=l, alpha=alpha, i_en=i_en)


def lcnet_any_size(l: T.Tensor, params, cfg: ArchConfig) -> T.Tensor:
    """Correction net on an illumination map of any size (edge-pads to patch)."""
    ph = (-l.shape[-2]) % cfg.patch_size
    pw = (-l.shape[-1]) % cfg.patch_size
    if ph or pw:
        l = T.pad2d_edge(l, ph, pw)
    return lcnet_forward(l, params, cfg)
