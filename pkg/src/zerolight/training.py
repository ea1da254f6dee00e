"""Deterministic training loop, inference, and the smoke data generator.

Every random decision of a run (parameter init, epoch shuffles, crop offsets,
augmentation flips, mask draws, gamma factors) is drawn from one root
generator seeded by the config, in a fixed order, so two runs with the same
config produce byte-identical logs and checkpoints, and a resumed run
continues the interrupted draw sequence bit-exactly.

A training step builds the masked pair, decomposes both sub-images, runs the
reflectance network once more on the full crop (for the masking regularizer),
assembles the weighted loss, backpropagates, and applies Adam.  A non-finite
loss aborts the run after writing a diagnostic dump; silently skipping such
steps would hide gradient bugs.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, fields

import numpy as np

from . import checkpoint as ckpt
from . import imageio, loss, networks, pairing, priors
from . import tensor as T
from .optim import Adam

LOG_COLUMNS = ("iter", "l_r", "l_reg", "l_l", "l_con", "l_enh",
               "total", "alpha", "sigma")
TILE_CAP = 1024
_REFERENCE_DIR_NAMES = {"reference", "references", "gt", "groundtruth",
                        "ground_truth"}


class TrainingError(RuntimeError):
    """Configuration or runtime failure that invalidates the run."""


@dataclass
class TrainConfig:
    """Flat run configuration; file keys and CLI flags mirror these names."""

    data_dir: str = ""
    out_dir: str = ""
    seed: int = 123
    learning_rate: float = 1e-5
    epochs: int = 100
    batch_size: int = 1
    crop_size: int = 256
    sigma_low: float = 1.3
    sigma_high: float = 1.7
    mask_strategy: str = "neighbor"
    bandwidth_t: int = 0  # 0 selects the size-scaled default
    checkpoint_every: int = 0  # iterations; 0 saves only the final state
    resume: str = ""
    # loss weights
    w_r: float = 1.0
    w_l: float = 1.0
    w_con: float = 0.1
    w_enh: float = 1.0
    w_reg: float = 1.0
    w_exp: float = 1.0
    w_col: float = 0.5
    e_target: float = 0.6
    loss_patch_size: int = 16
    # architecture
    patch_size: int = 4
    stem_channels: int = 16
    token_dim: int = 32
    head_count: int = 2
    ref_blocks: int = 2
    lum_blocks: int = 2
    lc_blocks: int = 1
    prior_channels: int = 16

    def arch(self) -> networks.ArchConfig:
        return networks.ArchConfig(
            patch_size=self.patch_size, stem_channels=self.stem_channels,
            token_dim=self.token_dim, head_count=self.head_count,
            ref_blocks=self.ref_blocks, lum_blocks=self.lum_blocks,
            lc_blocks=self.lc_blocks, prior_channels=self.prior_channels)

    def weights(self) -> loss.LossWeights:
        return loss.LossWeights(
            w_r=self.w_r, w_l=self.w_l, w_con=self.w_con, w_enh=self.w_enh,
            w_reg=self.w_reg, w_exp=self.w_exp, w_col=self.w_col,
            e_target=self.e_target, patch_size=self.loss_patch_size)

    def bandwidth(self) -> int | None:
        return self.bandwidth_t if self.bandwidth_t > 0 else None

    def validate(self) -> None:
        for name in ("seed", "learning_rate", "epochs", "batch_size",
                     "crop_size", "sigma_low", "sigma_high"):
            if getattr(self, name) <= 0:
                raise TrainingError(f"{name} must be positive")
        if self.sigma_low <= 1.0 or self.sigma_high <= self.sigma_low:
            raise TrainingError(
                f"sigma interval must satisfy 1 < low < high, got "
                f"({self.sigma_low}, {self.sigma_high})")
        if self.mask_strategy not in pairing.STRATEGIES:
            raise TrainingError(f"unknown mask_strategy {self.mask_strategy!r}")
        if self.crop_size % (2 * self.patch_size) != 0:
            raise TrainingError(
                f"crop_size {self.crop_size} must be a multiple of twice the "
                f"token patch size ({2 * self.patch_size}) so sub-images tokenize")
        sub_h = self.crop_size // 2
        if sub_h % self.loss_patch_size != 0 or self.crop_size % self.loss_patch_size != 0:
            raise TrainingError(
                f"loss_patch_size {self.loss_patch_size} must divide both the "
                f"crop ({self.crop_size}) and its half ({sub_h})")
        self.arch()
        self.weights()

    def echo(self) -> dict:
        """Config as checkpointable plain data.

        Paths and the resume pointer are excluded: they describe where a run
        lives, not what it computes, and including them would break the
        byte-identity contract between a straight and a resumed run.
        """
        skip = {"data_dir", "out_dir", "resume"}
        out = {}
        for f in fields(self):
            if f.name not in skip:
                out[f.name] = getattr(self, f.name)
        return out


_BOOL_STRINGS = {"true": True, "false": False}


def parse_config_file(path: str) -> dict:
    """Read flat `key = value` lines; '#' starts a comment."""
    known = {f.name: f.type for f in fields(TrainConfig)}
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise TrainingError(f"{path}:{lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in known:
                raise TrainingError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = _coerce(key, value)
    return out


def _coerce(key: str, value: str):
    current = getattr(TrainConfig(), key)
    if isinstance(current, bool):
        if value.lower() not in _BOOL_STRINGS:
            raise TrainingError(f"{key}: expected true/false, got {value!r}")
        return _BOOL_STRINGS[value.lower()]
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float):
        return float(value)
    return value


def list_training_images(data_dir: str) -> list[str]:
    """Dataset paths, refusing layouts that smuggle in reference images."""
    base = os.path.basename(os.path.normpath(data_dir)).lower()
    if base in _REFERENCE_DIR_NAMES:
        raise TrainingError(
            f"{data_dir}: looks like a reference/ground-truth directory; "
            f"training is zero-reference and must not read it")
    for entry in sorted(os.listdir(data_dir)):
        full = os.path.join(data_dir, entry)
        if os.path.isdir(full) and entry.lower() in _REFERENCE_DIR_NAMES:
            raise TrainingError(
                f"{data_dir} contains {entry!r}; keep reference images out of "
                f"the training directory (zero-reference guarantee)")
    paths = imageio.list_images(data_dir)
    if not paths:
        raise TrainingError(f"{data_dir}: no PNG or PPM images found")
    return paths


# ---------------------------------------------------------------------------
# one step
# ---------------------------------------------------------------------------

def compute_losses(crop: np.ndarray, pair: pairing.SubImagePair, params,
                   arch: networks.ArchConfig, weights: loss.LossWeights,
                   t: int | None = None):
    """All loss terms for a fixed crop and pair (no randomness inside).

    Returns (total tensor, LossBreakdown, decomposition of the first
    sub-image).  Keeping this pure lets finite-difference tests re-evaluate
    the identical objective while nudging single parameters.
    """
    dec1 = networks.denet_forward(pair.d1, params, arch, t)
    dec2 = networks.denet_forward(pair.d2_enhanced, params, arch, t)

    # reflectance of the full crop, pushed through the identical mask routes
    full_stack = priors.prior_stack(crop, t)
    p_full = priors.encode_priors(full_stack,
                                  params["encoder.w1"], params["encoder.b1"],
                                  params["encoder.w2"], params["encoder.b2"])
    r_full = networks.refnet_forward(networks.to_nchw(crop), p_full, params, arch)
    fm1, fm2 = pair.selection.apply_tensor(r_full)
    fm2 = T.power(fm2, pair.lam)  # the second route is gamma-corrected

    d1_t = networks.to_nchw(pair.d1)
    l_reg_t = loss.loss_reg(dec1.r, dec2.r, (fm1, fm2))
    l_r_t = loss.loss_r(dec1.r, dec2.r, l_reg_t, weights.w_reg)
    l_l_t = loss.loss_l(dec1.r, dec1.l, d1_t)
    l_con_t = loss.loss_con(dec1.i_en, d1_t, weights.patch_size)
    l_enh_t = loss.loss_enh(dec1.i_en, weights)
    total = loss.total_loss(l_r_t, l_l_t, l_con_t, l_enh_t, weights)

    breakdown = loss.LossBreakdown(
        l_r=l_r_t.item(), l_reg=l_reg_t.item(), l_l=l_l_t.item(),
        l_con=l_con_t.item(), l_enh=l_enh_t.item(), total=total.item())
    return total, breakdown, dec1


def train_step(crop: np.ndarray, params, optimizer: Adam,
               config: TrainConfig, rng: np.random.Generator):
    """Pair generation, loss, backward, and one optimizer update."""
    pair = pairing.make_pair(crop, (config.sigma_low, config.sigma_high),
                             config.mask_strategy, rng)
    total, breakdown, dec1 = compute_losses(
        crop, pair, params, config.arch(), config.weights(),
        config.bandwidth())
    if not np.isfinite(breakdown.total):
        raise TrainingError(f"non-finite loss: {breakdown}")
    optimizer.zero_grad()
    total.backward()
    optimizer.step()
    return breakdown, dec1.alpha_value, pair.sigma


# ---------------------------------------------------------------------------
# the run
# ---------------------------------------------------------------------------

def _float_repr(v: float) -> str:
    return repr(float(v))


def _save_state(path, params, optimizer, rng, config, iteration, epoch,
                perm, perm_pos):
    ckpt.save_checkpoint(
        path, params=params, adam_m=optimizer.m, adam_v=optimizer.v,
        adam_t=optimizer.t, rng_state=rng.bit_generator.state,
        config=config.echo(), iteration=iteration, epoch=epoch,
        perm=list(perm), perm_pos=perm_pos)


def run_training(config: TrainConfig, progress=None) -> str:
    """Full training run; returns the final checkpoint path."""
    config.validate()
    if not config.data_dir:
        raise TrainingError("data_dir is required")
    if not config.out_dir:
        raise TrainingError("out_dir is required")
    paths = list_training_images(config.data_dir)
    os.makedirs(config.out_dir, exist_ok=True)

    arch = config.arch()
    rng = np.random.Generator(np.random.PCG64(config.seed))
    params = networks.init_params(arch, rng)
    optimizer = Adam(params, lr=config.learning_rate)
    iteration = 0
    start_epoch = 0
    perm = None
    perm_pos = 0

    if config.resume:
        state = ckpt.load_checkpoint(config.resume)
        if state["config"] != config.echo():
            raise TrainingError(
                "resume checkpoint was produced by a different configuration")
        for name, p in params.items():
            if name not in state["params"]:
                raise TrainingError(f"checkpoint is missing parameter {name!r}")
            p.data = state["params"][name]
        optimizer.m = state["adam_m"]
        optimizer.v = state["adam_v"]
        optimizer.t = state["adam_t"]
        rng.bit_generator.state = state["rng_state"]
        iteration = state["iteration"]
        start_epoch = state["epoch"]
        perm = np.asarray(state["perm"], dtype=np.int64)
        perm_pos = state["perm_pos"]

    log_path = os.path.join(config.out_dir, "train_log.csv")
    fresh_log = not (config.resume and os.path.exists(log_path))
    log_file = open(log_path, "w" if fresh_log else "a",
                    encoding="utf-8", newline="")
    writer = csv.writer(log_file)
    if fresh_log:
        writer.writerow(LOG_COLUMNS)

    cache: dict[str, np.ndarray] = {}

    def load(path):
        if path not in cache:
            cache[path] = imageio.load_image(path)
        return cache[path]

    try:
        pending_in_batch = 0
        for epoch in range(start_epoch, config.epochs):
            if perm is None:
                perm = rng.permutation(len(paths))
                perm_pos = 0
            while perm_pos < len(perm):
                img = load(paths[int(perm[perm_pos])])
                crop = imageio.random_crop(img, config.crop_size, rng)
                crop = imageio.augment(crop, rng)

                pair = pairing.make_pair(
                    crop, (config.sigma_low, config.sigma_high),
                    config.mask_strategy, rng)
                total, breakdown, dec1 = compute_losses(
                    crop, pair, params, arch, config.weights(),
                    config.bandwidth())
                if not np.isfinite(breakdown.total):
                    _dump_diagnostic(config.out_dir, breakdown, pair,
                                     iteration, epoch, paths[int(perm[perm_pos])])
                    raise TrainingError(
                        f"non-finite loss at iteration {iteration + 1}; "
                        f"diagnostic written to {config.out_dir}")
                if pending_in_batch == 0:
                    optimizer.zero_grad()
                T.mul(total, 1.0 / config.batch_size).backward()
                pending_in_batch += 1
                if pending_in_batch == config.batch_size:
                    optimizer.step()
                    pending_in_batch = 0

                iteration += 1
                perm_pos += 1
                writer.writerow(
                    [iteration] + [_float_repr(v) for v in (
                        breakdown.l_r, breakdown.l_reg, breakdown.l_l,
                        breakdown.l_con, breakdown.l_enh, breakdown.total,
                        dec1.alpha_value, pair.sigma)])
                if progress is not None:
                    progress(iteration, breakdown)
                if (config.checkpoint_every > 0
                        and iteration % config.checkpoint_every == 0):
                    log_file.flush()
                    _save_state(
                        os.path.join(config.out_dir,
                                     f"checkpoint_{iteration:07d}.ckpt"),
                        params, optimizer, rng, config, iteration,
                        epoch, perm, perm_pos)
            if pending_in_batch:  # flush a partial batch at epoch end
                optimizer.step()
                pending_in_batch = 0
            perm = None
            perm_pos = 0
            start_epoch = epoch + 1
    finally:
        log_file.close()

    final_path = os.path.join(config.out_dir, "final.ckpt")
    _save_state(final_path, params, optimizer, rng, config, iteration,
                start_epoch, [], 0)
    return final_path


def _dump_diagnostic(out_dir, breakdown, pair, iteration, epoch, image_path):
    payload = {
        "iteration": iteration + 1,
        "epoch": epoch,
        "image": image_path,
        "sigma": pair.sigma,
        "lambda": pair.lam,
        "loss": {k: getattr(breakdown, k) for k in
                 ("l_r", "l_reg", "l_l", "l_con", "l_enh", "total")},
    }
    with open(os.path.join(out_dir, "nonfinite_loss.json"), "w",
              encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------

def load_trained(checkpoint_path: str):
    """Rebuild parameters and config from a checkpoint, ready for inference."""
    state = ckpt.load_checkpoint(checkpoint_path)
    config = TrainConfig(**{k: v for k, v in state["config"].items()
                            if k in {f.name for f in fields(TrainConfig)}})
    params = {name: T.Tensor(arr, requires_grad=True)
              for name, arr in state["params"].items()}
    expected = {name for name, _, _ in networks.parameter_specs(config.arch())}
    if set(params) != expected:
        raise ckpt.CheckpointError(
            "checkpoint parameters do not match its architecture config")
    return params, config


def enhance_image(pixels: np.ndarray, params, arch: networks.ArchConfig,
                  t: int | None = None, tile_cap: int = TILE_CAP):
    """Enhance one image, tiling when a side exceeds the attention cap.

    Returns (enhanced [0,1], reflectance, illumination, mean alpha).
    """
    h, w = pixels.shape[:2]
    if h <= tile_cap and w <= tile_cap:
        dec = networks.denet_forward(pixels, params, arch, t)
        return (np.clip(dec.enhanced_image(), 0.0, 1.0),
                dec.r_image(), dec.l_image(), dec.alpha_value)
    i_en = np.empty_like(pixels)
    r = np.empty_like(pixels)
    l = np.empty_like(pixels)
    alphas = []
    for top in range(0, h, tile_cap):
        for left in range(0, w, tile_cap):
            tile = pixels[top : top + tile_cap, left : left + tile_cap]
            dec = networks.denet_forward(tile, params, arch, t)
            sl = (slice(top, top + tile.shape[0]),
                  slice(left, left + tile.shape[1]))
            i_en[sl] = np.clip(dec.enhanced_image(), 0.0, 1.0)
            r[sl] = dec.r_image()
            l[sl] = dec.l_image()
            alphas.append(dec.alpha_value)
    return i_en, r, l, float(np.mean(alphas))


# ---------------------------------------------------------------------------
# smoke data
# ---------------------------------------------------------------------------

def smoke_train_config(data_dir: str, out_dir: str,
                       epochs: int = 25) -> TrainConfig:
    """Desk-scale setup for the synthetic smoke corpus.

    The full-run default learning rate (1e-5) moves parameters far too little
    for a visible trend within a couple hundred iterations, so the smoke run
    raises it to 3e-4 and doubles the illumination weight, which keeps
    r*l faithful to the input while the exposure terms brighten the output.
    """
    return TrainConfig(data_dir=data_dir, out_dir=out_dir, epochs=epochs,
                       crop_size=64, learning_rate=3e-4, w_l=2.0)


def make_smoke_corpus(out_dir: str, count: int = 8, size: int = 64,
                      seed: int = 11) -> list[str]:
    """Synthetic dark images: smooth content, dim illumination, shot noise.

    Content is a random low-frequency cosine field; illumination a dimmer
    one; noise is zero-mean with variance proportional to intensity.
    """
    rng = np.random.default_rng(seed)
    os.makedirs(out_dir, exist_ok=True)
    yy, xx = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size),
                         indexing="ij")
    paths = []
    for i in range(count):
        channels = []
        for _ in range(3):
            fx, fy = rng.uniform(0.5, 2.0, size=2)
            phase = rng.uniform(0, 2 * np.pi, size=2)
            fieldc = 0.5 + 0.25 * np.cos(2 * np.pi * fx * xx + phase[0]) \
                + 0.2 * np.cos(2 * np.pi * fy * yy + phase[1])
            channels.append(fieldc)
        clean = np.clip(np.stack(channels, axis=2), 0.05, 1.0)
        gx, gy = rng.uniform(0.3, 1.0, size=2)
        gphase = rng.uniform(0, 2 * np.pi)
        illum = 0.12 + 0.08 * np.cos(2 * np.pi * (gx * xx + gy * yy) + gphase)
        dark = clean * illum[:, :, None]
        noise = rng.normal(size=dark.shape) * np.sqrt(dark * 0.002)
        noisy = np.clip(dark + noise, 0.0, 1.0)
        path = os.path.join(out_dir, f"smoke_{i:02d}.png")
        imageio.save_image(path, noisy)
        paths.append(path)
    return paths
