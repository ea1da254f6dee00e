"""Command-line interface.

Subcommands: train, enhance, decompose, priors, pair, eval, selftest.
Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import fields

import numpy as np

from . import imageio, networks, pairing, priors, quality, training
from .checkpoint import CheckpointError
from .training import TrainConfig, TrainingError


def _add_train_config_flags(parser: argparse.ArgumentParser) -> None:
    """One flag per TrainConfig field, same name, given defaults deferred."""
    for f in fields(TrainConfig):
        default = getattr(TrainConfig(), f.name)
        kind = type(default)
        parser.add_argument(f"--{f.name}", type=str if kind is str else kind,
                            default=None, help=f"{f.name} (default {default!r})")


def _build_config(args) -> TrainConfig:
    """File values (if any) overlaid by explicit CLI flags."""
    values = {}
    if args.config:
        values.update(training.parse_config_file(args.config))
    for f in fields(TrainConfig):
        given = getattr(args, f.name, None)
        if given is not None:
            values[f.name] = given
    return TrainConfig(**values)


def _input_paths(in_path: str) -> list[str]:
    if os.path.isdir(in_path):
        paths = imageio.list_images(in_path)
        if not paths:
            raise TrainingError(f"{in_path}: no PNG or PPM images found")
        return paths
    return [in_path]


def _cmd_train(args) -> int:
    config = _build_config(args)

    def report(iteration, breakdown):
        if iteration % args.log_every == 0:
            print(f"iter {iteration}: total {breakdown.total:.6f}", flush=True)

    final = training.run_training(config, progress=report if args.log_every else None)
    print(f"final checkpoint: {final}")
    return 0


def _cmd_enhance(args) -> int:
    params, config = training.load_trained(args.checkpoint)
    os.makedirs(args.out, exist_ok=True)
    t = args.t if args.t > 0 else config.bandwidth()
    for path in _input_paths(getattr(args, "in")):
        pixels = imageio.load_image(path)
        i_en, _, _, alpha = training.enhance_image(
            pixels, params, config.arch(), t, args.tile_cap)
        name = os.path.splitext(os.path.basename(path))[0]
        out_path = os.path.join(args.out, f"{name}_enhanced.png")
        imageio.save_image(out_path, i_en)
        print(f"{path} -> {out_path} (alpha {alpha:.4f})")
    return 0


def _cmd_decompose(args) -> int:
    params, config = training.load_trained(args.checkpoint)
    os.makedirs(args.out, exist_ok=True)
    t = args.t if args.t > 0 else config.bandwidth()
    report = {}
    for path in _input_paths(getattr(args, "in")):
        pixels = imageio.load_image(path)
        i_en, r, l, alpha = training.enhance_image(
            pixels, params, config.arch(), t, args.tile_cap)
        name = os.path.splitext(os.path.basename(path))[0]
        imageio.save_image(os.path.join(args.out, f"{name}_enhanced.png"), i_en)
        imageio.save_image(os.path.join(args.out, f"{name}_reflectance.png"), r)
        imageio.save_image(os.path.join(args.out, f"{name}_illumination.png"), l)
        report[name] = alpha
        print(f"{name}: alpha {alpha:.4f}")
    with open(os.path.join(args.out, "alpha.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    return 0


def _cmd_priors(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    for path in _input_paths(getattr(args, "in")):
        pixels = imageio.load_image(path)
        t = args.t if args.t > 0 else None
        stack = priors.prior_stack(pixels, t)
        name = os.path.splitext(os.path.basename(path))[0]
        maps = {
            "ilu": stack.i_lu.repeat(3, axis=2),
            "low1": stack.c_low1,
            "low2": stack.c_low2,
            "high1": stack.c_high1,
            "high2": stack.c_high2,
        }
        for label, data in maps.items():
            out_path = os.path.join(args.out, f"{name}_{label}.png")
            imageio.save_image(out_path, np.clip(data, 0.0, 1.0))
        print(f"{name}: wrote {len(maps)} prior maps (t={stack.t})")
    return 0


def _cmd_pair(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    pixels = imageio.load_image(getattr(args, "in"))
    rng = np.random.Generator(np.random.PCG64(args.seed))
    pair = pairing.make_pair(pixels, (args.sigma_low, args.sigma_high),
                             args.mask_strategy, rng)
    name = os.path.splitext(os.path.basename(getattr(args, "in")))[0]
    imageio.save_image(os.path.join(args.out, f"{name}_d1.png"), pair.d1)
    imageio.save_image(os.path.join(args.out, f"{name}_d2_enhanced.png"),
                       pair.d2_enhanced)
    meta = {"sigma": pair.sigma, "lambda": pair.lam,
            "strategy": pair.selection.kind, "seed": args.seed}
    with open(os.path.join(args.out, f"{name}_pair.json"), "w",
              encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    print(f"wrote pair for {name}: sigma {pair.sigma:.4f}")
    return 0


def _cmd_eval(args) -> int:
    enhanced = {os.path.basename(p): p for p in _input_paths(args.enhanced)}
    reference = {os.path.basename(p): p for p in _input_paths(args.reference)}
    names = sorted(enhanced)
    if set(names) != set(reference):
        raise TrainingError(
            "enhanced and reference directories hold different file names")
    rows = []
    for name in names:
        a = imageio.load_image(enhanced[name])
        b = imageio.load_image(reference[name])
        rows.append((name, quality.psnr(a, b), quality.ssim(a, b)))
    out_path = args.out
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "psnr", "ssim"])
        for name, p, s in rows:
            writer.writerow([name, repr(p), repr(s)])
        mean_p = float(np.mean([r[1] for r in rows]))
        mean_s = float(np.mean([r[2] for r in rows]))
        writer.writerow(["mean", repr(mean_p), repr(mean_s)])
    print(f"evaluated {len(rows)} images: "
          f"PSNR {mean_p:.3f} dB, SSIM {mean_s:.5f} -> {out_path}")
    return 0


# ---------------------------------------------------------------------------
# selftest
# ---------------------------------------------------------------------------

def _selftest_dct() -> bool:
    rng = np.random.default_rng(11)
    ok = True
    for h, w in ((4, 4), (8, 16), (32, 32), (64, 64)):
        x = rng.normal(size=(h, w))
        ok &= np.abs(priors.idct2(priors.dct2(x)) - x).max() < 1e-9
        ok &= abs(np.linalg.norm(priors.dct2(x)) - np.linalg.norm(x)) < 1e-10
    return bool(ok)


def _selftest_mask() -> bool:
    rng = np.random.default_rng(12)
    img = np.arange(4, dtype=np.float64).reshape(2, 2, 1).repeat(3, axis=2)
    allowed = {(0., 1.), (1., 0.), (0., 2.), (2., 0.),
               (1., 3.), (3., 1.), (2., 3.), (3., 2.)}
    counts: dict = {}
    for _ in range(8000):
        s1, s2 = pairing.neighbor_mask(img, rng)
        key = (float(s1[0, 0, 0]), float(s2[0, 0, 0]))
        counts[key] = counts.get(key, 0) + 1
    if set(counts) != allowed:
        return False
    # 3-sigma band around the uniform expectation of 1000
    sigma = np.sqrt(8000 * (1 / 8) * (7 / 8))
    return all(abs(c - 1000) <= 3 * sigma for c in counts.values())


def _selftest_grad() -> bool:
    from . import tensor as T

    rng = np.random.default_rng(13)
    cfg = networks.ArchConfig(patch_size=4, stem_channels=4, token_dim=8,
                              head_count=2, ref_blocks=1, lum_blocks=1,
                              lc_blocks=1, prior_channels=4)
    params = networks.init_params(cfg, rng)
    img = rng.uniform(0.05, 0.3, (8, 8, 3))

    def value():
        dec = networks.denet_forward(img, params, cfg, t=1)
        return T.reduce_mean(T.mul(dec.i_en, dec.i_en))

    loss_t = value()
    loss_t.backward()
    name = "ref.stem.w"
    p = params[name]
    idx = (0, 0, 1, 1)
    eps = 1e-6
    old = p.data[idx]
    p.data[idx] = old + eps
    up = value().item()
    p.data[idx] = old - eps
    down = value().item()
    p.data[idx] = old
    fd = (up - down) / (2 * eps)
    an = p.grad[idx]
    denom = max(abs(fd), abs(an), 1e-12)
    return abs(fd - an) / denom < 1e-5


def _cmd_selftest(args) -> int:
    checks = [
        ("dct-roundtrip-and-parseval", _selftest_dct),
        ("neighbor-mask-combinatorics", _selftest_mask),
        ("gradient-finite-difference", _selftest_grad),
    ]
    failed = 0
    for name, fn in checks:
        ok = fn()
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
        failed += 0 if ok else 1
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="zerolight",
        description="Zero-reference low-light enhancement with joint denoising")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train on a directory of dark images")
    p_train.add_argument("--config", default="", help="key = value config file")
    p_train.add_argument("--log_every", type=int, default=0,
                         help="print progress every N iterations (0: quiet)")
    _add_train_config_flags(p_train)
    p_train.set_defaults(func=_cmd_train)

    def io_parser(name, help_text, needs_checkpoint=True):
        p = sub.add_parser(name, help=help_text)
        if needs_checkpoint:
            p.add_argument("--checkpoint", required=True)
        p.add_argument("--in", required=True, help="input image or directory")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--t", type=int, default=0,
                       help="frequency bandwidth (0: automatic)")
        return p

    p_enh = io_parser("enhance", "enhance images with a trained checkpoint")
    p_enh.add_argument("--tile_cap", type=int, default=training.TILE_CAP)
    p_enh.set_defaults(func=_cmd_enhance)

    p_dec = io_parser("decompose", "dump reflectance, illumination, and alpha")
    p_dec.add_argument("--tile_cap", type=int, default=training.TILE_CAP)
    p_dec.set_defaults(func=_cmd_decompose)

    p_pri = io_parser("priors", "dump the luminance and frequency-band priors",
                      needs_checkpoint=False)
    p_pri.set_defaults(func=_cmd_priors)

    p_pair = sub.add_parser("pair", help="dump one masked training pair")
    p_pair.add_argument("--in", required=True, help="input image")
    p_pair.add_argument("--out", required=True, help="output directory")
    p_pair.add_argument("--mask_strategy", default="neighbor",
                        choices=pairing.STRATEGIES)
    p_pair.add_argument("--seed", type=int, default=123)
    p_pair.add_argument("--sigma_low", type=float, default=1.3)
    p_pair.add_argument("--sigma_high", type=float, default=1.7)
    p_pair.set_defaults(func=_cmd_pair)

    p_eval = sub.add_parser("eval", help="PSNR/SSIM against references")
    p_eval.add_argument("--enhanced", required=True)
    p_eval.add_argument("--reference", required=True)
    p_eval.add_argument("--out", required=True, help="output CSV path")
    p_eval.set_defaults(func=_cmd_eval)

    p_self = sub.add_parser("selftest", help="run built-in invariant checks")
    p_self.set_defaults(func=_cmd_selftest)
    return parser


def dispatch(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (TrainingError, CheckpointError, imageio.ImageError,
            ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
