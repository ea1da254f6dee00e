"""Image loading, saving, cropping, and augmentation.

Images are plain float64 numpy arrays of shape (H, W, 3) with values in
[0, 1], obtained from 8-bit files as raw/255 exactly.  Supported formats are
8-bit PNG (RGB or grayscale, via Pillow) and binary PPM (P6, parsed here so
golden test files can be written by hand).
"""

from __future__ import annotations

import os

import numpy as np
from PIL import Image

EXTENSIONS = (".png", ".ppm")


class ImageError(ValueError):
    """File could not be decoded as a supported 8-bit image."""


def _validate(arr: np.ndarray) -> np.ndarray:
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ImageError(f"expected HxWx3 pixels, got shape {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ImageError("image has zero dimensions")
    return np.ascontiguousarray(arr, dtype=np.float64)


def _load_ppm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P6"):
        raise ImageError(f"{path}: not a binary PPM (P6) file")

    # header tokens: magic, width, height, maxval; '#' comments run to newline
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageError(f"{path}: truncated PPM header")
        fields.append(data[start:pos])
    pos += 1  # single whitespace byte after maxval

    try:
        width, height, maxval = (int(f) for f in fields)
    except ValueError as exc:
        raise ImageError(f"{path}: malformed PPM header") from exc
    if maxval != 255:
        raise ImageError(f"{path}: only 8-bit PPM supported (maxval {maxval})")
    if width <= 0 or height <= 0:
        raise ImageError(f"{path}: zero dimensions")
    need = width * height * 3
    raw = data[pos : pos + need]
    if len(raw) < need:
        raise ImageError(f"{path}: truncated PPM pixel data")
    return np.frombuffer(raw, dtype=np.uint8).reshape(height, width, 3).astype(np.float64)


def _save_ppm(path: str, quantized: np.ndarray) -> None:
    h, w, _ = quantized.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(quantized.tobytes())


def load_image(path: str) -> np.ndarray:
    """Decode a PNG or PPM file to float64 (H, W, 3) with values raw/255.

    Grayscale PNGs are replicated to three identical channels.
    """
    ext = os.path.splitext(path)[1].lower()
    if ext == ".ppm":
        return _validate(_load_ppm(path) / 255.0)
    if ext != ".png":
        raise ImageError(f"{path}: unsupported format {ext!r}")
    try:
        with Image.open(path) as img:
            if img.mode == "L":
                arr = np.asarray(img, dtype=np.float64)[:, :, None].repeat(3, axis=2)
            elif img.mode == "RGB":
                arr = np.asarray(img, dtype=np.float64)
            else:
                raise ImageError(f"{path}: unsupported PNG mode {img.mode!r}")
    except ImageError:
        raise
    except Exception as exc:
        raise ImageError(f"{path}: cannot decode PNG ({exc})") from exc
    return _validate(arr / 255.0)


def save_image(path: str, pixels: np.ndarray) -> None:
    """Clamp to [0,1], quantize to 8 bits, and write PNG or PPM by extension."""
    arr = _validate(np.asarray(pixels, dtype=np.float64))
    quantized = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    ext = os.path.splitext(path)[1].lower()
    if ext == ".ppm":
        _save_ppm(path, quantized)
    elif ext == ".png":
        Image.fromarray(quantized, mode="RGB").save(path, format="PNG")
    else:
        raise ImageError(f"{path}: unsupported format {ext!r}")


def list_images(directory: str) -> list[str]:
    """Paths of all supported images under ``directory``, sorted by name."""
    if not os.path.isdir(directory):
        raise ImageError(f"{directory}: not a directory")
    names = [n for n in os.listdir(directory)
             if os.path.splitext(n)[1].lower() in EXTENSIONS]
    return [os.path.join(directory, n) for n in sorted(names)]


def random_crop(pixels: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """Contiguous square crop with offsets drawn uniformly from ``rng``.

    ``size`` must be even (downstream masking halves each dimension) and no
    larger than either image dimension.  Draw order is fixed: top, then left.
    """
    h, w = pixels.shape[:2]
    if size % 2 != 0:
        raise ValueError(f"crop size must be even, got {size}")
    if size > h or size > w:
        raise ValueError(f"crop size {size} exceeds image {h}x{w}")
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return np.ascontiguousarray(pixels[top : top + size, left : left + size])


def augment(pixels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Randomly composed horizontal flip, vertical flip, and 90-degree turn.

    Each transform is included by an independent coin flip; draw order is
    fixed (h-flip, v-flip, rotation) so seeded runs reproduce exactly.
    """
    out = pixels
    if rng.integers(0, 2) == 1:
        out = out[:, ::-1, :]
    if rng.integers(0, 2) == 1:
        out = out[::-1, :, :]
    if rng.integers(0, 2) == 1:
        out = np.rot90(out, k=1, axes=(0, 1))
    return np.ascontiguousarray(out)
