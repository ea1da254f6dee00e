"""Versioned binary checkpoints.

Layout::

    bytes 0..7    magic  b"ZLCHKPT1"
    bytes 8..15   header length N, unsigned 64-bit little-endian
    bytes 16..16+N  UTF-8 JSON header (sorted keys, no whitespace)
    remainder     raw little-endian float64 buffers, in header order:
                  every parameter, then its Adam first moment, then its
                  second moment (grouped per kind, ordered by the header's
                  tensor list)

The header carries the training config echo, iteration/epoch counters, the
RNG bit-generator state, the in-progress epoch permutation with its cursor,
the Adam step count, and the ordered (name, shape) tensor list.  All content
is deterministic, so saving, loading, and saving again yields byte-identical
files, the property the trainer's resume contract is built on.
"""

from __future__ import annotations

import json
import os

import numpy as np

MAGIC = b"ZLCHKPT1"


class CheckpointError(ValueError):
    """File is not a readable checkpoint of this version."""


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _buffer(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def save_checkpoint(path: str, *, params: dict, adam_m: dict, adam_v: dict,
                    adam_t: int, rng_state: dict, config: dict,
                    iteration: int, epoch: int,
                    perm: list[int], perm_pos: int) -> None:
    """Write all training state; parameter order follows the params dict."""
    names = list(params.keys())
    if set(adam_m) != set(names) or set(adam_v) != set(names):
        raise CheckpointError("optimizer moments do not cover the parameters")
    header = {
        "version": 1,
        "config": config,
        "iteration": int(iteration),
        "epoch": int(epoch),
        "adam_t": int(adam_t),
        "rng_state": rng_state,
        "perm": [int(i) for i in perm],
        "perm_pos": int(perm_pos),
        "tensors": [{"name": n, "shape": list(params[n].shape)} for n in names],
    }
    blob = _canonical_json(header)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.uint64(len(blob)).tobytes())
        fh.write(blob)
        for n in names:
            fh.write(_buffer(params[n].data))
        for n in names:
            fh.write(_buffer(adam_m[n]))
        for n in names:
            fh.write(_buffer(adam_v[n]))
    os.replace(tmp, path)


def load_checkpoint(path: str) -> dict:
    """Read a checkpoint into a dict of arrays plus the header fields.

    Returns keys: config, iteration, epoch, adam_t, rng_state, perm,
    perm_pos, params, adam_m, adam_v (the three tensor dicts map names to
    float64 arrays).
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(MAGIC) + 8 or not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    n = int(np.frombuffer(data[8:16], dtype="<u8")[0])
    if len(data) < 16 + n:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(data[16 : 16 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    if header.get("version") != 1:
        raise CheckpointError(f"{path}: unsupported version {header.get('version')}")

    offset = 16 + n
    tensors = header["tensors"]
    sizes = [int(np.prod(t["shape"])) if t["shape"] else 1 for t in tensors]
    expected = offset + 8 * 3 * sum(sizes)
    if len(data) != expected:
        raise CheckpointError(
            f"{path}: payload length {len(data)} does not match header ({expected})")

    def read_group():
        nonlocal offset
        group = {}
        for t, size in zip(tensors, sizes):
            raw = np.frombuffer(data, dtype="<f8", count=size, offset=offset)
            group[t["name"]] = raw.reshape(t["shape"]).copy()
            offset += 8 * size
        return group

    return {
        "config": header["config"],
        "iteration": header["iteration"],
        "epoch": header["epoch"],
        "adam_t": header["adam_t"],
        "rng_state": header["rng_state"],
        "perm": header["perm"],
        "perm_pos": header["perm_pos"],
        "params": read_group(),
        "adam_m": read_group(),
        "adam_v": read_group(),
    }
