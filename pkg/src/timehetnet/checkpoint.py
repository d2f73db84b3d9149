"""Flat binary parameter checkpoints.

Layout (all integers little-endian):

    magic   b"THNC"
    u32     format version
    u32     metadata length, then that many bytes of UTF-8 JSON
    u32     entry count
    entries sorted by path, each:
        u16     path length, then that many bytes of UTF-8 path
        u8      rank
        u32[r]  dims
        f64[n]  row-major payload

Paths are stable "network/layer/tensor" strings, so checkpoints survive
refactors that keep the naming scheme.  Metadata carries whatever the
caller needs to rebuild the owning model (kind, variant, widths, seed).
"""

from __future__ import annotations

import json
import struct
from typing import Mapping

import numpy as np

from .tensor import Tensor

MAGIC = b"THNC"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: Mapping[str, Tensor | np.ndarray],
                    meta: dict | None = None) -> None:
    entries = []
    for name in sorted(params):
        value = params[name]
        data = value.data if isinstance(value, Tensor) else np.asarray(value)
        data = np.asarray(data, dtype=np.float64)
        encoded = name.encode("utf-8")
        entries.append(
            struct.pack("<H", len(encoded)) + encoded
            + struct.pack("<B", data.ndim)
            + struct.pack(f"<{data.ndim}I", *data.shape)
            + data.astype("<f8").tobytes())
    blob = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(entries)))
        for entry in entries:
            fh.write(entry)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    offset = 4
    version, = struct.unpack_from("<I", raw, offset)
    offset += 4
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version "
                              f"{version} (expected {VERSION})")
    meta_len, = struct.unpack_from("<I", raw, offset)
    offset += 4
    meta = json.loads(raw[offset:offset + meta_len].decode("utf-8"))
    offset += meta_len
    count, = struct.unpack_from("<I", raw, offset)
    offset += 4
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len, = struct.unpack_from("<H", raw, offset)
        offset += 2
        name = raw[offset:offset + name_len].decode("utf-8")
        offset += name_len
        rank, = struct.unpack_from("<B", raw, offset)
        offset += 1
        shape = struct.unpack_from(f"<{rank}I", raw, offset)
        offset += 4 * rank
        n = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(raw, dtype="<f8", count=n, offset=offset)
        offset += 8 * n
        params[name] = data.reshape(shape).astype(np.float64)
    if offset != len(raw):
        raise CheckpointError(f"{path}: trailing bytes after last entry")
    return params, meta


def save_model(path, model, extra_meta: dict | None = None) -> None:
    """Persist any model exposing kind + named_parameters()."""
    meta = {"model": model.kind}
    if model.kind == "timehetnet":
        meta.update(variant=model.variant, k_inf=model.k_inf,
                    k_pred=model.k_pred, share_weights=model.share_weights,
                    seed=model.seed)
    elif model.kind == "hetnet":
        meta.update(k=model.k, share_weights=model.share_weights,
                    seed=model.seed)
    if extra_meta:
        meta.update(extra_meta)
    save_checkpoint(path, dict(model.named_parameters()), meta)


def load_model(path):
    """Rebuild a model from a checkpoint written by save_model."""
    from .model import HetNet, TimeHetNet  # deferred to avoid a cycle

    params, meta = load_checkpoint(path)
    kind = meta.get("model")
    if kind == "timehetnet":
        model = TimeHetNet(variant=meta["variant"], k_inf=meta["k_inf"],
                           k_pred=meta["k_pred"],
                           share_weights=meta["share_weights"],
                           seed=meta.get("seed", 0))
    elif kind == "hetnet":
        model = HetNet(k=meta["k"], share_weights=meta["share_weights"],
                       seed=meta.get("seed", 0))
    else:
        raise CheckpointError(f"{path}: unknown model kind {kind!r}")
    restore_parameters(model, params, path)
    return model, meta


def restore_parameters(model, params: Mapping[str, np.ndarray],
                       source: str = "checkpoint") -> None:
    names = dict(model.named_parameters())
    missing = sorted(set(names) - set(params))
    extra = sorted(set(params) - set(names))
    if missing or extra:
        raise CheckpointError(
            f"{source}: parameter paths do not match model "
            f"(missing={missing[:3]}, unexpected={extra[:3]})")
    for name, tensor in names.items():
        value = params[name]
        if value.shape != tensor.shape:
            raise CheckpointError(f"{source}: shape {value.shape} != "
                                  f"{tensor.shape} for {name}")
        tensor.data = value.copy()
