"""Versioned binary checkpoints for the mask-formation head.

Layout (all integers little-endian):

  magic    4 bytes  b"HSCK"
  version  u32      currently 1
  config   6 × u32  n_queries, embed_dim, query_dim, n_layers,
                    n_classes, feature_channels
           f64      learning_rate
           u32      epochs
           u64      seed
  count    u32      number of tensors
  tensors  repeated: u16 name length, name (utf-8), u8 ndim,
                     ndim × u32 dims, then f64-LE values row-major

Tensor order and names come from ``head.param_items``, so a checkpoint
fully determines the parameter structure and loads bit-exactly.
"""

from __future__ import annotations

import struct
from typing import Tuple

import numpy as np

from .head import HeadConfig, ModelParams, init_model, param_items

MAGIC = b"HSCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: ModelParams) -> None:
    cfg = params.config
    items = param_items(params)
    parts = [MAGIC, struct.pack("<I", VERSION)]
    parts.append(struct.pack(
        "<6IdIQ", cfg.n_queries, cfg.embed_dim, cfg.query_dim, cfg.n_layers,
        cfg.n_classes, cfg.feature_channels, cfg.learning_rate, cfg.epochs,
        cfg.seed & ((1 << 64) - 1)))
    parts.append(struct.pack("<I", len(items)))
    for name, arr in items:
        blob = name.encode("utf-8")
        # note: ascontiguousarray would promote 0-d tensors to 1-d
        a = np.asarray(arr, dtype="<f8", order="C")
        parts.append(struct.pack("<H", len(blob)))
        parts.append(blob)
        parts.append(struct.pack("<B", a.ndim))
        for dim in a.shape:
            parts.append(struct.pack("<I", dim))
        parts.append(a.tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(parts))


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as f:
        blob = f.read()
    off = 0

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(blob):
            raise CheckpointError(f"{path}: truncated at offset {off}")
        vals = struct.unpack_from(fmt, blob, off)
        off += size
        return vals

    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}")
    off = 4
    (version,) = take("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    nq, ce, cq, nl, nc, cf, lr, epochs, seed = take("<6IdIQ")
    cfg = HeadConfig(n_queries=nq, embed_dim=ce, query_dim=cq, n_layers=nl,
                     n_classes=nc, feature_channels=cf, learning_rate=lr,
                     epochs=epochs, seed=seed)
    (count,) = take("<I")

    # materialize the structure, then fill tensors by name
    params = init_model(cfg, np.random.default_rng(0))
    slots = dict(param_items(params))
    if count != len(slots):
        raise CheckpointError(
            f"{path}: {count} tensors on disk, config implies {len(slots)}")
    for _ in range(count):
        (name_len,) = take("<H")
        name = blob[off:off + name_len].decode("utf-8")
        off += name_len
        (ndim,) = take("<B")
        shape = tuple(take("<I")[0] for _ in range(ndim))
        n_values = int(np.prod(shape)) if shape else 1
        size = 8 * n_values
        if off + size > len(blob):
            raise CheckpointError(f"{path}: truncated tensor {name!r} at offset {off}")
        arr = np.frombuffer(blob, dtype="<f8", count=n_values, offset=off).reshape(shape)
        off += size
        if name not in slots:
            raise CheckpointError(f"{path}: unexpected tensor {name!r}")
        slot = slots[name]
        if slot.shape != arr.shape:
            raise CheckpointError(
                f"{path}: tensor {name!r} shape {arr.shape}, expected {slot.shape}")
        slot[...] = arr
    if off != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - off} trailing bytes at offset {off}")
    return params
