"""Bit-exact on-disk formats: LGF label files, features, configs, reports.

The canonical label container is LGF: magic ``LGF1``, u32-LE width, u32-LE
height, then width×height u16-LE row-major labels — file size is exactly
12 + 2·w·h bytes.  Sixteen-bit single-channel PNG can be ingested as an
adapter and yields the same grids.  Report and history JSON are emitted
with fixed key order and fixed float formatting so identical inputs give
identical bytes, whatever the worker count was.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .grids import LabelGrid, PanopticFrame, label_grid

LGF_MAGIC = b"LGF1"

FRAME_DIRS = ("semantics", "plant_instances", "leaf_instances")

REPORT_KEYS = (
    "iou_soil", "iou_crop", "iou_weed",
    "pq_crop", "pq_leaf", "pq_weed",
    "pq", "pq_dagger",
    "rmse_tp", "rmse_pred", "rmse_gt",
    "precision_crop", "recall_crop",
    "n_frames",
)


class FormatError(ValueError):
    """Malformed file content (maps to exit code 2 in the CLI)."""


def write_lgf(path, grid: LabelGrid) -> None:
    g = label_grid(grid)
    h, w = g.shape
    header = LGF_MAGIC + np.uint32(w).tobytes() + np.uint32(h).tobytes()
    payload = np.ascontiguousarray(g, dtype="<u2").tobytes()
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload)


def read_lgf(path) -> LabelGrid:
    """Read one LGF file; FormatError messages carry the byte offset."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 12:
        raise FormatError(f"{path}: truncated header at offset {len(blob)} (need 12 bytes)")
    if blob[:4] != LGF_MAGIC:
        raise FormatError(f"{path}: bad magic at offset 0: {blob[:4]!r}")
    w = int(np.frombuffer(blob, dtype="<u4", count=1, offset=4)[0])
    h = int(np.frombuffer(blob, dtype="<u4", count=1, offset=8)[0])
    if w < 1 or h < 1:
        raise FormatError(f"{path}: invalid dimensions {w}x{h} at offset 4")
    expected = 12 + 2 * w * h
    if len(blob) != expected:
        raise FormatError(
            f"{path}: payload size mismatch at offset 12: "
            f"file has {len(blob)} bytes, header implies {expected}")
    flat = np.frombuffer(blob, dtype="<u2", count=w * h, offset=12)
    return flat.reshape(h, w).astype(np.uint16)


def read_png_labels(path) -> LabelGrid:
    """Ingest a single-channel 16-bit (or 8-bit) PNG as a label grid."""
    from PIL import Image

    with Image.open(path) as img:
        if img.mode not in ("I;16", "I", "L", "P"):
            raise FormatError(f"{path}: unsupported PNG mode {img.mode}")
        arr = np.asarray(img)
    if arr.ndim != 2:
        raise FormatError(f"{path}: expected single-channel PNG")
    return label_grid(arr.astype(np.int64))


def read_label_file(path) -> LabelGrid:
    """Dispatch on extension: .lgf native, .png via the ingestion adapter."""
    suffix = Path(path).suffix.lower()
    if suffix == ".lgf":
        return read_lgf(path)
    if suffix == ".png":
        return read_png_labels(path)
    raise FormatError(f"{path}: unknown label file type {suffix!r}")


def write_features(path, features: np.ndarray) -> None:
    arr = np.asarray(features, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError(f"features must be (C, H, W), got shape {arr.shape}")
    np.save(path, arr)


def read_features(path) -> np.ndarray:
    arr = np.load(path)
    if arr.ndim != 3:
        raise FormatError(f"{path}: features must be (C, H, W), got shape {arr.shape}")
    return np.asarray(arr, dtype=np.float64)


def _fmt_value(v: Optional[float]) -> str:
    if v is None:
        return "null"
    return f"{float(v):.6f}"


def render_report_json(report) -> bytes:
    """Serialize a DatasetReport with fixed keys, order, and formatting."""
    values = {
        "iou_soil": report.iou_soil,
        "iou_crop": report.iou_crop,
        "iou_weed": report.iou_weed,
        "pq_crop": report.pq_crop.pq,
        "pq_leaf": report.pq_leaf.pq,
        "pq_weed": report.pq_weed.pq,
        "pq": report.pq,
        "pq_dagger": report.pq_dagger,
        "rmse_tp": report.rmse_tp,
        "rmse_pred": report.rmse_pred,
        "rmse_gt": report.rmse_gt,
        "precision_crop": report.precision_crop,
        "recall_crop": report.recall_crop,
    }
    lines = ["{"]
    for key in REPORT_KEYS:
        if key == "n_frames":
            lines.append(f'  "n_frames": {int(report.n_frames)}')
        else:
            lines.append(f'  "{key}": {_fmt_value(values[key])},')
    lines.append("}")
    return ("\n".join(lines) + "\n").encode("ascii")


def parse_report_json(blob: bytes) -> Dict:
    return json.loads(blob.decode("ascii"))


def render_history_json(history: List[Dict]) -> bytes:
    """Serialize training history; repr-exact floats keep bytes stable."""
    return (json.dumps(history, indent=2, sort_keys=True) + "\n").encode("ascii")


def parse_config_text(text: str, schema: Dict[str, type]) -> Dict:
    """Parse ``key = value`` lines against a {key: type} schema.

    ``#`` starts a comment; blank lines are skipped.  Types supported:
    int, float, bool, str, and (int, int) inclusive ranges written as
    ``lo..hi``.  Unknown keys and malformed values raise FormatError
    naming the key.
    """
    out: Dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"line {lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in schema:
            raise FormatError(f"line {lineno}: unknown config key {key!r}")
        kind = schema[key]
        try:
            if kind is int:
                out[key] = int(value)
            elif kind is float:
                out[key] = float(value)
            elif kind is bool:
                if value.lower() not in ("true", "false", "0", "1"):
                    raise ValueError(value)
                out[key] = value.lower() in ("true", "1")
            elif kind is tuple:
                lo, _, hi = value.partition("..")
                out[key] = (int(lo), int(hi)) if hi else (int(lo), int(lo))
            else:
                out[key] = value
        except ValueError:
            raise FormatError(
                f"line {lineno}: bad value {value!r} for key {key!r}") from None
    return out


def frame_paths(root, stem: str, suffix: str = ".lgf") -> Dict[str, Path]:
    root = Path(root)
    return {d: root / d / f"{stem}{suffix}" for d in FRAME_DIRS}


def write_frame(root, stem: str, frame: PanopticFrame) -> List[Path]:
    """Write one frame's three label grids under the standard layout."""
    root = Path(root)
    written = []
    for d, grid in zip(FRAME_DIRS, (frame.semantics, frame.plant_instances,
                                    frame.leaf_instances)):
        (root / d).mkdir(parents=True, exist_ok=True)
        path = root / d / f"{stem}.lgf"
        write_lgf(path, grid)
        written.append(path)
    return written


def list_stems(root) -> List[str]:
    """Sorted stems of the label files under ``root``'s standard layout.

    A stem must exist in all three subdirectories; a missing counterpart
    raises FormatError naming the stem.
    """
    root = Path(root)
    per_dir = {}
    for d in FRAME_DIRS:
        sub = root / d
        if not sub.is_dir():
            raise FormatError(f"{root}: missing subdirectory {d}/")
        per_dir[d] = {p.stem for p in sub.iterdir()
                      if p.suffix.lower() in (".lgf", ".png")}
    stems = set().union(*per_dir.values())
    for stem in sorted(stems):
        for d in FRAME_DIRS:
            if stem not in per_dir[d]:
                raise FormatError(f"stem {stem!r} missing from {d}/")
    return sorted(stems)


def read_frame(root, stem: str) -> PanopticFrame:
    root = Path(root)
    grids = {}
    for d in FRAME_DIRS:
        lgf = root / d / f"{stem}.lgf"
        png = root / d / f"{stem}.png"
        if lgf.exists():
            grids[d] = read_lgf(lgf)
        elif png.exists():
            grids[d] = read_png_labels(png)
        else:
            raise FormatError(f"stem {stem!r} missing from {d}/")
    return PanopticFrame(semantics=grids["semantics"],
                         plant_instances=grids["plant_instances"],
                         leaf_instances=grids["leaf_instances"])
