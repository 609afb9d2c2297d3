"""Deterministic synthetic scenes: leaf-rosette crops, disk weeds, soil.

Each crop is a rosette of elliptical leaf lobes around a center; each
pixel of the crop belongs to exactly one leaf (nearest-lobe assignment),
so the crop mask is exactly the union of its disjoint leaf masks.  Weeds
are small leafless disks.  Features are three channels — vegetation
intensity, x/W, y/H — plus seeded Gaussian noise.

Randomness comes from counter-based SplitMix64 streams keyed by
(seed, scene index, purpose tag): any scene can be regenerated alone,
in any order, on any worker, and produce identical bits.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, List, Tuple

import numpy as np

from .grids import CROP, NO_INSTANCE, SOIL, WEED, PanopticFrame

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def _mix64(z: int) -> int:
    z &= _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def _fnv1a(tag: str) -> int:
    h = 0xCBF29CE484222325
    for byte in tag.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK64
    return h


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = z.astype(np.uint64, copy=True)
    z ^= z >> np.uint64(30)
    z *= np.uint64(_MIX1)
    z ^= z >> np.uint64(27)
    z *= np.uint64(_MIX2)
    z ^= z >> np.uint64(31)
    return z


class KeyedStream:
    """Counter-based SplitMix64 stream keyed by (seed, index, tag).

    Output i is a pure function of the key and i, so streams for
    different scenes or purposes never interact, and bulk draws can be
    vectorized without changing the sequence.
    """

    def __init__(self, seed: int, index: int, tag: str):
        self._key = _mix64(_mix64(seed & _MASK64)
                           ^ _mix64((index & _MASK64) * _GOLDEN & _MASK64)
                           ^ _fnv1a(tag))
        self._n = 0

    def next_u64(self) -> int:
        self._n += 1
        return _mix64((self._key + self._n * _GOLDEN) & _MASK64)

    def u64_array(self, n: int) -> np.ndarray:
        counters = np.arange(self._n + 1, self._n + n + 1, dtype=np.uint64)
        self._n += n
        return _mix64_array(np.uint64(self._key) + counters * np.uint64(_GOLDEN))

    def random(self) -> float:
        return (self.next_u64() >> 11) / float(1 << 53)

    def random_array(self, n: int) -> np.ndarray:
        return (self.u64_array(n) >> np.uint64(11)) / float(1 << 53)

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi] inclusive."""
        if hi < lo:
            raise ValueError(f"empty range [{lo}, {hi}]")
        return lo + self.next_u64() % (hi - lo + 1)

    def normal_array(self, n: int) -> np.ndarray:
        """Standard normals via Box–Muller (cosine branch only)."""
        u1 = (self.u64_array(n) >> np.uint64(11)).astype(np.float64)
        u1 = (u1 + 1.0) / float(1 << 53)  # (0, 1], keeps log finite
        u2 = self.random_array(n)
        return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


@dataclass(frozen=True)
class GenConfig:
    """Scene-generation parameters; all ranges inclusive."""

    width: int = 256
    height: int = 256
    crops_range: Tuple[int, int] = (1, 3)
    leaves_per_crop_range: Tuple[int, int] = (2, 6)
    weeds_range: Tuple[int, int] = (0, 5)
    weed_radius_range: Tuple[int, int] = (2, 6)
    crop_radius_range: Tuple[int, int] = (24, 40)
    noise_std: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("dimensions must be >= 1")
        for name in ("crops_range", "leaves_per_crop_range", "weeds_range",
                     "weed_radius_range", "crop_radius_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} is empty: {lo}..{hi}")
            if lo < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.weed_radius_range[0] < 1 or self.crop_radius_range[0] < 1:
            raise ValueError("radii must be >= 1")
        if self.leaves_per_crop_range[0] < 1:
            raise ValueError("need at least one leaf per crop")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")


_MAX_ATTEMPTS = 200

# Vegetation intensity plus linear and quadratic coordinate ramps.
FEATURE_CHANNELS = 6


class GenerationError(RuntimeError):
    pass


def _rosette(stream: KeyedStream, radius: int, n_leaves: int, cx: float, cy: float,
             height: int, width: int):
    """Rasterize one crop: per-pixel leaf index or 0 outside the rosette.

    Leaves are elliptical lobes fanned around the center; every rosette
    pixel is assigned to its best (lowest-ellipse-distance) lobe, making
    leaves disjoint and their union the whole crop by construction.
    """
    base = stream.random() * 2.0 * np.pi
    spacing = 2.0 * np.pi / n_leaves
    lobes = []
    for k in range(n_leaves):
        angle = base + k * spacing + (stream.random() - 0.5) * 0.4 * spacing
        # scaled so lobe tip (offset 0.55a + semi-major a) stays inside radius
        a = radius * (0.48 + 0.16 * stream.random())  # semi-major
        b = max(1.2, a * (0.30 + 0.15 * stream.random()))  # semi-minor
        d = 0.55 * a  # lobe-center offset from rosette center
        lobes.append((angle, a, b, d))

    r0 = max(0, int(np.floor(cy - radius - 2)))
    r1 = min(height, int(np.ceil(cy + radius + 3)))
    c0 = max(0, int(np.floor(cx - radius - 2)))
    c1 = min(width, int(np.ceil(cx + radius + 3)))
    if r0 >= r1 or c0 >= c1:
        return None
    rows, cols = np.meshgrid(np.arange(r0, r1), np.arange(c0, c1), indexing="ij")
    dy = rows - cy
    dx = cols - cx

    score = np.full(dy.shape, np.inf)
    leaf_idx = np.zeros(dy.shape, dtype=np.int32)
    for k, (angle, a, b, d) in enumerate(lobes):
        ca, sa = np.cos(angle), np.sin(angle)
        # coordinates relative to the lobe center, in the lobe frame
        u = (dx - d * ca) * ca + (dy - d * sa) * sa
        v = -(dx - d * ca) * sa + (dy - d * sa) * ca
        e = (u / a) ** 2 + (v / b) ** 2
        better = e < score
        score[better] = e[better]
        leaf_idx[better] = k + 1
    inside = score <= 1.0
    leaf_idx[~inside] = 0
    if not inside.any():
        return None
    present = np.unique(leaf_idx[inside])
    if len(present) != n_leaves:
        return None  # a lobe was fully shadowed; caller retries
    return (r0, c0), leaf_idx


def generate_scene(cfg: GenConfig, index: int):
    """Generate scene ``index``: (features (6,H,W), ground-truth frame)."""
    h, w = cfg.height, cfg.width
    stream = KeyedStream(cfg.seed, index, "layout")
    semantics = np.zeros((h, w), dtype=np.uint16)
    plants = np.zeros((h, w), dtype=np.uint16)
    leaves = np.zeros((h, w), dtype=np.uint16)
    occupied = np.zeros((h, w), dtype=bool)

    next_leaf_id = 1
    next_plant_id = 1

    n_crops = stream.randint(*cfg.crops_range)
    for _ in range(n_crops):
        for attempt in range(_MAX_ATTEMPTS):
            radius = stream.randint(*cfg.crop_radius_range)
            margin = radius + 1
            if 2 * margin > min(h, w):
                raise GenerationError(
                    f"scene does not fit: crop radius {radius} in {w}x{h}")
            cy = stream.uniform(margin, h - margin)
            cx = stream.uniform(margin, w - margin)
            n_leaves = stream.randint(*cfg.leaves_per_crop_range)
            result = _rosette(stream, radius, n_leaves, cx, cy, h, w)
            if result is None:
                continue
            (r0, c0), leaf_idx = result
            mask = leaf_idx > 0
            sl = (slice(r0, r0 + mask.shape[0]), slice(c0, c0 + mask.shape[1]))
            if (occupied[sl] & mask).any():
                continue
            semantics[sl][mask] = CROP
            plants[sl][mask] = next_plant_id
            leaves[sl][mask] = (leaf_idx[mask] - 1) + next_leaf_id
            occupied[sl] |= mask
            # one-pixel exclusion halo so instances never touch
            grown = np.zeros((h, w), dtype=bool)
            grown[sl] = mask
            occupied |= _dilate(grown)
            next_plant_id += 1
            next_leaf_id += n_leaves
            break
        else:
            raise GenerationError("scene does not fit: crop placement failed")

    n_weeds = stream.randint(*cfg.weeds_range)
    for _ in range(n_weeds):
        for attempt in range(_MAX_ATTEMPTS):
            radius = stream.randint(*cfg.weed_radius_range)
            margin = radius + 1
            if 2 * margin > min(h, w):
                raise GenerationError(
                    f"scene does not fit: weed radius {radius} in {w}x{h}")
            cy = stream.uniform(margin, h - margin)
            cx = stream.uniform(margin, w - margin)
            r0 = max(0, int(np.floor(cy - radius - 1)))
            r1 = min(h, int(np.ceil(cy + radius + 2)))
            c0 = max(0, int(np.floor(cx - radius - 1)))
            c1 = min(w, int(np.ceil(cx + radius + 2)))
            rows, cols = np.meshgrid(np.arange(r0, r1), np.arange(c0, c1),
                                     indexing="ij")
            mask = (rows - cy) ** 2 + (cols - cx) ** 2 <= radius * radius
            sl = (slice(r0, r1), slice(c0, c1))
            if not mask.any():
                continue
            if (occupied[sl] & mask).any():
                continue
            semantics[sl][mask] = WEED
            plants[sl][mask] = next_plant_id
            grown = np.zeros((h, w), dtype=bool)
            grown[sl] = mask
            occupied |= _dilate(grown)
            next_plant_id += 1
            break
        else:
            raise GenerationError("scene does not fit: weed placement failed")

    # Channel layout: vegetation intensity, then linear and quadratic
    # coordinate ramps.  The quadratic channels matter: downstream mask
    # logits are linear in these features, and disk- or ellipse-shaped
    # regions are linear functionals of (x, y, x², y², xy) but of nothing
    # simpler.
    features = np.empty((FEATURE_CHANNELS, h, w), dtype=np.float64)
    veg = np.zeros((h, w), dtype=np.float64)
    veg[semantics == CROP] = 1.0
    veg[semantics == WEED] = 0.6
    xr = np.broadcast_to((np.arange(w, dtype=np.float64)[None, :] + 0.5) / w,
                         (h, w))
    yr = np.broadcast_to((np.arange(h, dtype=np.float64)[:, None] + 0.5) / h,
                         (h, w))
    features[0] = veg
    features[1] = xr
    features[2] = yr
    features[3] = xr * xr
    features[4] = yr * yr
    features[5] = xr * yr
    if cfg.noise_std > 0:
        noise = KeyedStream(cfg.seed, index, "noise")
        features += cfg.noise_std * noise.normal_array(
            FEATURE_CHANNELS * h * w).reshape(FEATURE_CHANNELS, h, w)

    frame = PanopticFrame(semantics=semantics, plant_instances=plants,
                          leaf_instances=leaves)
    return features, frame


def _dilate(mask: np.ndarray) -> np.ndarray:
    """8-neighborhood binary dilation by one pixel."""
    out = mask.copy()
    out[1:, :] |= mask[:-1, :]
    out[:-1, :] |= mask[1:, :]
    out[:, 1:] |= mask[:, :-1]
    out[:, :-1] |= mask[:, 1:]
    out[1:, 1:] |= mask[:-1, :-1]
    out[1:, :-1] |= mask[:-1, 1:]
    out[:-1, 1:] |= mask[1:, :-1]
    out[:-1, :-1] |= mask[1:, 1:]
    return out


def generate_dataset(cfg: GenConfig, n: int, out_dir) -> dict:
    """Write ``n`` scenes (features + three label grids each) + manifest."""
    from . import formats

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for sub in formats.FRAME_DIRS + ("features",):
        (out / sub).mkdir(exist_ok=True)
    entries = []
    for index in range(n):
        features, frame = generate_scene(cfg, index)
        stem = f"scene_{index:05d}"
        formats.write_frame(out, stem, frame)
        formats.write_features(out / "features" / f"{stem}.npy", features)
        entries.append({"stem": stem, "seed": cfg.seed, "index": index})
    manifest = {"n_scenes": n, "seed": cfg.seed,
                "width": cfg.width, "height": cfg.height,
                "scenes": entries}
    manifest_path = out / "manifest.json"
    with open(manifest_path, "w", encoding="ascii") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest


# The eight dihedral operations as (flip_horizontal, quarter_turns).
DIHEDRAL_OPS = tuple((flip, k) for flip in (False, True) for k in range(4))


def _transform_grid(arr: np.ndarray, op) -> np.ndarray:
    flip, k = op
    out = arr[:, ::-1] if flip else arr
    return np.ascontiguousarray(np.rot90(out, k))


def _inverse_grid(arr: np.ndarray, op) -> np.ndarray:
    flip, k = op
    out = np.rot90(arr, -k)
    if flip:
        out = out[:, ::-1]
    return np.ascontiguousarray(out)


def augment(features: np.ndarray, frame: PanopticFrame, op):
    """Apply one dihedral operation to features and frame alike.

    ``op`` = (flip_horizontal, quarter_turns).  Quarter turns require a
    square grid; ids and ignore sets pass through unchanged.
    """
    flip, k = op
    if k not in (0, 1, 2, 3):
        raise ValueError(f"quarter_turns must be 0..3, got {k}")
    h, w = frame.semantics.shape
    if k % 2 == 1 and h != w:
        raise ValueError("quarter-turn rotation requires a square grid")
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 3 or feats.shape[1:] != (h, w):
        raise ValueError(f"features shape {feats.shape} does not match frame {h}x{w}")
    out_feats = np.stack([_transform_grid(feats[c], op)
                          for c in range(feats.shape[0])])
    new_frame = PanopticFrame(
        semantics=_transform_grid(frame.semantics, op),
        plant_instances=_transform_grid(frame.plant_instances, op),
        leaf_instances=_transform_grid(frame.leaf_instances, op),
        ignore_plant_ids=frame.ignore_plant_ids,
        ignore_leaf_ids=frame.ignore_leaf_ids,
    )
    return out_feats, new_frame
