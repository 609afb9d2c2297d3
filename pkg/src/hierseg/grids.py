"""Label grids, binary masks, and panoptic frames.

All raster data in this package is row-major numpy: semantic classes and
instance ids live in 2-D uint16 grids, regions of interest in 2-D bool
masks.  A :class:`PanopticFrame` bundles the three grids that describe one
scene (semantics, plant instances, leaf instances) together with the sets
of instance ids that evaluation must not score.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

# Semantic class ids.
SOIL = 0
CROP = 1
WEED = 2
PARTIAL_CROP = 3
PARTIAL_WEED = 4

SEMANTIC_CLASSES = (SOIL, CROP, WEED, PARTIAL_CROP, PARTIAL_WEED)

# Instance id reserved for "no instance".
NO_INSTANCE = 0

# Type aliases: all are plain numpy arrays, kept separate for readability.
LabelGrid = np.ndarray  # 2-D uint16
BinaryMask = np.ndarray  # 2-D bool
ProbGrid = np.ndarray  # 2-D float64 in [0, 1]
LogitGrid = np.ndarray  # 2-D float64, unbounded

_U16_MAX = np.iinfo(np.uint16).max


def label_grid(values) -> LabelGrid:
    """Coerce ``values`` to a 2-D uint16 label grid.

    Rejects empty input, extra dimensions, negative labels, and labels that
    do not fit in 16 bits.
    """
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise ValueError(f"label grid must be 2-D, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError("label grid must be non-empty")
    if arr.dtype == np.bool_:
        return arr.astype(np.uint16)
    if not np.issubdtype(arr.dtype, np.integer):
        raise ValueError(f"label grid must be integer-valued, got dtype {arr.dtype}")
    if arr.min() < 0 or arr.max() > _U16_MAX:
        raise ValueError("label values must lie in [0, 65535]")
    return arr.astype(np.uint16, copy=False)


def binary_mask(values) -> BinaryMask:
    """Coerce ``values`` to a 2-D bool mask."""
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError("mask must be non-empty")
    if arr.dtype != np.bool_:
        if not np.issubdtype(arr.dtype, np.integer):
            raise ValueError(f"mask must be bool or integer 0/1, got dtype {arr.dtype}")
        if np.any((arr != 0) & (arr != 1)):
            raise ValueError("integer mask values must be 0 or 1")
        arr = arr.astype(bool)
    return arr


def logit_grid(values) -> LogitGrid:
    """Coerce ``values`` to a 2-D float64 grid of finite reals."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"logit grid must be 2-D, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError("logit grid must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError("logit grid values must be finite")
    return arr


def prob_grid(values) -> ProbGrid:
    """Coerce ``values`` to a 2-D float64 grid of probabilities in [0, 1]."""
    arr = logit_grid(values)
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("probabilities must lie in [0, 1]")
    return arr


@dataclass(frozen=True)
class PanopticFrame:
    """One scene: semantics plus plant- and leaf-level instance grids.

    ``ignore_plant_ids`` / ``ignore_leaf_ids`` list instance ids whose
    regions must not contribute to evaluation scores.  Construction does
    not force the three grids to share a shape; :func:`validate_frame`
    reports a dimension mismatch as a hard violation instead, so malformed
    frames can be loaded and diagnosed.
    """

    semantics: LabelGrid
    plant_instances: LabelGrid
    leaf_instances: LabelGrid
    ignore_plant_ids: frozenset = field(default_factory=frozenset)
    ignore_leaf_ids: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        for name in ("semantics", "plant_instances", "leaf_instances"):
            grid = label_grid(getattr(self, name))
            grid = np.ascontiguousarray(grid)
            grid.flags.writeable = False
            object.__setattr__(self, name, grid)
        object.__setattr__(self, "ignore_plant_ids", frozenset(int(i) for i in self.ignore_plant_ids))
        object.__setattr__(self, "ignore_leaf_ids", frozenset(int(i) for i in self.ignore_leaf_ids))

    @property
    def shape(self) -> tuple:
        return self.semantics.shape


@dataclass(frozen=True)
class Violation:
    """One finding from :func:`validate_frame`."""

    severity: str  # "hard" or "warning"
    message: str


def extract_instances(instances: LabelGrid) -> list:
    """Split an instance grid into ``(id, mask)`` pairs, ascending by id.

    Id 0 means "no instance" and is never returned.  Masks of one grid are
    disjoint by construction (each pixel holds a single label).
    """
    grid = label_grid(instances)
    ids = np.unique(grid)
    ids = ids[ids != NO_INSTANCE]
    return [(int(i), grid == i) for i in ids]


def semantic_mask(semantics: LabelGrid, class_id: int) -> BinaryMask:
    """Boolean mask of the pixels labelled ``class_id``."""
    return label_grid(semantics) == class_id


def iou(a: BinaryMask, b: BinaryMask) -> float:
    """Intersection over union of two masks; 0.0 when both are empty."""
    ma = binary_mask(a)
    mb = binary_mask(b)
    if ma.shape != mb.shape:
        raise ValueError(f"mask shapes differ: {ma.shape} vs {mb.shape}")
    inter = int(np.logical_and(ma, mb).sum())
    union = int(np.logical_or(ma, mb).sum())
    if union == 0:
        return 0.0
    return inter / union


def overlap_counts(a: LabelGrid, b: LabelGrid):
    """Joint pixel counts of every label pair across two aligned grids.

    Returns ``(ids_a, ids_b, counts)`` where ``counts[i, j]`` is the number
    of pixels labelled ``ids_a[i]`` in ``a`` and ``ids_b[j]`` in ``b``.
    Runs in O(pixels) via a single bincount over fused codes, which keeps
    instance matching linear in image size rather than quadratic in
    instance count times area.
    """
    ga = label_grid(a)
    gb = label_grid(b)
    if ga.shape != gb.shape:
        raise ValueError(f"grid shapes differ: {ga.shape} vs {gb.shape}")
    ids_a, inv_a = np.unique(ga, return_inverse=True)
    ids_b, inv_b = np.unique(gb, return_inverse=True)
    code = inv_a.astype(np.int64).ravel() * len(ids_b) + inv_b.astype(np.int64).ravel()
    counts = np.bincount(code, minlength=len(ids_a) * len(ids_b))
    return ids_a, ids_b, counts.reshape(len(ids_a), len(ids_b))


def instance_areas(grid: LabelGrid) -> dict:
    """Pixel area per instance id (id 0 excluded)."""
    g = label_grid(grid)
    ids, counts = np.unique(g, return_counts=True)
    return {int(i): int(c) for i, c in zip(ids, counts) if int(i) != NO_INSTANCE}


def keep_ids(grid: LabelGrid, ids: Iterable) -> LabelGrid:
    """Copy of ``grid`` with every label outside ``ids`` zeroed."""
    g = label_grid(grid)
    wanted = np.asarray(sorted(set(int(i) for i in ids) - {NO_INSTANCE}), dtype=np.uint16)
    if wanted.size == 0:
        return np.zeros_like(g)
    out = np.where(np.isin(g, wanted), g, np.uint16(NO_INSTANCE))
    return out


def validate_frame(frame: PanopticFrame) -> list:
    """Check a frame's cross-grid consistency.

    Hard violations (frame unusable):
      * grid dimensions disagree.

    Warnings (frame scored, but suspicious):
      * a leaf instance has pixels outside crop / partial-crop semantics
        (one warning per offending leaf id, naming one offending pixel);
      * an ignore id does not occur in its instance grid.
    """
    report = []
    shape = frame.semantics.shape
    for name in ("plant_instances", "leaf_instances"):
        other = getattr(frame, name).shape
        if other != shape:
            report.append(Violation(
                "hard",
                f"{name} shape {other} does not match semantics shape {shape}",
            ))
    if any(v.severity == "hard" for v in report):
        return report

    veg = np.isin(frame.semantics, (CROP, PARTIAL_CROP))
    stray = (frame.leaf_instances != NO_INSTANCE) & ~veg
    if np.any(stray):
        for leaf_id in np.unique(frame.leaf_instances[stray]):
            rows, cols = np.nonzero((frame.leaf_instances == leaf_id) & ~veg)
            report.append(Violation(
                "warning",
                f"leaf {int(leaf_id)} has pixels outside crop semantics, "
                f"e.g. ({int(rows[0])}, {int(cols[0])})",
            ))

    plant_ids = set(np.unique(frame.plant_instances).tolist())
    leaf_ids = set(np.unique(frame.leaf_instances).tolist())
    for missing in sorted(set(frame.ignore_plant_ids) - plant_ids):
        report.append(Violation("warning", f"ignored plant id {missing} not present in plant_instances"))
    for missing in sorted(set(frame.ignore_leaf_ids) - leaf_ids):
        report.append(Violation("warning", f"ignored leaf id {missing} not present in leaf_instances"))
    return report
