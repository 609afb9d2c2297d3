"""Finite-difference verification of every analytic gradient.

Central differences with h = 1e-6 in 64-bit; the relative error uses a
floored denominator, |a − f| / max(|a|, |f|, 1e-4), so near-zero
gradients are compared absolutely.  The head check perturbs every
parameter tensor through the full matched, deep-supervised objective.
Head checks run with importance_fraction = 0 (pure uniform point
sampling): the top-k uncertainty selection is piecewise-constant in the
parameters, and a selection flip between the two difference evaluations
would measure sampling noise, not the gradient being verified.
"""

from __future__ import annotations

from typing import Callable, Dict, List, Tuple

import numpy as np

from . import head
from . import losses as L
from .distfield import level_set
from .grids import PanopticFrame

FD_STEP = 1e-6
TOLERANCE = 1e-4


def rel_err(analytic: float, numeric: float, floor: float = 1e-4) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def numeric_grad(f: Callable[[np.ndarray], float], x: np.ndarray,
                 h: float = FD_STEP) -> np.ndarray:
    """Central finite differences of a scalar function, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f(x)
        flat[i] = orig - h
        lo = f(x)
        flat[i] = orig
        gf[i] = (hi - lo) / (2.0 * h)
    return g


def _max_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    worst = 0.0
    for a, n in zip(np.ravel(analytic), np.ravel(numeric)):
        worst = max(worst, rel_err(float(a), float(n)))
    return worst


def check_focal(seed: int, cases: int = 20) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        n = int(rng.integers(1, 30))
        x = rng.normal(0.0, 3.0, n)
        y = rng.random(n) < 0.5
        gamma = float(rng.choice([0.0, 1.0, 2.0, 3.0]))
        alpha = None if rng.random() < 0.25 else float(rng.uniform(0.1, 0.9))
        analytic = L.focal_loss(x, y, gamma, alpha).grad
        numeric = numeric_grad(lambda v: L.focal_loss(v, y, gamma, alpha).value, x)
        worst = max(worst, _max_err(analytic, numeric))
    return worst


def check_dice(seed: int, cases: int = 20) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        n = int(rng.integers(1, 30))
        x = rng.normal(0.0, 3.0, n)
        y = rng.random(n) < 0.5
        analytic = L.dice_loss(x, y).grad
        numeric = numeric_grad(lambda v: L.dice_loss(v, y).value, x)
        worst = max(worst, _max_err(analytic, numeric))
    return worst


def check_boundary(seed: int, cases: int = 20) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        h = int(rng.integers(3, 9))
        w = int(rng.integers(3, 9))
        mask = rng.random((h, w)) < 0.4
        if mask.all() or not mask.any():
            mask[0, 0] = True
            mask[-1, -1] = False
        phi = level_set(mask)
        probs = rng.random((h, w))
        alpha = float(rng.uniform(0.005, 0.1))
        analytic = L.boundary_loss(probs, phi, alpha).grad
        numeric = numeric_grad(
            lambda v: L.boundary_loss(np.clip(v, 0.0, 1.0), phi, alpha).value,
            probs)
        worst = max(worst, _max_err(analytic, numeric))
    return worst


def check_class(seed: int, cases: int = 20) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        k1 = int(rng.integers(2, 6))
        x = rng.normal(0.0, 2.0, k1)
        target = None if rng.random() < 0.3 else int(rng.integers(0, k1))
        weight = float(rng.uniform(0.05, 1.0))
        analytic = L.class_loss(x, target, weight).grad
        numeric = numeric_grad(lambda v: L.class_loss(v, target, weight).value, x)
        worst = max(worst, _max_err(analytic, numeric))
    return worst


def tiny_frame(seed: int):
    """Hand-built 8×8 frame (one two-leaf crop + one weed) with features."""
    sem = np.zeros((8, 8), dtype=np.uint16)
    plants = np.zeros((8, 8), dtype=np.uint16)
    leaves = np.zeros((8, 8), dtype=np.uint16)
    sem[1:5, 1:6] = 1  # crop
    plants[1:5, 1:6] = 1
    leaves[1:3, 1:6] = 1  # upper leaf
    leaves[3:5, 1:6] = 2  # lower leaf
    sem[6:8, 6:8] = 2  # weed
    plants[6:8, 6:8] = 2
    frame = PanopticFrame(semantics=sem, plant_instances=plants,
                          leaf_instances=leaves)
    rng = np.random.default_rng(seed)
    features = np.empty((3, 8, 8))
    veg = np.zeros((8, 8))
    veg[sem == 1] = 1.0
    veg[sem == 2] = 0.6
    features[0] = veg
    features[1] = (np.arange(8) + 0.5)[None, :] / 8.0
    features[2] = (np.arange(8) + 0.5)[:, None] / 8.0
    features += 0.02 * rng.normal(size=(3, 8, 8))
    return features, frame


def _tiny_setup(seed: int, use_boundary: bool = True):
    """A small scene plus head/loss configs sized for exhaustive FD."""
    cfg = head.HeadConfig(n_queries=4, embed_dim=5, query_dim=6, n_layers=2,
                          n_classes=2, feature_channels=3, seed=seed)
    features, frame = tiny_frame(seed)
    loss_cfg = L.LossConfig(n_points=64, oversample_ratio=1.0,
                            importance_fraction=0.0,
                            use_boundary=use_boundary)
    return cfg, features, frame, loss_cfg


def check_head(seed: int, max_coords_per_tensor: int = 6,
               perturb: bool = False) -> float:
    """FD-verify head parameter gradients on a seeded coordinate subset.

    ``perturb`` deliberately corrupts one analytic gradient entry — the
    negative control behind the CLI's failing exit path.
    """
    cfg, features, frame, loss_cfg = _tiny_setup(seed)
    params = head.init_model(cfg, np.random.default_rng(seed + 1))
    epoch = 2

    def total_at() -> float:
        _, bd = head.backward(params, features, frame, loss_cfg, epoch,
                              np.random.default_rng(seed + 2))
        return bd.total

    grads, _ = head.backward(params, features, frame, loss_cfg, epoch,
                             np.random.default_rng(seed + 2))
    if perturb:
        grads.plant.mask_w += 1.0  # negative control: corrupt every entry

    pick = np.random.default_rng(seed + 3)
    worst = 0.0
    for (name, p), (_, g) in zip(head.param_items(params),
                                 head.param_items(grads)):
        n = p.size
        coords = (np.arange(n) if n <= max_coords_per_tensor
                  else pick.choice(n, size=max_coords_per_tensor, replace=False))
        flat = p.ravel()
        for i in coords:
            i = int(i)
            orig = flat[i]
            flat[i] = orig + FD_STEP
            hi = total_at()
            flat[i] = orig - FD_STEP
            lo = total_at()
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * FD_STEP)
            worst = max(worst, rel_err(float(g.ravel()[i]), numeric))
    return worst


def run_suite(seed: int = 0, perturb: bool = False) -> List[Tuple[str, float]]:
    """Max relative FD error per component, in a fixed report order."""
    results = [
        ("focal", check_focal(seed)),
        ("dice", check_dice(seed)),
        ("boundary", check_boundary(seed)),
        ("class", check_class(seed)),
    ]
    head_worst = 0.0
    for case in range(10):
        head_worst = max(head_worst,
                         check_head(seed + case, perturb=perturb and case == 0))
    results.append(("head", head_worst))
    return results
