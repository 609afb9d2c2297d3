"""Training losses with exact analytic gradients.

Everything here is authored against the closed forms, not autodiff:
focal and dice operate on point-sampled logits, the boundary term is a
linear functional of predicted probabilities weighted by a precomputed
signed distance field, and the classification term is a weighted
softmax cross-entropy with a trailing no-object slot.  Each loss returns
both its value and its gradient with respect to the inputs it was given,
so the mask-formation head can backpropagate without a framework.

Numerical care: sigmoids and their logs go through ``logaddexp`` /
``expit`` so values and gradients stay finite for logits of any
magnitude, and the γ = 0 / unset-α configuration reduces exactly to
plain binary cross-entropy.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from .grids import BinaryMask, LogitGrid, binary_mask, logit_grid


@dataclass(frozen=True)
class LossConfig:
    """Loss hyper-parameters shared by training, matching, and ablation.

    ``alpha_focal=None`` disables the class-balance factor (α_t ≡ 1);
    together with ``gamma=0`` the focal term becomes plain BCE, which is
    how the no-focal ablation variants are expressed.  ``use_boundary``
    switches the boundary term on or off for the same purpose.
    """

    gamma: float = 2.0
    alpha_focal: Optional[float] = 0.25
    lambda_mask: float = 2.5
    lambda_cls: float = 1.0
    boundary_alpha0: float = 0.01
    boundary_alpha_step: float = 0.0006
    n_points: int = 1024
    oversample_ratio: float = 3.0
    importance_fraction: float = 0.75
    no_object_weight: float = 0.1
    use_boundary: bool = True

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.alpha_focal is not None and not 0.0 < self.alpha_focal < 1.0:
            raise ValueError("alpha_focal must lie in (0, 1) or be None")
        if self.lambda_mask < 0 or self.lambda_cls < 0:
            raise ValueError("loss weights must be >= 0")
        if self.n_points < 1:
            raise ValueError("n_points must be >= 1")
        if self.oversample_ratio < 1.0:
            raise ValueError("oversample_ratio must be >= 1")
        if not 0.0 <= self.importance_fraction <= 1.0:
            raise ValueError("importance_fraction must lie in [0, 1]")
        if not 0.0 <= self.no_object_weight:
            raise ValueError("no_object_weight must be >= 0")


@dataclass(frozen=True)
class LossValue:
    """A scalar loss and its gradient w.r.t. the inputs it was given.

    ``grad`` is None for composite losses whose parts carry their own
    gradients (the composite value is a plain weighted sum).
    """

    value: float
    grad: Optional[np.ndarray] = None


@dataclass(frozen=True)
class PointSample:
    """Point coordinates with the logits/targets read at those points."""

    coords: np.ndarray  # (n, 2) float64, (row, col) in pixel units
    logits: np.ndarray  # (n,) float64
    targets: np.ndarray  # (n,) bool


def _as_logits_targets(logits, targets):
    x = np.asarray(logits, dtype=np.float64)
    y = np.asarray(targets)
    if x.shape != y.shape:
        raise ValueError(f"logits shape {x.shape} != targets shape {y.shape}")
    if x.size == 0:
        raise ValueError("empty input")
    if not np.all(np.isfinite(x)):
        raise ValueError("logits must be finite")
    if y.dtype != np.bool_:
        yi = np.asarray(y, dtype=np.float64)
        if np.any((yi != 0.0) & (yi != 1.0)):
            raise ValueError("targets must be 0/1")
        y = yi == 1.0
    return x, y


def focal_loss(logits, targets, gamma: float = 2.0,
               alpha_focal: Optional[float] = 0.25) -> LossValue:
    """Mean focal loss over sigmoid logits, with its exact gradient.

    Per element, with p = σ(x) and p_t the probability of the true
    class: loss = −α_t (1 − p_t)^γ log p_t.  With γ = 0 and no α the
    gradient collapses to the familiar (p − y) / n of mean BCE.
    """
    x, y = _as_logits_targets(logits, targets)
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    log_p = -np.logaddexp(0.0, -x)  # log σ(x)
    log_q = -np.logaddexp(0.0, x)  # log σ(−x) = log(1 − p)
    p = expit(x)
    q = expit(-x)
    if alpha_focal is None:
        a_pos = a_neg = 1.0
    else:
        if not 0.0 < alpha_focal < 1.0:
            raise ValueError("alpha_focal must lie in (0, 1) or be None")
        a_pos = alpha_focal
        a_neg = 1.0 - alpha_focal
    # q**gamma and p**gamma are exact 1.0 at gamma == 0, and the gamma·p·log p
    # products below vanish before log p can reach -inf, so no masking needed.
    val = np.where(y, -a_pos * q**gamma * log_p, -a_neg * p**gamma * log_q)
    grad = np.where(
        y,
        a_pos * q**gamma * (gamma * p * log_p - q),
        a_neg * p**gamma * (p - gamma * q * log_q),
    )
    n = x.size
    return LossValue(float(val.mean()), grad / n)


def dice_loss(logits, targets) -> LossValue:
    """Dice loss over sigmoid logits with +1/+1 smoothing, with gradient.

    loss = 1 − (2·Σ p·y + 1) / (Σ p + Σ y + 1); the smoothing keeps the
    loss defined (and the gradient bounded) when both sides are empty.
    """
    x, y = _as_logits_targets(logits, targets)
    p = expit(x.ravel())
    yf = y.ravel().astype(np.float64)
    inter = float(p @ yf)
    total = float(p.sum() + yf.sum())
    value = 1.0 - (2.0 * inter + 1.0) / (total + 1.0)
    # d value / d p_i = −(2 y_i (total+1) − (2 inter + 1)) / (total+1)^2
    dp = -(2.0 * yf * (total + 1.0) - (2.0 * inter + 1.0)) / (total + 1.0) ** 2
    grad = (dp * p * expit(-x.ravel())).reshape(x.shape)
    return LossValue(float(value), grad)


def boundary_loss(probs, phi, alpha_epoch: float) -> LossValue:
    """Boundary loss: α · mean(φ · s) over the grid, with exact gradient.

    ``phi`` is the signed distance field of the target region (negative
    inside).  The loss is linear in the probabilities, so the gradient
    α·φ/n is exact and independent of s — pushing probability mass
    inward along the distance field regardless of the current estimate.
    """
    s = np.asarray(probs, dtype=np.float64)
    f = np.asarray(phi, dtype=np.float64)
    if s.shape != f.shape:
        raise ValueError(f"probs shape {s.shape} != phi shape {f.shape}")
    if s.size == 0:
        raise ValueError("empty input")
    if s.min() < 0.0 or s.max() > 1.0:
        raise ValueError("probabilities must lie in [0, 1]")
    n = s.size
    value = alpha_epoch * float((f * s).sum()) / n
    grad = alpha_epoch * f / n
    return LossValue(value, grad)


def boundary_alpha(epoch: int, cfg: LossConfig) -> float:
    """Boundary-loss weight at a given epoch (0-based): α₀ + epoch·step."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return cfg.boundary_alpha0 + cfg.boundary_alpha_step * epoch


def _nearest_values(grid: np.ndarray, coords: np.ndarray) -> np.ndarray:
    rows = coords[:, 0].astype(np.intp)
    cols = coords[:, 1].astype(np.intp)
    return grid[rows, cols]


def sample_points(mask_logits: LogitGrid, gt: BinaryMask, cfg: LossConfig,
                  rng: np.random.Generator) -> PointSample:
    """Importance-sample point coordinates for the mask losses.

    Draws an oversampled pool of uniform points, keeps the
    ``importance_fraction`` of the budget with the most uncertain logits
    (smallest |logit|, nearest-pixel lookup), and fills the remainder
    with fresh uniform points.  Consumes ``rng`` in a fixed order, so
    equal states yield equal samples.
    """
    x = logit_grid(mask_logits)
    y = binary_mask(gt)
    if x.shape != y.shape:
        raise ValueError(f"logits shape {x.shape} != gt shape {y.shape}")
    h, w = x.shape
    n = cfg.n_points
    n_pool = max(n, int(round(n * cfg.oversample_ratio)))
    pool = rng.random((n_pool, 2)) * (h, w)
    pool_logits = _nearest_values(x, pool)
    n_keep = min(int(round(cfg.importance_fraction * n)), n, n_pool)
    order = np.argsort(np.abs(pool_logits), kind="stable")
    chosen = pool[order[:n_keep]]
    fresh = rng.random((n - n_keep, 2)) * (h, w)
    coords = np.concatenate([chosen, fresh], axis=0)
    return PointSample(
        coords=coords,
        logits=_nearest_values(x, coords),
        targets=_nearest_values(y, coords),
    )


def _log_softmax(x: np.ndarray) -> np.ndarray:
    m = x.max()
    return x - (m + np.log(np.exp(x - m).sum()))


def class_loss(class_logits, target: Optional[int],
               no_object_weight: float = 0.1) -> LossValue:
    """Softmax cross-entropy over class logits, last slot = no-object.

    ``target=None`` selects the no-object slot; that case (and only that
    case) is down-weighted by ``no_object_weight`` so the many unmatched
    queries do not drown out the few matched ones.
    """
    x = np.asarray(class_logits, dtype=np.float64).ravel()
    if x.size < 2:
        raise ValueError("need at least one real class plus no-object")
    if not np.all(np.isfinite(x)):
        raise ValueError("logits must be finite")
    no_object_index = x.size - 1
    t = no_object_index if target is None else int(target)
    if not 0 <= t < x.size:
        raise ValueError(f"target index {t} out of range for {x.size} slots")
    log_probs = _log_softmax(x)
    weight = no_object_weight if t == no_object_index else 1.0
    grad = np.exp(log_probs)
    grad[t] -= 1.0
    return LossValue(-weight * float(log_probs[t]), weight * grad)


def mask_loss(focal: LossValue, dice: LossValue,
              boundary: Optional[LossValue] = None) -> LossValue:
    """Combined per-mask loss: focal + dice (+ boundary when enabled).

    Gradients are summed when every part carries one over the same
    input shape; otherwise the composite carries value only.
    """
    parts = [focal, dice] if boundary is None else [focal, dice, boundary]
    value = float(sum(p.value for p in parts))
    grads = [p.grad for p in parts]
    if all(g is not None for g in grads):
        shapes = {g.shape for g in grads}
        if len(shapes) != 1:
            raise ValueError(f"component gradient shapes differ: {sorted(shapes)}")
        return LossValue(value, sum(grads))
    return LossValue(value)


def total_loss(plant_cls: float, plant_mask: float, leaf_cls: float,
               leaf_mask: float, cfg: LossConfig) -> LossValue:
    """Full objective: λ_cls·(plant+leaf class) + λ_mask·(plant+leaf mask)."""
    value = (cfg.lambda_cls * (float(plant_cls) + float(leaf_cls))
             + cfg.lambda_mask * (float(plant_mask) + float(leaf_mask)))
    return LossValue(value)
