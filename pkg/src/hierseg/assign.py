"""Bipartite assignment for set-prediction training and greedy IoU matching.

Two regimes share this module.  Training needs a minimum-cost matching of
decoder queries to ground-truth instances (classification + mask point
losses as the cost); evaluation and leaf counting need the simpler greedy
pairing of predicted to annotated instances above an IoU threshold.  Both
are deterministic: cost ties fall back to scipy's fixed assignment order,
IoU ties break toward lower ids.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import losses
from .grids import LabelGrid, binary_mask, label_grid, overlap_counts

# How a collection of instances may be passed in: a label grid (0 = no
# instance) or an explicit sequence of (id, mask) pairs.
Instances = Union[LabelGrid, Sequence[Tuple[int, np.ndarray]]]


@dataclass(frozen=True)
class Assignment:
    """Row→column pairing with its summed cost."""

    pairs: tuple  # ((row, col), ...) sorted by row
    total_cost: float


@dataclass(frozen=True)
class Matching:
    """Greedy IoU pairing of predicted to ground-truth instance ids."""

    pairs: tuple  # ((pred_id, gt_id, iou), ...)
    unmatched_pred: frozenset
    unmatched_gt: frozenset


def hungarian(cost) -> Assignment:
    """Minimum-total-cost assignment of min(rows, cols) pairs."""
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2:
        raise ValueError(f"cost matrix must be 2-D, got shape {c.shape}")
    if c.size and not np.all(np.isfinite(c)):
        raise ValueError("cost matrix entries must be finite")
    rows, cols = linear_sum_assignment(c)
    total = float(c[rows, cols].sum()) if len(rows) else 0.0
    return Assignment(tuple(zip(rows.tolist(), cols.tolist())), total)


def match_queries_to_gt(class_probs, mask_logits, gt_instances, cfg: losses.LossConfig,
                        rng: np.random.Generator) -> Assignment:
    """Assign decoder queries to ground-truth instances at minimum loss.

    ``class_probs``: (N, K+1) per-query class probabilities (last slot =
    no-object).  ``mask_logits``: (N, H, W) per-query mask logits.
    ``gt_instances``: sequence of (class index, BinaryMask).  The cost of
    a (query, gt) cell is λ_cls·(−log p(class)) plus λ_mask·(focal +
    dice) over one shared uniform point sample, mirroring the training
    objective minus the boundary term.  Returned pairs are (query index,
    gt index); queries absent from the pairs are implicitly no-object.
    """
    probs = np.asarray(class_probs, dtype=np.float64)
    logits = np.asarray(mask_logits, dtype=np.float64)
    if probs.ndim != 2 or logits.ndim != 3 or probs.shape[0] != logits.shape[0]:
        raise ValueError("expected (N,K+1) probs and (N,H,W) logits")
    n_queries = probs.shape[0]
    gts = list(gt_instances)
    if len(gts) == 0:
        return Assignment((), 0.0)
    if len(gts) > n_queries:
        raise ValueError(
            f"insufficient queries: {n_queries} for {len(gts)} instances")

    h, w = logits.shape[1:]
    coords = rng.random((cfg.n_points, 2)) * (h, w)
    rows = coords[:, 0].astype(np.intp)
    cols = coords[:, 1].astype(np.intp)
    sampled_logits = logits[:, rows, cols]  # (N, n_points)
    sampled_gts = [binary_mask(mask)[rows, cols] for _, mask in gts]

    cost = np.empty((n_queries, len(gts)))
    for j, ((class_idx, _), t) in enumerate(zip(gts, sampled_gts)):
        class_idx = int(class_idx)
        if not 0 <= class_idx < probs.shape[1] - 1:
            raise ValueError(f"gt class index {class_idx} out of range")
        # floor avoids -log 0 when a softmax output underflows to exact zero
        cls_term = -np.log(np.maximum(probs[:, class_idx], 1e-300))
        for i in range(n_queries):
            focal = losses.focal_loss(sampled_logits[i], t,
                                      cfg.gamma, cfg.alpha_focal)
            dice = losses.dice_loss(sampled_logits[i], t)
            cost[i, j] = (cfg.lambda_cls * cls_term[i]
                          + cfg.lambda_mask * (focal.value + dice.value))
    return hungarian(cost)


def _as_id_masks(instances: Instances):
    """Normalize either input form to a list of (id, bool mask)."""
    if isinstance(instances, np.ndarray):
        grid = label_grid(instances)
        return [(int(i), grid == i) for i in np.unique(grid) if i != 0], grid
    out = []
    for inst_id, mask in instances:
        if int(inst_id) == 0:
            raise ValueError("instance id 0 is reserved for background")
        out.append((int(inst_id), binary_mask(mask)))
    return out, None


def _iou_table(preds: Instances, gts: Instances):
    """IoU for every (pred id, gt id) pair with nonzero overlap."""
    pred_list, pred_grid = _as_id_masks(preds)
    gt_list, gt_grid = _as_id_masks(gts)
    if pred_list and gt_list:
        shape_p = pred_list[0][1].shape
        shape_g = gt_list[0][1].shape
        if shape_p != shape_g:
            raise ValueError(f"mask shapes differ: {shape_p} vs {shape_g}")
    table = {}
    if pred_grid is not None and gt_grid is not None:
        # label-grid fast path: one O(pixels) joint histogram
        ids_p, ids_g, counts = overlap_counts(pred_grid, gt_grid)
        area_p = dict(zip(ids_p.tolist(), counts.sum(axis=1).tolist()))
        area_g = dict(zip(ids_g.tolist(), counts.sum(axis=0).tolist()))
        pi, gi = np.nonzero(counts)
        for a, b in zip(pi.tolist(), gi.tolist()):
            idp, idg = int(ids_p[a]), int(ids_g[b])
            if idp == 0 or idg == 0:
                continue
            inter = int(counts[a, b])
            union = area_p[idp] + area_g[idg] - inter
            table[(idp, idg)] = inter / union
    else:
        for idp, mp in pred_list:
            ap = int(mp.sum())
            for idg, mg in gt_list:
                inter = int(np.logical_and(mp, mg).sum())
                if inter == 0:
                    continue
                union = ap + int(mg.sum()) - inter
                table[(idp, idg)] = inter / union
    pred_ids = [i for i, _ in pred_list]
    gt_ids = [i for i, _ in gt_list]
    return pred_ids, gt_ids, table


def greedy_iou_match(preds: Instances, gts: Instances,
                     threshold: float = 0.5) -> Matching:
    """Repeatedly pair the highest-IoU (pred, gt) with IoU > threshold.

    Ties break toward the lower pred id, then the lower gt id.  At the
    standard threshold of 0.5 the result is also the unique optimal
    matching, since no two instances on one side can both overlap the
    same instance on the other side by more than half.
    """
    pred_ids, gt_ids, table = _iou_table(preds, gts)
    candidates = sorted(
        ((v, p, g) for (p, g), v in table.items() if v > threshold),
        key=lambda t: (-t[0], t[1], t[2]),
    )
    taken_p, taken_g = set(), set()
    pairs = []
    for v, p, g in candidates:
        if p in taken_p or g in taken_g:
            continue
        pairs.append((p, g, v))
        taken_p.add(p)
        taken_g.add(g)
    return Matching(
        pairs=tuple(pairs),
        unmatched_pred=frozenset(set(pred_ids) - taken_p),
        unmatched_gt=frozenset(set(gt_ids) - taken_g),
    )
