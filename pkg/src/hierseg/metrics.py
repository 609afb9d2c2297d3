"""Evaluation stack: class IoU, panoptic quality, and leaf-count RMSE.

Instance scoring follows ignore-region semantics throughout: ground-truth
instances listed in an ignore set (or carrying a partial-visibility
class) are removed before counting, and an unmatched prediction whose
pixels fall mostly inside ignored regions is dropped rather than counted
as a false positive.  Semantic IoU likewise skips pixels whose
ground-truth class marks partial visibility.

Dataset-level numbers are pooled, not averaged per frame: PQ is
recomputed from summed tp/fp/fn/iou_sum, IoU from summed intersections
and unions, RMSE from pooled squared errors.  Per-frame metrics that are
undefined (no instances on either side, class absent from both grids)
carry ``None`` and are excluded from means.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Iterable, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .assign import Instances, Matching, greedy_iou_match
from .grids import (CROP, NO_INSTANCE, PARTIAL_CROP, PARTIAL_WEED, SOIL, WEED,
                    LabelGrid, PanopticFrame, binary_mask, keep_ids,
                    label_grid, overlap_counts)


@dataclass(frozen=True)
class PQStats:
    """Panoptic-quality tallies for one class (or pooled over frames).

    ``pq``/``sq``/``rq`` are None when neither side contributed any
    instance — the undefined marker that aggregation excludes.
    """

    pq: Optional[float]
    sq: Optional[float]
    rq: Optional[float]
    tp: int
    fp: int
    fn: int
    iou_sum: float


class LeafCountRmse(NamedTuple):
    """The three RMSE variants plus crop precision/recall."""

    rmse_tp: Optional[float]
    rmse_pred: Optional[float]
    rmse_gt: Optional[float]
    precision: Optional[float]
    recall: Optional[float]


@dataclass(frozen=True)
class FrameReport:
    """Every metric of one frame plus the pooling ingredients."""

    iou_soil: Optional[float]
    iou_crop: Optional[float]
    iou_weed: Optional[float]
    iou_parts: Dict[int, Tuple[int, int]]  # class id -> (inter, union)
    pq_crop: PQStats
    pq_leaf: PQStats
    pq_weed: PQStats
    pq: Optional[float]
    pq_dagger: Optional[float]
    crop_matching: Matching
    pred_leaf_counts: Dict[int, int]
    gt_leaf_counts: Dict[int, int]
    rmse_tp: Optional[float]
    rmse_pred: Optional[float]
    rmse_gt: Optional[float]
    precision_crop: Optional[float]
    recall_crop: Optional[float]
    rmse_parts: Dict[str, float]


@dataclass(frozen=True)
class DatasetReport:
    """Pooled metrics over a frame collection, with per-frame provenance."""

    n_frames: int
    iou_soil: Optional[float]
    iou_crop: Optional[float]
    iou_weed: Optional[float]
    pq_crop: PQStats
    pq_leaf: PQStats
    pq_weed: PQStats
    pq: Optional[float]
    pq_dagger: Optional[float]
    rmse_tp: Optional[float]
    rmse_pred: Optional[float]
    rmse_gt: Optional[float]
    precision_crop: Optional[float]
    recall_crop: Optional[float]
    frames: tuple


def _mean_defined(values) -> Optional[float]:
    defined = [float(v) for v in values if v is not None]
    if not defined:
        return None
    return sum(defined) / len(defined)


def class_iou(pred_sem: LabelGrid, gt_sem: LabelGrid, class_id: int,
              exclude=None) -> Optional[float]:
    """IoU of one semantic class; None when absent from both grids.

    ``exclude`` optionally masks out pixels (e.g. partial-visibility
    regions) before counting.
    """
    inter, union = _class_iou_parts(pred_sem, gt_sem, class_id, exclude)
    if union == 0:
        return None
    return inter / union


def _class_iou_parts(pred_sem, gt_sem, class_id, exclude=None):
    p = label_grid(pred_sem)
    g = label_grid(gt_sem)
    if p.shape != g.shape:
        raise ValueError(f"grid shapes differ: {p.shape} vs {g.shape}")
    pm = p == class_id
    gm = g == class_id
    if exclude is not None:
        valid = ~binary_mask(exclude)
        if valid.shape != p.shape:
            raise ValueError("exclusion mask shape mismatch")
        pm &= valid
        gm &= valid
    inter = int((pm & gm).sum())
    union = int((pm | gm).sum())
    return inter, union


def _instance_overlaps(preds: Instances, gts: Instances):
    """Areas and pairwise intersections for two instance collections."""
    if isinstance(preds, np.ndarray) and isinstance(gts, np.ndarray):
        ids_p, ids_g, counts = overlap_counts(preds, gts)
        area_p = {int(i): int(a) for i, a in zip(ids_p, counts.sum(axis=1)) if i != NO_INSTANCE}
        area_g = {int(i): int(a) for i, a in zip(ids_g, counts.sum(axis=0)) if i != NO_INSTANCE}
        inter = {}
        for a, b in zip(*np.nonzero(counts)):
            ip, ig = int(ids_p[a]), int(ids_g[b])
            if ip != NO_INSTANCE and ig != NO_INSTANCE:
                inter[(ip, ig)] = int(counts[a, b])
        return area_p, area_g, inter
    pred_list = _listify(preds)
    gt_list = _listify(gts)
    if pred_list and gt_list and pred_list[0][1].shape != gt_list[0][1].shape:
        raise ValueError("mask shapes differ")
    area_p = {i: int(m.sum()) for i, m in pred_list}
    area_g = {i: int(m.sum()) for i, m in gt_list}
    inter = {}
    for ip, mp in pred_list:
        for ig, mg in gt_list:
            v = int(np.logical_and(mp, mg).sum())
            if v:
                inter[(ip, ig)] = v
    return area_p, area_g, inter


def _listify(instances: Instances):
    if isinstance(instances, np.ndarray):
        grid = label_grid(instances)
        return [(int(i), grid == i) for i in np.unique(grid) if i != NO_INSTANCE]
    return [(int(i), binary_mask(m)) for i, m in instances]


def _pq_core(preds: Instances, gts: Instances, ignore_gt_ids,
             threshold: float = 0.5):
    """Shared PQ machinery; returns stats plus the match bookkeeping."""
    area_p, area_g, inter = _instance_overlaps(preds, gts)
    ignore = {int(i) for i in ignore_gt_ids}
    kept_gt = [g for g in area_g if g not in ignore]

    pairs = []  # (pred, gt, iou) with iou > threshold among kept gts
    for (ip, ig), v in inter.items():
        if ig in ignore:
            continue
        iou_val = v / (area_p[ip] + area_g[ig] - v)
        if iou_val > threshold:
            pairs.append((ip, ig, iou_val))
    matched_p = {p for p, _, _ in pairs}
    matched_g = {g for _, g, _ in pairs}

    # Unmatched predictions majority-covered by ignored GT do not score.
    dropped = set()
    for ip, area in area_p.items():
        if ip in matched_p:
            continue
        covered = sum(inter.get((ip, ig), 0) for ig in ignore if ig in area_g)
        if covered > 0.5 * area:
            dropped.add(ip)

    scored_preds = [p for p in area_p if p not in dropped]
    tp = len(pairs)
    fp = len(scored_preds) - tp
    fn = len(kept_gt) - len(matched_g)
    iou_sum = float(sum(v for _, _, v in pairs))
    stats = _pq_from_counts(tp, fp, fn, iou_sum)
    detail = {
        "pairs": sorted(pairs, key=lambda t: (t[0], t[1])),
        "scored_preds": sorted(scored_preds),
        "kept_gt": sorted(kept_gt),
        "dropped_preds": sorted(dropped),
    }
    return stats, detail


def _pq_from_counts(tp: int, fp: int, fn: int, iou_sum: float) -> PQStats:
    denom = tp + 0.5 * fp + 0.5 * fn
    if denom == 0:
        return PQStats(None, None, None, tp, fp, fn, iou_sum)
    pq = iou_sum / denom
    sq = iou_sum / tp if tp > 0 else 0.0
    rq = tp / denom
    return PQStats(pq, sq, rq, tp, fp, fn, iou_sum)


def panoptic_quality(pred_insts: Instances, gt_insts: Instances,
                     ignore_gt_ids: Iterable = ()) -> PQStats:
    """Panoptic quality of one instance collection against ground truth.

    True positives are the (unique) pairs with IoU > 0.5; PQ is the
    matched-IoU sum over tp + fp/2 + fn/2.  Returns the undefined marker
    when, after removing ignored instances, neither side has anything to
    score.
    """
    stats, _ = _pq_core(pred_insts, gt_insts, ignore_gt_ids)
    return stats


def aggregate_pq(pq_crop: Optional[float], pq_leaf: Optional[float]) -> Optional[float]:
    """Mean of plant- and leaf-level PQ; undefined inputs are excluded."""
    return _mean_defined((pq_crop, pq_leaf))


def pq_dagger(pq_crop: Optional[float], pq_leaf: Optional[float],
              iou_weed: Optional[float], iou_soil: Optional[float]) -> Optional[float]:
    """Mean of PQ_crop, PQ_leaf, IoU_weed, IoU_soil (defined inputs only)."""
    return _mean_defined((pq_crop, pq_leaf, iou_weed, iou_soil))


def leaf_counts(plant_insts: LabelGrid, leaf_insts: LabelGrid,
                crop_ids: Iterable) -> Dict[int, int]:
    """Per-crop leaf counts by maximal-overlap assignment.

    Each leaf instance is attributed to the crop id (among ``crop_ids``)
    it overlaps most, ties toward the lower crop id; zero-overlap leaves
    are counted nowhere.  Every requested crop id appears in the result,
    with 0 when leafless.
    """
    plants = label_grid(plant_insts)
    leaves = label_grid(leaf_insts)
    if plants.shape != leaves.shape:
        raise ValueError(f"grid shapes differ: {plants.shape} vs {leaves.shape}")
    wanted = sorted({int(i) for i in crop_ids} - {NO_INSTANCE})
    counts = {i: 0 for i in wanted}
    if not wanted:
        return counts
    ids_l, ids_p, table = overlap_counts(leaves, plants)
    col_of = {int(p): j for j, p in enumerate(ids_p)}
    crop_cols = [col_of[i] for i in wanted if i in col_of]
    crop_col_ids = [int(ids_p[j]) for j in crop_cols]
    if not crop_cols:
        return counts
    sub = table[:, crop_cols]
    for row, leaf_id in enumerate(ids_l):
        if int(leaf_id) == NO_INSTANCE:
            continue
        overlaps = sub[row]
        if overlaps.max() == 0:
            continue
        winner = crop_col_ids[int(np.argmax(overlaps))]  # first max = lower id
        counts[winner] += 1
    return counts


def _rmse_parts(matching: Matching, pred_counts, gt_counts) -> Dict[str, float]:
    """Pooled squared-error tallies behind the three RMSE variants."""
    pred_counts = {int(k): int(v) for k, v in pred_counts.items()}
    gt_counts = {int(k): int(v) for k, v in gt_counts.items()}

    def _pred(i):
        if i not in pred_counts:
            raise ValueError(f"missing predicted leaf count for crop id {i}")
        return pred_counts[i]

    def _gt(i):
        if i not in gt_counts:
            raise ValueError(f"missing ground-truth leaf count for crop id {i}")
        return gt_counts[i]

    sse_tp = 0.0
    for p, g, _ in matching.pairs:
        sse_tp += (_pred(p) - _gt(g)) ** 2
    sse_pred = sse_tp + sum(_pred(p) ** 2 for p in matching.unmatched_pred)
    sse_gt = sse_tp + sum(_gt(g) ** 2 for g in matching.unmatched_gt)
    n_pairs = len(matching.pairs)
    return {
        "sse_tp": sse_tp,
        "n_tp": n_pairs,
        "sse_pred": sse_pred,
        "n_pred": n_pairs + len(matching.unmatched_pred),
        "sse_gt": sse_gt,
        "n_gt": n_pairs + len(matching.unmatched_gt),
        "n_pairs": n_pairs,
        "n_preds": n_pairs + len(matching.unmatched_pred),
        "n_gts": n_pairs + len(matching.unmatched_gt),
    }


def _rmse_from_parts(parts: Dict[str, float]) -> LeafCountRmse:
    def _rmse(sse, n):
        return math.sqrt(sse / n) if n > 0 else None

    n_preds = parts["n_preds"]
    n_gts = parts["n_gts"]
    return LeafCountRmse(
        rmse_tp=_rmse(parts["sse_tp"], parts["n_tp"]),
        rmse_pred=_rmse(parts["sse_pred"], parts["n_pred"]),
        rmse_gt=_rmse(parts["sse_gt"], parts["n_gt"]),
        precision=parts["n_pairs"] / n_preds if n_preds > 0 else None,
        recall=parts["n_pairs"] / n_gts if n_gts > 0 else None,
    )


def leaf_count_rmse(matching: Matching, pred_counts, gt_counts) -> LeafCountRmse:
    """Leaf-count RMSE over matched pairs, all predictions, and all GT.

    Matched pairs compare counts directly; the all-predictions variant
    substitutes ground-truth count 0 for unmatched predictions, the
    all-GT variant substitutes predicted count 0 for unmatched crops.
    """
    return _rmse_from_parts(_rmse_parts(matching, pred_counts, gt_counts))


def _instance_classes(inst_grid: LabelGrid, sem_grid: LabelGrid) -> Dict[int, int]:
    """Majority semantic class per instance (ties toward lower class id)."""
    ids_i, ids_s, counts = overlap_counts(inst_grid, sem_grid)
    out = {}
    for row, inst_id in enumerate(ids_i):
        if int(inst_id) == NO_INSTANCE:
            continue
        out[int(inst_id)] = int(ids_s[int(np.argmax(counts[row]))])
    return out


def evaluate_frame(pred: PanopticFrame, gt: PanopticFrame,
                   match_threshold: float = 0.5) -> FrameReport:
    """Score one predicted frame against its ground truth.

    Crop/weed PQ run on plant instances split by majority semantic
    class; partial-visibility instances and explicitly ignored ids form
    the ignore sets.  Leaf PQ runs on the full leaf grids, ignoring
    leaves that sit on partially visible crops.  Crop counting matches
    scored crop instances greedily at the same threshold and compares
    per-crop leaf tallies.
    """
    grids = [pred.semantics, pred.plant_instances, pred.leaf_instances,
             gt.semantics, gt.plant_instances, gt.leaf_instances]
    if len({g.shape for g in grids}) != 1:
        raise ValueError("pred/gt grids must share dimensions")

    gt_plant_cls = _instance_classes(gt.plant_instances, gt.semantics)
    pred_plant_cls = _instance_classes(pred.plant_instances, pred.semantics)
    explicit = set(gt.ignore_plant_ids)

    def _split(cls_map, visible, partial, extra=frozenset()):
        members = {i for i, c in cls_map.items() if c in (visible, partial)}
        ignored = {i for i, c in cls_map.items() if c == partial} | set(extra)
        return members, ignored

    gt_crop_ids, crop_ignore = _split(gt_plant_cls, CROP, PARTIAL_CROP, explicit)
    gt_weed_ids, weed_ignore = _split(gt_plant_cls, WEED, PARTIAL_WEED, explicit)
    pred_crop_ids = {i for i, c in pred_plant_cls.items() if c in (CROP, PARTIAL_CROP)}
    pred_weed_ids = {i for i, c in pred_plant_cls.items() if c in (WEED, PARTIAL_WEED)}

    gt_crop_grid = keep_ids(gt.plant_instances, gt_crop_ids | explicit)
    gt_weed_grid = keep_ids(gt.plant_instances, gt_weed_ids | explicit)
    pred_crop_grid = keep_ids(pred.plant_instances, pred_crop_ids)
    pred_weed_grid = keep_ids(pred.plant_instances, pred_weed_ids)

    pq_crop_stats, crop_detail = _pq_core(pred_crop_grid, gt_crop_grid,
                                          crop_ignore, match_threshold)
    pq_weed_stats, _ = _pq_core(pred_weed_grid, gt_weed_grid,
                                weed_ignore, match_threshold)

    gt_leaf_cls = _instance_classes(gt.leaf_instances, gt.semantics)
    leaf_ignore = ({i for i, c in gt_leaf_cls.items() if c == PARTIAL_CROP}
                   | set(gt.ignore_leaf_ids))
    pq_leaf_stats, _ = _pq_core(pred.leaf_instances, gt.leaf_instances,
                                leaf_ignore, match_threshold)

    # Semantic IoU skips partial-visibility pixels and explicitly ignored
    # plant instances: their true class is unknowable at evaluation time.
    exclude = np.isin(gt.semantics, (PARTIAL_CROP, PARTIAL_WEED))
    if explicit:
        exclude |= np.isin(gt.plant_instances,
                           np.asarray(sorted(explicit), dtype=np.uint16))
    iou_parts = {c: _class_iou_parts(pred.semantics, gt.semantics, c, exclude)
                 for c in (SOIL, CROP, WEED)}

    def _iou_of(c):
        inter, union = iou_parts[c]
        return inter / union if union > 0 else None

    # Crop matching for counting: scored instances only, so dropped
    # predictions and ignored GT never enter the RMSE pools.
    pred_scored = keep_ids(pred_crop_grid, crop_detail["scored_preds"])
    gt_scored = keep_ids(gt_crop_grid, crop_detail["kept_gt"])
    matching = greedy_iou_match(pred_scored, gt_scored, match_threshold)

    pred_leaf_counts = leaf_counts(pred_scored, pred.leaf_instances,
                                   crop_detail["scored_preds"])
    gt_leaf_grid = keep_ids(gt.leaf_instances,
                            set(_listify_ids(gt.leaf_instances)) - set(gt.ignore_leaf_ids))
    gt_leaf_counts_map = leaf_counts(gt_scored, gt_leaf_grid,
                                     crop_detail["kept_gt"])
    rmse_parts = _rmse_parts(matching, pred_leaf_counts, gt_leaf_counts_map)
    rmse = _rmse_from_parts(rmse_parts)

    iou_soil = _iou_of(SOIL)
    iou_crop = _iou_of(CROP)
    iou_weed = _iou_of(WEED)
    return FrameReport(
        iou_soil=iou_soil,
        iou_crop=iou_crop,
        iou_weed=iou_weed,
        iou_parts=iou_parts,
        pq_crop=pq_crop_stats,
        pq_leaf=pq_leaf_stats,
        pq_weed=pq_weed_stats,
        pq=aggregate_pq(pq_crop_stats.pq, pq_leaf_stats.pq),
        pq_dagger=pq_dagger(pq_crop_stats.pq, pq_leaf_stats.pq,
                            iou_weed, iou_soil),
        crop_matching=matching,
        pred_leaf_counts=pred_leaf_counts,
        gt_leaf_counts=gt_leaf_counts_map,
        rmse_tp=rmse.rmse_tp,
        rmse_pred=rmse.rmse_pred,
        rmse_gt=rmse.rmse_gt,
        precision_crop=rmse.precision,
        recall_crop=rmse.recall,
        rmse_parts=rmse_parts,
    )


def _listify_ids(grid: LabelGrid):
    return [int(i) for i in np.unique(grid) if int(i) != NO_INSTANCE]


def aggregate_reports(frames: Sequence[FrameReport]) -> DatasetReport:
    """Pool frame reports into dataset-level metrics.

    Pure fold, invariant to frame order: every pooled quantity is a sum
    of per-frame integer or float tallies.
    """
    frames = list(frames)
    if not frames:
        raise ValueError("cannot aggregate zero frames")

    def _pool_iou(class_id):
        inter = sum(f.iou_parts[class_id][0] for f in frames)
        union = sum(f.iou_parts[class_id][1] for f in frames)
        return inter / union if union > 0 else None

    def _pool_pq(select):
        tp = sum(select(f).tp for f in frames)
        fp = sum(select(f).fp for f in frames)
        fn = sum(select(f).fn for f in frames)
        iou_sum = sum(select(f).iou_sum for f in frames)
        return _pq_from_counts(tp, fp, fn, iou_sum)

    pooled_parts = {
        key: sum(f.rmse_parts[key] for f in frames)
        for key in frames[0].rmse_parts
    }
    rmse = _rmse_from_parts(pooled_parts)

    iou_soil = _pool_iou(SOIL)
    iou_crop = _pool_iou(CROP)
    iou_weed = _pool_iou(WEED)
    pq_crop_stats = _pool_pq(lambda f: f.pq_crop)
    pq_leaf_stats = _pool_pq(lambda f: f.pq_leaf)
    pq_weed_stats = _pool_pq(lambda f: f.pq_weed)
    return DatasetReport(
        n_frames=len(frames),
        iou_soil=iou_soil,
        iou_crop=iou_crop,
        iou_weed=iou_weed,
        pq_crop=pq_crop_stats,
        pq_leaf=pq_leaf_stats,
        pq_weed=pq_weed_stats,
        pq=aggregate_pq(pq_crop_stats.pq, pq_leaf_stats.pq),
        pq_dagger=pq_dagger(pq_crop_stats.pq, pq_leaf_stats.pq,
                            iou_weed, iou_soil),
        rmse_tp=rmse.rmse_tp,
        rmse_pred=rmse.rmse_pred,
        rmse_gt=rmse.rmse_gt,
        precision_crop=rmse.precision,
        recall_crop=rmse.recall,
        frames=tuple(frames),
    )
