"""Evaluation metrics: class IoU, PQ with ignore semantics, RMSE, pooling.

``panoptic_quality`` is validated against a brute-force restatement of
the definition; the aggregate formulas are validated against frozen
external reference rows whose summary columns must be reproducible from
their per-class columns.
"""

import dataclasses
import math

import numpy as np
import pytest

from hierseg.assign import Matching
from hierseg.grids import CROP, PARTIAL_CROP, SOIL, WEED, PanopticFrame
from hierseg.metrics import (
    DatasetReport, aggregate_pq, aggregate_reports, class_iou, evaluate_frame,
    leaf_count_rmse, leaf_counts, panoptic_quality, pq_dagger,
)

from oracles import brute_force_pq, random_instance_grid

# Frozen reference measurements (percent): per-class quality columns and
# the two aggregate columns derived from them.  The aggregates must be
# reproducible from the parts to the printed 2-decimal precision.
# Columns: iou_soil, iou_crop, iou_weed, pq_crop, pq_leaf, pq_weed, pq, pq_d
REFERENCE_ROWS = [
    (99.45, 95.74, 72.94, 81.86, 71.68, 49.17, 76.77, 81.48),
    (99.44, 95.72, 72.62, 81.66, 72.12, 50.02, 76.89, 81.46),
    (99.45, 95.78, 73.64, 81.96, 72.06, 51.16, 77.01, 81.78),
    (99.45, 95.76, 73.75, 81.75, 72.29, 51.56, 77.02, 81.81),
    (99.45, 95.76, 73.75, 81.75, 72.61, 51.56, 77.18, 81.89),
    (99.48, 96.09, 76.39, 83.70, 74.92, 55.61, 79.31, 83.62),
    (99.48, 96.09, 76.39, 83.70, 75.24, 55.61, 79.47, 83.70),
]


def boxes(shape, spec):
    g = np.zeros(shape, dtype=np.uint16)
    for inst_id, (r0, r1, c0, c1) in spec.items():
        g[r0:r1, c0:c1] = inst_id
    return g


class TestClassIou:
    def test_identical_grids(self):
        g = boxes((8, 8), {1: (0, 4, 0, 8), 2: (4, 8, 0, 8)})
        assert class_iou(g, g, 1) == 1.0
        assert class_iou(g, g, 2) == 1.0

    def test_half_shifted_equal_regions(self):
        gt = boxes((4, 12), {1: (0, 4, 0, 6)})
        pred = boxes((4, 12), {1: (0, 4, 3, 9)})
        assert class_iou(pred, gt, 1) == pytest.approx(1 / 3)

    def test_absent_class_is_undefined(self):
        g = np.zeros((4, 4), dtype=np.uint16)
        assert class_iou(g, g, 2) is None

    def test_exclusion_mask(self):
        gt = boxes((4, 8), {1: (0, 4, 0, 4)})
        pred = boxes((4, 8), {1: (0, 4, 0, 8)})
        exclude = np.zeros((4, 8), dtype=bool)
        exclude[:, 4:] = True  # hide exactly the false-positive half
        assert class_iou(pred, gt, 1) == pytest.approx(0.5)
        assert class_iou(pred, gt, 1, exclude=exclude) == 1.0


class TestPanopticQuality:
    def test_identical_single_instance(self):
        g = boxes((8, 8), {1: (1, 5, 1, 5)})
        out = panoptic_quality(g, g)
        assert (out.pq, out.sq, out.rq) == (1.0, 1.0, 1.0)
        assert (out.tp, out.fp, out.fn) == (1, 0, 0)

    def test_partial_overlap_example(self):
        # GT 100 px, pred 100 px, overlap 80 → IoU 80/120
        gt = boxes((20, 20), {1: (0, 10, 0, 10)})
        pred = boxes((20, 20), {1: (2, 12, 0, 10)})
        out = panoptic_quality(pred, gt)
        assert out.pq == pytest.approx(80 / 120)
        assert out.sq == pytest.approx(80 / 120)
        assert out.rq == 1.0

    def test_disjoint_instances(self):
        gt = boxes((8, 8), {1: (0, 3, 0, 3)})
        pred = boxes((8, 8), {1: (5, 8, 5, 8)})
        out = panoptic_quality(pred, gt)
        assert (out.tp, out.fp, out.fn) == (0, 1, 1)
        assert out.pq == 0.0

    def test_empty_both_sides_undefined(self):
        z = np.zeros((4, 4), dtype=np.uint16)
        out = panoptic_quality(z, z)
        assert out.pq is None and out.sq is None and out.rq is None

    def test_ignored_gt_removes_fn_and_drops_covering_pred(self):
        gt = boxes((10, 10), {1: (0, 5, 0, 5), 2: (6, 10, 6, 10)})
        pred = boxes((10, 10), {1: (0, 5, 0, 5), 2: (6, 10, 6, 10)})
        out = panoptic_quality(pred, gt, ignore_gt_ids={2})
        # pred 2 sits fully on ignored gt 2 → dropped, not a false positive
        assert (out.tp, out.fp, out.fn) == (1, 0, 0)
        assert out.pq == 1.0

    def test_extra_prediction_lowers_pq(self):
        gt = boxes((10, 10), {1: (0, 5, 0, 5)})
        pred_good = boxes((10, 10), {1: (0, 5, 0, 5)})
        pred_extra = boxes((10, 10), {1: (0, 5, 0, 5), 2: (7, 9, 7, 9)})
        assert panoptic_quality(pred_extra, gt).pq < \
            panoptic_quality(pred_good, gt).pq

    def test_hundred_random_frames_match_brute_force(self):
        rng = np.random.default_rng(20240916)
        for case in range(100):
            shape = (int(rng.integers(4, 33)), int(rng.integers(4, 33)))
            style = "boxes" if case % 2 == 0 else "noise"
            pred = random_instance_grid(rng, shape, style)
            gt = random_instance_grid(rng, shape, style)
            present = [int(i) for i in np.unique(gt) if i]
            ignore = set()
            if case % 3 == 0 and present:
                ignore = {int(rng.choice(present))}
            got = panoptic_quality(pred, gt, ignore_gt_ids=ignore)
            want = brute_force_pq(pred, gt, ignore_gt_ids=ignore)
            assert (got.tp, got.fp, got.fn) == \
                (want["tp"], want["fp"], want["fn"]), f"case {case}"
            assert got.iou_sum == pytest.approx(want["iou_sum"], abs=1e-12)
            if want["pq"] is None:
                assert got.pq is None
            else:
                assert got.pq == pytest.approx(want["pq"], abs=1e-12)

    def test_pq_equals_sq_times_rq(self):
        rng = np.random.default_rng(5)
        for _ in range(25):
            pred = random_instance_grid(rng, (16, 16), "boxes")
            gt = random_instance_grid(rng, (16, 16), "boxes")
            out = panoptic_quality(pred, gt)
            if out.pq is not None and out.tp > 0:
                assert abs(out.pq - out.sq * out.rq) <= 1e-12


class TestAggregateFormulas:
    @pytest.mark.parametrize("row", REFERENCE_ROWS)
    def test_reference_rows_reproduce(self, row):
        iou_soil, _iou_crop, iou_weed, pq_crop, pq_leaf, _pq_weed, pq, pq_d = row
        assert aggregate_pq(pq_crop, pq_leaf) == pytest.approx(pq, abs=0.005)
        assert pq_dagger(pq_crop, pq_leaf, iou_weed, iou_soil) == \
            pytest.approx(pq_d, abs=0.005)

    def test_equal_inputs_pass_through(self):
        assert aggregate_pq(0.37, 0.37) == pytest.approx(0.37)

    def test_all_zero(self):
        assert pq_dagger(0.0, 0.0, 0.0, 0.0) == 0.0

    def test_none_inputs_are_excluded(self):
        assert aggregate_pq(0.5, None) == 0.5
        assert pq_dagger(None, None, None, None) is None


class TestLeafCounts:
    def test_simple_containment(self):
        plants = boxes((8, 8), {1: (0, 8, 0, 8)})
        leaves = boxes((8, 8), {1: (0, 2, 0, 8), 2: (3, 5, 0, 8),
                                3: (6, 8, 0, 8)})
        assert leaf_counts(plants, leaves, [1]) == {1: 3}

    def test_majority_overlap_wins(self):
        # leaf spans two crops: 60 px on crop 1, 40 px on crop 2
        plants = boxes((10, 10), {1: (0, 6, 0, 10), 2: (6, 10, 0, 10)})
        leaves = boxes((10, 10), {1: (0, 10, 0, 10)})
        assert leaf_counts(plants, leaves, [1, 2]) == {1: 1, 2: 0}

    def test_zero_overlap_leaf_unassigned(self):
        plants = boxes((6, 6), {1: (0, 3, 0, 6)})
        leaves = boxes((6, 6), {1: (4, 6, 0, 6)})
        assert leaf_counts(plants, leaves, [1]) == {1: 0}

    def test_tie_goes_to_lower_crop_id(self):
        plants = boxes((4, 8), {2: (0, 4, 0, 4), 5: (0, 4, 4, 8)})
        leaves = boxes((4, 8), {1: (1, 3, 2, 6)})  # 4 px on each crop
        assert leaf_counts(plants, leaves, [5, 2]) == {2: 1, 5: 0}

    def test_requested_ids_always_present(self):
        plants = np.zeros((4, 4), dtype=np.uint16)
        leaves = np.zeros((4, 4), dtype=np.uint16)
        assert leaf_counts(plants, leaves, [3, 7]) == {3: 0, 7: 0}


class TestLeafCountRmse:
    @staticmethod
    def matching(pairs, unmatched_pred=(), unmatched_gt=()):
        return Matching(pairs=tuple(pairs),
                        unmatched_pred=frozenset(unmatched_pred),
                        unmatched_gt=frozenset(unmatched_gt))

    def test_perfect_prediction(self):
        m = self.matching([(1, 1, 1.0), (2, 2, 1.0)])
        out = leaf_count_rmse(m, {1: 4, 2: 6}, {1: 4, 2: 6})
        assert out == (0.0, 0.0, 0.0, 1.0, 1.0)

    def test_matched_pairs_value(self):
        # pred counts [3, 5] vs gt [4, 5] → √((1 + 0)/2)
        m = self.matching([(1, 1, 0.9), (2, 2, 0.8)])
        out = leaf_count_rmse(m, {1: 3, 2: 5}, {1: 4, 2: 5})
        assert out.rmse_tp == pytest.approx(math.sqrt(0.5), abs=1e-12)
        assert out.rmse_tp == pytest.approx(0.7071, abs=1e-4)

    def test_unmatched_substitution_rules(self):
        # + unmatched pred with count 2 → rmse_pred = √((1+0+4)/3)
        # + unmatched gt with count 3 → rmse_gt = √((1+0+9)/3)
        m = self.matching([(1, 1, 0.9), (2, 2, 0.8)],
                          unmatched_pred={3}, unmatched_gt={4})
        out = leaf_count_rmse(m, {1: 3, 2: 5, 3: 2}, {1: 4, 2: 5, 4: 3})
        assert out.rmse_pred == pytest.approx(math.sqrt(5 / 3), abs=1e-12)
        assert out.rmse_pred == pytest.approx(1.2910, abs=1e-4)
        assert out.rmse_gt == pytest.approx(math.sqrt(10 / 3), abs=1e-12)
        assert out.rmse_gt == pytest.approx(1.8257, abs=1e-4)
        assert out.precision == pytest.approx(2 / 3)
        assert out.recall == pytest.approx(2 / 3)

    def test_empty_everything_is_undefined(self):
        out = leaf_count_rmse(self.matching([]), {}, {})
        assert out == (None, None, None, None, None)

    def test_missing_count_raises_with_id(self):
        m = self.matching([(1, 1, 0.9)])
        with pytest.raises(ValueError, match="crop id 1"):
            leaf_count_rmse(m, {}, {1: 2})


def make_frame(sem, plants, leaves, **kwargs):
    return PanopticFrame(semantics=sem, plant_instances=plants,
                         leaf_instances=leaves, **kwargs)


def simple_scene():
    """One crop (two leaves) plus one weed on a 12×12 canvas."""
    sem = np.zeros((12, 12), dtype=np.uint16)
    plants = np.zeros((12, 12), dtype=np.uint16)
    leaves = np.zeros((12, 12), dtype=np.uint16)
    sem[1:7, 1:7] = CROP
    plants[1:7, 1:7] = 1
    leaves[1:4, 1:7] = 1
    leaves[4:7, 1:7] = 2
    sem[9:12, 9:12] = WEED
    plants[9:12, 9:12] = 2
    return make_frame(sem, plants, leaves)


class TestEvaluateFrame:
    def test_perfect_prediction(self):
        gt = simple_scene()
        out = evaluate_frame(gt, gt)
        assert out.iou_soil == 1.0
        assert out.iou_crop == 1.0
        assert out.iou_weed == 1.0
        assert out.pq_crop.pq == 1.0
        assert out.pq_leaf.pq == 1.0
        assert out.pq_weed.pq == 1.0
        assert out.pq == 1.0
        assert out.pq_dagger == 1.0
        assert (out.rmse_tp, out.rmse_pred, out.rmse_gt) == (0.0, 0.0, 0.0)
        assert (out.precision_crop, out.recall_crop) == (1.0, 1.0)

    def test_empty_prediction(self):
        gt = simple_scene()
        empty = make_frame(np.zeros((12, 12), dtype=np.uint16),
                           np.zeros((12, 12), dtype=np.uint16),
                           np.zeros((12, 12), dtype=np.uint16))
        out = evaluate_frame(empty, gt)
        assert out.recall_crop == 0.0
        assert out.precision_crop is None  # no predictions to be precise about
        assert out.pq_crop.pq == 0.0 and out.pq_crop.fn == 1
        # one unmatched gt crop with 2 leaves → rmse_gt = √(2²/1)
        assert out.rmse_gt == pytest.approx(2.0)
        assert out.rmse_tp is None

    def test_pq_dagger_recomputation_invariant(self):
        gt = simple_scene()
        pred = make_frame(gt.semantics.copy(), gt.plant_instances.copy(),
                          np.zeros((12, 12), dtype=np.uint16))
        out = evaluate_frame(pred, gt)
        parts = [out.pq_crop.pq, out.pq_leaf.pq, out.iou_weed, out.iou_soil]
        expected = sum(p for p in parts if p is not None) / \
            len([p for p in parts if p is not None])
        assert out.pq_dagger == pytest.approx(expected, abs=1e-12)

    def test_partial_visibility_instance_is_ignored(self):
        sem = np.zeros((12, 12), dtype=np.uint16)
        plants = np.zeros((12, 12), dtype=np.uint16)
        leaves = np.zeros((12, 12), dtype=np.uint16)
        # fully visible crop
        sem[1:5, 1:5] = CROP
        plants[1:5, 1:5] = 1
        leaves[1:5, 1:5] = 1
        # partially visible crop at the border, carrying a leaf
        sem[8:12, 0:4] = PARTIAL_CROP
        plants[8:12, 0:4] = 2
        leaves[8:12, 0:4] = 2
        gt = make_frame(sem, plants, leaves)

        # prediction reproduces the visible crop and also covers the
        # partial crop region with a "crop" guess
        psem = np.zeros((12, 12), dtype=np.uint16)
        pplants = np.zeros((12, 12), dtype=np.uint16)
        pleaves = np.zeros((12, 12), dtype=np.uint16)
        psem[1:5, 1:5] = CROP
        pplants[1:5, 1:5] = 1
        pleaves[1:5, 1:5] = 1
        psem[8:12, 0:4] = CROP
        pplants[8:12, 0:4] = 2
        pred = make_frame(psem, pplants, pleaves)

        out = evaluate_frame(pred, gt)
        # ignored gt: no fn; covering pred: dropped, no fp
        assert (out.pq_crop.tp, out.pq_crop.fp, out.pq_crop.fn) == (1, 0, 0)
        assert out.pq_crop.pq == 1.0
        # the leaf on the partial crop is ignored too
        assert (out.pq_leaf.tp, out.pq_leaf.fp, out.pq_leaf.fn) == (1, 0, 0)
        # partial pixels never contribute to semantic IoU
        assert out.iou_crop == 1.0
        # the ignored crop contributes no gt leaf count
        assert out.gt_leaf_counts == {1: 1}

    def test_explicit_ignore_ids(self):
        gt_base = simple_scene()
        gt = make_frame(gt_base.semantics, gt_base.plant_instances,
                        gt_base.leaf_instances,
                        ignore_plant_ids=frozenset({2}))
        pred = make_frame(gt_base.semantics, gt_base.plant_instances,
                          gt_base.leaf_instances)
        out = evaluate_frame(pred, gt)
        # the weed is explicitly ignored: its exact prediction is dropped
        assert (out.pq_weed.tp, out.pq_weed.fp, out.pq_weed.fn) == (0, 0, 0)
        assert out.pq_weed.pq is None

    def test_shape_mismatch_raises(self):
        gt = simple_scene()
        small = make_frame(np.zeros((6, 6), dtype=np.uint16),
                           np.zeros((6, 6), dtype=np.uint16),
                           np.zeros((6, 6), dtype=np.uint16))
        with pytest.raises(ValueError, match="dimensions"):
            evaluate_frame(small, gt)


class TestAggregateReports:
    def test_single_frame_matches_frame_report(self):
        gt = simple_scene()
        frame = evaluate_frame(gt, gt)
        agg = aggregate_reports([frame])
        assert agg.n_frames == 1
        for name in ("iou_soil", "iou_crop", "iou_weed", "pq", "pq_dagger",
                     "rmse_tp", "rmse_pred", "rmse_gt",
                     "precision_crop", "recall_crop"):
            assert getattr(agg, name) == getattr(frame, name), name

    def test_pooled_pq_example(self):
        # tp=1/iou=0.8 pooled with tp=0/fp=1 → 0.8 / (1 + 0.5)
        gt1 = boxes((10, 10), {1: (0, 10, 0, 5)})
        pred1 = boxes((10, 10), {1: (0, 8, 0, 5)})  # IoU 0.8
        gt2 = boxes((10, 10), {})
        pred2 = boxes((10, 10), {1: (0, 3, 0, 3)})

        def leafless_frame(plants, cls):
            sem = np.where(plants > 0, cls, 0).astype(np.uint16)
            return make_frame(sem, plants, np.zeros_like(plants))

        r1 = evaluate_frame(leafless_frame(pred1, CROP),
                            leafless_frame(gt1, CROP))
        r2 = evaluate_frame(leafless_frame(pred2, CROP),
                            leafless_frame(gt2, CROP))
        agg = aggregate_reports([r1, r2])
        assert agg.pq_crop.pq == pytest.approx(0.8 / 1.5, abs=1e-12)

    def test_order_invariance(self):
        rng = np.random.default_rng(8)
        reports = []
        for _ in range(4):
            plants = random_instance_grid(rng, (14, 14), "boxes")
            sem = np.where(plants > 0, CROP, SOIL).astype(np.uint16)
            gt = make_frame(sem, plants, plants)
            noisy = random_instance_grid(rng, (14, 14), "boxes")
            nsem = np.where(noisy > 0, CROP, SOIL).astype(np.uint16)
            pred = make_frame(nsem, noisy, noisy)
            reports.append(evaluate_frame(pred, gt))
        a = dataclasses.asdict(aggregate_reports(reports))
        b = dataclasses.asdict(aggregate_reports(reports[::-1]))
        a.pop("frames"), b.pop("frames")  # per-frame list keeps input order
        assert a == b

    def test_zero_frames_rejected(self):
        with pytest.raises(ValueError):
            aggregate_reports([])
