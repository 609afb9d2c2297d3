"""Acceptance gate: nine go/no-go criteria, one printed line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-
criterion PASS lines with timings.  Every criterion asserts both its
numeric tolerance and, where stated, its runtime budget.
"""

import time

import numpy as np
import pytest

from hierseg import ablation
from hierseg.assign import Matching
from hierseg.cli import main
from hierseg.distfield import EDT_BACKEND, edt, level_set
from hierseg.losses import boundary_loss, expit
from hierseg.metrics import (
    aggregate_pq, evaluate_frame, leaf_count_rmse, panoptic_quality,
    pq_dagger,
)
from hierseg.synthgen import GenConfig, generate_scene

from oracles import brute_force_pq, brute_force_sq_edt, random_instance_grid
from test_metrics import REFERENCE_ROWS

# Criterion 7 pin: dataset geometry, generator seed, and model seed under
# which the loss-ablation ordering is checked.
ABLATION_GEN = GenConfig(width=64, height=64, crops_range=(1, 2),
                         leaves_per_crop_range=(2, 3), weeds_range=(2, 3),
                         weed_radius_range=(4, 6), crop_radius_range=(14, 20),
                         noise_std=0.03, seed=21)
ABLATION_SCENES = 20
ABLATION_MODEL_SEED = 0


def _ok(n: int, label: str, t0: float = None, extra: str = "") -> None:
    stamp = f" [{time.perf_counter() - t0:.1f} s]" if t0 is not None else ""
    print(f"criterion {n} ({label}): PASS{extra}{stamp}")


def test_criterion_1_aggregate_table_arithmetic():
    t0 = time.perf_counter()
    for row in REFERENCE_ROWS:
        iou_soil, _, iou_weed, pq_crop, pq_leaf, _, pq, pq_d = row
        assert aggregate_pq(pq_crop, pq_leaf) == pytest.approx(pq, abs=0.005)
        assert pq_dagger(pq_crop, pq_leaf, iou_weed, iou_soil) == \
            pytest.approx(pq_d, abs=0.005)
    elapsed = time.perf_counter() - t0
    assert elapsed < 1.0
    _ok(1, "aggregate-table arithmetic", t0,
        extra=f" — {len(REFERENCE_ROWS)} rows at ±0.005")


def test_criterion_2_edt_matches_brute_force():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    checked = 0
    for case in range(50):
        h = int(rng.integers(1, 65))
        w = int(rng.integers(1, 65))
        style = case % 3
        if style == 0:
            mask = rng.random((h, w)) < rng.uniform(0.05, 0.95)
        elif style == 1:
            mask = random_instance_grid(rng, (h, w), "boxes") > 0
        else:
            mask = np.zeros((h, w), dtype=bool)
            mask[int(rng.integers(h)), int(rng.integers(w))] = True
        if not mask.any():
            mask[0, 0] = True
        got = edt(mask)
        want = np.sqrt(brute_force_sq_edt(mask))
        assert np.max(np.abs(got - want)) <= 1e-9
        checked += 1
    elapsed = time.perf_counter() - t0
    assert checked == 50 and elapsed < 10.0
    _ok(2, "EDT vs brute-force oracle", t0,
        extra=f" — 50 masks ≤64×64, backend={EDT_BACKEND}")


def test_criterion_3_gradient_suite(capsys):
    t0 = time.perf_counter()
    exit_code = main(["gradcheck", "--seed", "0"])
    out = capsys.readouterr().out
    assert exit_code == 0
    assert out.count("PASS") == 6  # five components + summary
    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0
    with capsys.disabled():
        _ok(3, "finite-difference gradient suite", t0,
            extra=" — focal/dice/boundary/class/head < 1e-4")


def test_criterion_4_boundary_loss_analytic_property():
    t0 = time.perf_counter()
    # exactness: gradient identical to alpha * phi / n
    rng = np.random.default_rng(9)
    for _ in range(10):
        phi = rng.normal(size=(8, 9)) * 4.0
        s = rng.random((8, 9))
        alpha = float(rng.uniform(0.01, 1.0))
        out = boundary_loss(s, phi, alpha)
        assert np.max(np.abs(out.grad - alpha * phi / phi.size)) <= 1e-12
    # descent: 3-pixel-dilated disk shrinks onto the target
    rr, cc = np.meshgrid(np.arange(32), np.arange(32), indexing="ij")
    gt = (rr - 15.5) ** 2 + (cc - 15.5) ** 2 <= 9.0 ** 2
    start = (rr - 15.5) ** 2 + (cc - 15.5) ** 2 <= 12.0 ** 2
    phi = level_set(gt)
    z = np.where(start, 2.0, -2.0)
    lr = 4.0 * gt.size
    for _ in range(500):
        s = expit(z)
        z = z - lr * boundary_loss(s, phi, 1.0).grad * s * (1.0 - s)
    final = expit(z) > 0.5
    iou = np.logical_and(final, gt).sum() / np.logical_or(final, gt).sum()
    assert iou >= 0.95
    _ok(4, "boundary-loss gradient + descent", t0,
        extra=f" — exact ≤1e-12, disk IoU {iou:.3f}")


def test_criterion_5_pq_matches_brute_force():
    t0 = time.perf_counter()
    rng = np.random.default_rng(77)
    ignore_cases = 0
    for case in range(100):
        shape = (int(rng.integers(4, 33)), int(rng.integers(4, 33)))
        style = "boxes" if case % 2 == 0 else "noise"
        pred = random_instance_grid(rng, shape, style)
        gt = random_instance_grid(rng, shape, style)
        present = [int(i) for i in np.unique(gt) if i]
        ignore = set()
        if case % 3 == 0 and present:
            ignore = {int(rng.choice(present))}
            ignore_cases += 1
        got = panoptic_quality(pred, gt, ignore_gt_ids=ignore)
        want = brute_force_pq(pred, gt, ignore_gt_ids=ignore)
        assert (got.tp, got.fp, got.fn) == \
            (want["tp"], want["fp"], want["fn"]), f"case {case}"
        assert got.iou_sum == pytest.approx(want["iou_sum"], abs=1e-12)
        if want["pq"] is None:
            assert got.pq is None
        else:
            assert got.pq == pytest.approx(want["pq"], abs=1e-12)
    elapsed = time.perf_counter() - t0
    assert ignore_cases >= 20 and elapsed < 30.0
    _ok(5, "PQ vs brute-force oracle", t0,
        extra=f" — 100 frames, {ignore_cases} with ignore regions")


def test_criterion_6_rmse_hand_values():
    t0 = time.perf_counter()
    matching = Matching(pairs=((1, 1, 0.9), (2, 2, 0.8)),
                        unmatched_pred=frozenset({3}),
                        unmatched_gt=frozenset({4}))
    out = leaf_count_rmse(matching, {1: 3, 2: 5, 3: 2}, {1: 4, 2: 5, 4: 3})
    assert out.rmse_tp == pytest.approx(np.sqrt(1 / 2), abs=1e-12)
    assert out.rmse_pred == pytest.approx(np.sqrt(5 / 3), abs=1e-12)
    assert out.rmse_gt == pytest.approx(np.sqrt(10 / 3), abs=1e-12)
    perfect = Matching(pairs=((1, 1, 1.0),), unmatched_pred=frozenset(),
                       unmatched_gt=frozenset())
    assert leaf_count_rmse(perfect, {1: 5}, {1: 5}) == (0.0, 0.0, 0.0, 1.0, 1.0)
    _ok(6, "leaf-count RMSE hand values", t0)


def test_criterion_7_ablation_ordering():
    t0 = time.perf_counter()
    data = [generate_scene(ABLATION_GEN, i) for i in range(ABLATION_SCENES)]
    head_cfg = ablation.default_head_config(seed=ABLATION_MODEL_SEED)
    rows = ablation.run_ablation(data, head_cfg, ablation.default_loss_config())
    csv = ablation.render_csv(rows).decode("ascii")

    base = rows[0]
    combo = next(r for r in rows if r["Model"] == "L_f+L_b")
    # both numbers are emitted in the CSV whatever the outcome
    for row in (base, combo):
        assert row["IoU_weed"] is not None and row["PQ_leaf"] is not None
        line = next(ln for ln in csv.splitlines()
                    if ln.startswith(row["Model"] + ","))
        cells = dict(zip(ablation.CSV_COLUMNS, line.split(",")))
        assert cells["IoU_weed"] != "" and cells["PQ_leaf"] != ""

    report = (f"IoU_weed {100 * base['IoU_weed']:.2f} → "
              f"{100 * combo['IoU_weed']:.2f}, "
              f"PQ_leaf {100 * base['PQ_leaf']:.2f} → "
              f"{100 * combo['PQ_leaf']:.2f}")
    elapsed = time.perf_counter() - t0
    assert elapsed < 900.0
    assert combo["IoU_weed"] >= base["IoU_weed"], report
    assert combo["PQ_leaf"] >= base["PQ_leaf"], report
    _ok(7, "loss-ablation ordering", t0, extra=f" — {report}")


GEN_CONFIG = """\
width = 32
height = 32
scenes = 2
seed = 9
noise_std = 0.02
crops = 1
leaves_per_crop = 2
weeds = 1
weed_radius = 2..3
crop_radius = 7..9
"""

TRAIN_CONFIG = """\
n_queries = 4
embed_dim = 5
query_dim = 6
n_layers = 2
feature_channels = 6
learning_rate = 0.05
epochs = 3
seed = 0
n_points = 64
oversample_ratio = 1.5
"""


def test_criterion_8_byte_determinism(tmp_path):
    t0 = time.perf_counter()
    cfg = tmp_path / "gen.cfg"
    cfg.write_text(GEN_CONFIG)
    data = tmp_path / "data"
    assert main(["gen", "--config", str(cfg), "--out", str(data)]) == 0

    reports = []
    for name, jobs in (("r1.json", "1"), ("r2.json", "3"), ("r3.json", "1")):
        out = tmp_path / name
        assert main(["eval", "--pred", str(data), "--gt", str(data),
                     "--out", str(out), "--jobs", jobs]) == 0
        reports.append(out.read_bytes())
    assert reports[0] == reports[1] == reports[2]

    tcfg = tmp_path / "train.cfg"
    tcfg.write_text(TRAIN_CONFIG)
    blobs = []
    for tag in ("a", "b"):
        ckpt = tmp_path / f"{tag}.ckpt"
        hist = tmp_path / f"{tag}.json"
        assert main(["train", "--data", str(data), "--config", str(tcfg),
                     "--checkpoint", str(ckpt), "--history", str(hist)]) == 0
        blobs.append(ckpt.read_bytes() + hist.read_bytes())
    assert blobs[0] == blobs[1]
    _ok(8, "byte determinism of eval/train", t0,
        extra=" — across reruns and --jobs 1/3")


def test_criterion_9_throughput():
    cfg = GenConfig(width=1024, height=1024, crops_range=(2, 4),
                    leaves_per_crop_range=(3, 6), weeds_range=(2, 5),
                    weed_radius_range=(8, 24), crop_radius_range=(96, 160),
                    noise_std=0.0, seed=41)
    eval_time = 0.0
    for i in range(100):
        _, frame = generate_scene(cfg, i)
        t0 = time.perf_counter()
        evaluate_frame(frame, frame)
        eval_time += time.perf_counter() - t0
    assert eval_time < 60.0

    _, frame = generate_scene(cfg, 0)
    mask = frame.plant_instances == 1
    assert mask.any()
    edt_best = np.inf
    for _ in range(3):
        t0 = time.perf_counter()
        edt(mask)
        edt_best = min(edt_best, time.perf_counter() - t0)
    assert edt_best < 0.2
    _ok(9, "throughput", None,
        extra=(f" — 100×1024² evals {eval_time:.1f} s, "
               f"edt 1024² {1e3 * edt_best:.0f} ms ({EDT_BACKEND})"))
