"""Command-line entry point.

Subcommands: ``gen`` (synthetic dataset), ``eval`` (panoptic report),
``train`` (fit the head, save a checkpoint), ``gradcheck`` (finite-
difference audit of every analytic gradient), ``ablate`` (loss-variant
comparison table).

Exit codes: 0 success, 1 check failure, 2 usage or format error,
3 I/O error.  Reports and CSVs are byte-identical for identical inputs,
independent of ``--jobs``.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import ablation
from . import formats
from . import gradcheck
from . import head
from . import metrics
from . import synthgen
from .checkpoint import save_checkpoint
from .losses import LossConfig

GEN_SCHEMA = {
    "width": int,
    "height": int,
    "scenes": int,
    "seed": int,
    "noise_std": float,
    "crops": tuple,
    "leaves_per_crop": tuple,
    "weeds": tuple,
    "weed_radius": tuple,
    "crop_radius": tuple,
}

_GEN_RANGE_KEYS = {
    "crops": "crops_range",
    "leaves_per_crop": "leaves_per_crop_range",
    "weeds": "weeds_range",
    "weed_radius": "weed_radius_range",
    "crop_radius": "crop_radius_range",
}

_HEAD_SCHEMA = {
    "n_queries": int,
    "embed_dim": int,
    "query_dim": int,
    "n_layers": int,
    "n_classes": int,
    "feature_channels": int,
    "learning_rate": float,
    "epochs": int,
    "seed": int,
}

_LOSS_SCHEMA = {
    "gamma": float,
    "alpha_focal": str,  # a float, or "none" to disable class balancing
    "lambda_mask": float,
    "lambda_cls": float,
    "boundary_alpha0": float,
    "boundary_alpha_step": float,
    "n_points": int,
    "oversample_ratio": float,
    "importance_fraction": float,
    "no_object_weight": float,
    "use_boundary": bool,
}

TRAIN_SCHEMA = {**_HEAD_SCHEMA, **_LOSS_SCHEMA}


def _read_text(path) -> str:
    with open(path, "r", encoding="utf-8") as f:
        return f.read()


def _load_dataset(root) -> List[Tuple[np.ndarray, "object"]]:
    """(features, frame) pairs for every stem under a dataset directory."""
    stems = formats.list_stems(root)
    data = []
    for stem in stems:
        feat_path = Path(root) / "features" / f"{stem}.npy"
        if not feat_path.exists():
            raise formats.FormatError(f"stem {stem!r} missing from features/")
        data.append((formats.read_features(feat_path),
                     formats.read_frame(root, stem)))
    return data


def _train_configs(text: str) -> Tuple[head.HeadConfig, LossConfig]:
    values = formats.parse_config_text(text, TRAIN_SCHEMA)
    if "alpha_focal" in values:
        raw = values["alpha_focal"]
        if raw.lower() == "none":
            values["alpha_focal"] = None
        else:
            try:
                values["alpha_focal"] = float(raw)
            except ValueError:
                raise formats.FormatError(
                    f"bad value {raw!r} for key 'alpha_focal'") from None
    head_kwargs = {k: values[k] for k in _HEAD_SCHEMA if k in values}
    loss_kwargs = {k: values[k] for k in _LOSS_SCHEMA if k in values}
    return head.HeadConfig(**head_kwargs), LossConfig(**loss_kwargs)


def cmd_gen(args) -> int:
    values = formats.parse_config_text(_read_text(args.config), GEN_SCHEMA)
    n = values.pop("scenes", 20)
    if n < 1:
        raise formats.FormatError(f"scenes must be positive, got {n}")
    kwargs = {_GEN_RANGE_KEYS.get(k, k): v for k, v in values.items()}
    cfg = synthgen.GenConfig(**kwargs)
    synthgen.generate_dataset(cfg, n, args.out)
    print(str(Path(args.out) / "manifest.json"))
    return 0


def _eval_stem(pred_root: str, gt_root: str, stem: str) -> metrics.FrameReport:
    pred = formats.read_frame(pred_root, stem)
    gt = formats.read_frame(gt_root, stem)
    return metrics.evaluate_frame(pred, gt)


def cmd_eval(args) -> int:
    gt_stems = formats.list_stems(args.gt)
    pred_stems = formats.list_stems(args.pred)
    if gt_stems != pred_stems:
        odd = sorted(set(gt_stems) ^ set(pred_stems))[0]
        raise formats.FormatError(
            f"prediction/ground-truth stem mismatch at {odd!r}")
    worker = partial(_eval_stem, str(args.pred), str(args.gt))
    jobs = args.jobs if args.jobs is not None else (os.cpu_count() or 1)
    if jobs < 1:
        raise formats.FormatError(f"--jobs must be positive, got {jobs}")
    if jobs == 1 or len(gt_stems) <= 1:
        reports = [worker(stem) for stem in gt_stems]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            # map() yields in submission order, so the reduction below is
            # identical whatever the worker count.
            reports = list(pool.map(worker, gt_stems))
    dataset_report = metrics.aggregate_reports(reports)
    blob = formats.render_report_json(dataset_report)
    with open(args.out, "wb") as f:
        f.write(blob)
    print(str(args.out))
    return 0


def cmd_train(args) -> int:
    head_cfg, loss_cfg = _train_configs(_read_text(args.config))
    data = _load_dataset(args.data)
    params, history = head.train(data, head_cfg, loss_cfg)
    save_checkpoint(args.checkpoint, params)
    print(str(args.checkpoint))
    if args.history is not None:
        with open(args.history, "wb") as f:
            f.write(formats.render_history_json(history))
        print(str(args.history))
    return 0


def cmd_gradcheck(args) -> int:
    results = gradcheck.run_suite(seed=args.seed, perturb=args.perturb)
    ok = True
    for name, err in results:
        passed = err < gradcheck.TOLERANCE
        ok = ok and passed
        print(f"{name}: max_rel_err={err:.3e} {'PASS' if passed else 'FAIL'}")
    print(f"gradcheck: {'PASS' if ok else 'FAIL'} "
          f"({len(results)} checks, tolerance {gradcheck.TOLERANCE:g})")
    return 0 if ok else 1


def cmd_ablate(args) -> int:
    data = _load_dataset(args.data)
    head_cfg = ablation.default_head_config(seed=args.seed, epochs=args.epochs)
    rows = ablation.run_ablation(data, head_cfg, ablation.default_loss_config())
    blob = ablation.render_csv(rows)
    with open(args.out, "wb") as f:
        f.write(blob)
    print(str(args.out))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hierseg",
        description="Hierarchical crop/leaf panoptic segmentation tools.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--config", required=True, help="key=value config file")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred", required=True, help="prediction dataset directory")
    p.add_argument("--gt", required=True, help="ground-truth dataset directory")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--jobs", type=int, default=None,
                   help="worker processes (default: all cores)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("train", help="train the mask-formation head")
    p.add_argument("--data", required=True, help="training dataset directory")
    p.add_argument("--config", required=True, help="key=value config file")
    p.add_argument("--checkpoint", required=True, help="checkpoint output path")
    p.add_argument("--history", default=None, help="training-history JSON path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gradcheck",
                       help="finite-difference audit of analytic gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--perturb", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="loss-ablation comparison table")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=120)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, synthgen.GenerationError) as exc:
        # FormatError and config/shape validation errors land here too.
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
