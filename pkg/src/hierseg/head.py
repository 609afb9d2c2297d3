"""Dual-decoder mask-formation head with hand-derived exact gradients.

One shared set of learnable queries feeds two decoders (plant level and
leaf level).  Each decoder refines the queries through D layers of
single-head softmax cross-attention over per-pixel embeddings followed
by a tanh feed-forward block, both with residual connections.  After
every layer a class head produces softmax probabilities over K real
classes plus a trailing no-object slot, and a mask head produces mask
logits as the dot product of per-query mask embeddings with the shared
pixel embeddings plus a scalar bias.  Supervision is applied at every
layer (deep supervision): queries are matched to ground-truth instances
by minimum-cost assignment, matched pairs receive point-sampled focal +
dice plus a dense boundary term, unmatched queries are pushed to
no-object.

All gradients are derived by hand and exact; ``tanh`` is the only
nonlinearity in the refinement path specifically because it is smooth,
which keeps central finite differences honest during verification.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from . import losses as L
from .assign import match_queries_to_gt
from .distfield import level_set
from .grids import (CROP, PARTIAL_CROP, PARTIAL_WEED, WEED, PanopticFrame,
                    extract_instances)
from .metrics import _instance_classes
from .synthgen import DIHEDRAL_OPS, _inverse_grid, _transform_grid, augment


@dataclass(frozen=True)
class HeadConfig:
    """Architecture and optimization hyper-parameters."""

    n_queries: int = 12
    embed_dim: int = 16
    query_dim: int = 16
    n_layers: int = 3
    n_classes: int = 2  # plant-level real classes (crop, weed)
    feature_channels: int = 6
    learning_rate: float = 0.1
    epochs: int = 40
    seed: int = 0

    def __post_init__(self):
        for name in ("n_queries", "embed_dim", "query_dim", "n_layers",
                     "n_classes", "feature_channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class LayerParams:
    """One refinement layer: attention projections + feed-forward."""

    wq: np.ndarray  # (C_Q, C_Q) query projection
    wk: np.ndarray  # (C_e, C_Q) key projection
    wv: np.ndarray  # (C_e, C_Q) value projection
    w1: np.ndarray  # (C_Q, 2*C_Q) feed-forward in
    b1: np.ndarray  # (2*C_Q,)
    w2: np.ndarray  # (2*C_Q, C_Q) feed-forward out
    b2: np.ndarray  # (C_Q,)


@dataclass
class DecoderParams:
    layers: List[LayerParams]
    class_w: np.ndarray  # (C_Q, K+1)
    class_b: np.ndarray  # (K+1,)
    mask_w: np.ndarray  # (C_Q, C_e) mask-embedding head
    mask_b: np.ndarray  # () scalar logit bias


@dataclass
class ModelParams:
    config: HeadConfig
    queries: np.ndarray  # (N, C_Q), shared by both decoders
    pixel_w: np.ndarray  # (C_F, C_e)
    pixel_b: np.ndarray  # (C_e,)
    plant: DecoderParams
    leaf: DecoderParams


@dataclass(frozen=True)
class PredictionSet:
    """Per-layer outputs of both decoders (index -1 = final layer)."""

    plant_class_probs: tuple  # each (N, K+1)
    plant_mask_logits: tuple  # each (N, H, W)
    leaf_class_probs: tuple  # each (N, 2)
    leaf_mask_logits: tuple  # each (N, H, W)


@dataclass(frozen=True)
class LossBreakdown:
    """Per-term loss bookkeeping for one backward pass."""

    total: float
    plant_cls: float
    plant_mask: float
    leaf_cls: float
    leaf_mask: float
    focal: float
    dice: float
    boundary: float
    boundary_alpha: float
    per_layer_totals: tuple


def param_items(params: ModelParams) -> List[Tuple[str, np.ndarray]]:
    """All parameter tensors as (name, array) in a fixed traversal order."""
    items = [
        ("queries", params.queries),
        ("pixel_w", params.pixel_w),
        ("pixel_b", params.pixel_b),
    ]
    for dec_name, dec in (("plant", params.plant), ("leaf", params.leaf)):
        for idx, layer in enumerate(dec.layers):
            for f in ("wq", "wk", "wv", "w1", "b1", "w2", "b2"):
                items.append((f"{dec_name}.layer{idx}.{f}", getattr(layer, f)))
        items.append((f"{dec_name}.class_w", dec.class_w))
        items.append((f"{dec_name}.class_b", dec.class_b))
        items.append((f"{dec_name}.mask_w", dec.mask_w))
        items.append((f"{dec_name}.mask_b", dec.mask_b))
    return items


def zeros_like_params(params: ModelParams) -> ModelParams:
    def _dec(dec: DecoderParams) -> DecoderParams:
        return DecoderParams(
            layers=[LayerParams(**{f: np.zeros_like(getattr(lp, f))
                                   for f in ("wq", "wk", "wv", "w1", "b1", "w2", "b2")})
                    for lp in dec.layers],
            class_w=np.zeros_like(dec.class_w),
            class_b=np.zeros_like(dec.class_b),
            mask_w=np.zeros_like(dec.mask_w),
            mask_b=np.zeros_like(dec.mask_b),
        )

    return ModelParams(
        config=params.config,
        queries=np.zeros_like(params.queries),
        pixel_w=np.zeros_like(params.pixel_w),
        pixel_b=np.zeros_like(params.pixel_b),
        plant=_dec(params.plant),
        leaf=_dec(params.leaf),
    )


def init_model(cfg: HeadConfig, rng: np.random.Generator) -> ModelParams:
    """Scaled-uniform (±1/√fan_in) weights, zero biases; rng-deterministic."""
    cq, ce, cf = cfg.query_dim, cfg.embed_dim, cfg.feature_channels
    ff = 2 * cq

    def u(fan_in, *shape):
        s = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-s, s, size=shape)

    def make_decoder(k_classes: int) -> DecoderParams:
        layers = [
            LayerParams(
                wq=u(cq, cq, cq), wk=u(ce, ce, cq), wv=u(ce, ce, cq),
                w1=u(cq, cq, ff), b1=np.zeros(ff),
                w2=u(ff, ff, cq), b2=np.zeros(cq),
            )
            for _ in range(cfg.n_layers)
        ]
        return DecoderParams(
            layers=layers,
            class_w=u(cq, cq, k_classes + 1),
            class_b=np.zeros(k_classes + 1),
            mask_w=u(cq, cq, ce),
            mask_b=np.zeros(()),
        )

    return ModelParams(
        config=cfg,
        queries=u(cq, cfg.n_queries, cq),
        pixel_w=u(cf, cf, ce),
        pixel_b=np.zeros(ce),
        plant=make_decoder(cfg.n_classes),
        leaf=make_decoder(1),
    )


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class _LayerCache:
    x_in: np.ndarray
    qa: np.ndarray
    ka: np.ndarray
    va: np.ndarray
    attn: np.ndarray  # softmax rows (N, HW)
    xa: np.ndarray
    h1: np.ndarray
    x_out: np.ndarray
    cls_logits: np.ndarray
    cls_probs: np.ndarray
    mask_emb: np.ndarray  # (N, C_e)
    mask_logits: np.ndarray  # (N, HW)


def _decoder_forward(dec: DecoderParams, queries: np.ndarray,
                     pix: np.ndarray) -> List[_LayerCache]:
    """Run one decoder over shared pixel embeddings, caching everything."""
    scale = 1.0 / np.sqrt(queries.shape[1])
    x = queries
    caches = []
    for lp in dec.layers:
        qa = x @ lp.wq
        ka = pix @ lp.wk
        va = pix @ lp.wv
        attn = _softmax_rows(qa @ ka.T * scale)
        xa = x + attn @ va
        h1 = np.tanh(xa @ lp.w1 + lp.b1)
        x_out = xa + h1 @ lp.w2 + lp.b2
        cls_logits = x_out @ dec.class_w + dec.class_b
        mask_emb = x_out @ dec.mask_w
        mask_logits = mask_emb @ pix.T + dec.mask_b
        caches.append(_LayerCache(
            x_in=x, qa=qa, ka=ka, va=va, attn=attn, xa=xa, h1=h1, x_out=x_out,
            cls_logits=cls_logits, cls_probs=_softmax_rows(cls_logits),
            mask_emb=mask_emb, mask_logits=mask_logits,
        ))
        x = x_out
    return caches


def _features_2d(params: ModelParams, features: np.ndarray):
    cfg = params.config
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 3 or feats.shape[0] != cfg.feature_channels:
        raise ValueError(
            f"features must be ({cfg.feature_channels}, H, W), got {feats.shape}")
    _, h, w = feats.shape
    flat = feats.reshape(cfg.feature_channels, h * w).T  # (HW, C_F)
    return flat, h, w


def _forward_full(params: ModelParams, features: np.ndarray):
    flat, h, w = _features_2d(params, features)
    pix = flat @ params.pixel_w + params.pixel_b  # (HW, C_e)
    plant = _decoder_forward(params.plant, params.queries, pix)
    leaf = _decoder_forward(params.leaf, params.queries, pix)
    return flat, pix, plant, leaf, h, w


def forward(params: ModelParams, features: np.ndarray) -> PredictionSet:
    """Per-layer class probabilities and mask logit grids, both decoders."""
    _, _, plant, leaf, h, w = _forward_full(params, features)
    n = params.queries.shape[0]
    return PredictionSet(
        plant_class_probs=tuple(c.cls_probs for c in plant),
        plant_mask_logits=tuple(c.mask_logits.reshape(n, h, w) for c in plant),
        leaf_class_probs=tuple(c.cls_probs for c in leaf),
        leaf_mask_logits=tuple(c.mask_logits.reshape(n, h, w) for c in leaf),
    )


def _decoder_backward(dec: DecoderParams, caches: List[_LayerCache],
                      pix: np.ndarray, d_cls: List[np.ndarray],
                      d_mask: List[np.ndarray], grads: DecoderParams):
    """Backprop one decoder; returns (d_queries, d_pix)."""
    scale = 1.0 / np.sqrt(caches[0].x_in.shape[1])
    d_pix = np.zeros_like(pix)
    dx = np.zeros_like(caches[0].x_in)
    for idx in range(len(caches) - 1, -1, -1):
        c = caches[idx]
        lp = dec.layers[idx]
        glp = grads.layers[idx]

        # heads at this layer
        dxn = dx  # gradient flowing into x_out from deeper layers
        dxn = dxn + d_cls[idx] @ dec.class_w.T
        grads.class_w += c.x_out.T @ d_cls[idx]
        grads.class_b += d_cls[idx].sum(axis=0)

        d_emb = d_mask[idx] @ pix  # (N, C_e)
        grads.mask_w += c.x_out.T @ d_emb
        grads.mask_b += d_mask[idx].sum()
        d_pix += d_mask[idx].T @ c.mask_emb
        dxn = dxn + d_emb @ dec.mask_w.T

        # feed-forward residual: x_out = xa + tanh(xa@w1 + b1)@w2 + b2
        dxa = dxn.copy()
        dh1 = dxn @ lp.w2.T
        glp.w2 += c.h1.T @ dxn
        glp.b2 += dxn.sum(axis=0)
        dz1 = dh1 * (1.0 - c.h1 * c.h1)
        glp.w1 += c.xa.T @ dz1
        glp.b1 += dz1.sum(axis=0)
        dxa += dz1 @ lp.w1.T

        # attention residual: xa = x_in + softmax(qa ka^T · scale) va
        dx = dxa.copy()
        d_attn = dxa @ c.va.T
        d_va = c.attn.T @ dxa
        # softmax backward, rowwise
        ds = c.attn * (d_attn - (d_attn * c.attn).sum(axis=1, keepdims=True))
        ds *= scale
        d_qa = ds @ c.ka
        d_ka = ds.T @ c.qa
        glp.wq += c.x_in.T @ d_qa
        dx += d_qa @ lp.wq.T
        glp.wk += pix.T @ d_ka
        d_pix += d_ka @ lp.wk.T
        glp.wv += pix.T @ d_va
        d_pix += d_va @ lp.wv.T
    return dx, d_pix


_PLANT_CLASS_INDEX = {CROP: 0, PARTIAL_CROP: 0, WEED: 1, PARTIAL_WEED: 1}


def _plant_targets(frame: PanopticFrame):
    classes = _instance_classes(frame.plant_instances, frame.semantics)
    out = []
    for inst_id, mask in extract_instances(frame.plant_instances):
        sem = classes[inst_id]
        if sem not in _PLANT_CLASS_INDEX:
            raise ValueError(
                f"plant instance {inst_id} has non-plant majority class {sem}")
        out.append((_PLANT_CLASS_INDEX[sem], mask))
    return out


def _leaf_targets(frame: PanopticFrame):
    return [(0, mask) for _, mask in extract_instances(frame.leaf_instances)]


def _decoder_losses(dec_caches: List[_LayerCache], targets, cfg: L.LossConfig,
                    alpha_epoch: float, phis, streams, h: int, w: int):
    """Match, score, and differentiate one decoder's per-layer outputs.

    Returns per-layer gradient lists for class logits and mask logits
    (already λ-weighted) plus the bookkeeping sums.
    """
    n_queries = dec_caches[0].cls_logits.shape[0]
    d_cls = []
    d_mask = []
    cls_sum = 0.0
    mask_sum = 0.0
    focal_sum = 0.0
    dice_sum = 0.0
    boundary_sum = 0.0
    per_layer = []
    stream_pos = 0
    for c in dec_caches:
        match_rng = streams[stream_pos]
        stream_pos += 1
        pair_rngs = streams[stream_pos:stream_pos + len(targets)]
        stream_pos += len(targets)

        logits_3d = c.mask_logits.reshape(n_queries, h, w)
        assignment = match_queries_to_gt(c.cls_probs, logits_3d, targets,
                                         cfg, match_rng)
        matched = dict(assignment.pairs)  # query -> gt index

        # class loss: weighted CE averaged over all queries
        dc = np.zeros_like(c.cls_logits)
        layer_cls = 0.0
        for i in range(n_queries):
            target = targets[matched[i]][0] if i in matched else None
            lv = L.class_loss(c.cls_logits[i], target, cfg.no_object_weight)
            layer_cls += lv.value
            dc[i] = lv.grad
        layer_cls /= n_queries
        dc /= n_queries

        # mask loss: mean of focal+dice+boundary over matched pairs
        dm = np.zeros((n_queries, h * w))
        layer_mask = 0.0
        layer_focal = 0.0
        layer_dice = 0.0
        layer_boundary = 0.0
        n_pairs = len(assignment.pairs)
        for qi, gj in assignment.pairs:
            gt_mask = targets[gj][1]
            grid = logits_3d[qi]
            ps = L.sample_points(grid, gt_mask, cfg, pair_rngs[gj])
            focal = L.focal_loss(ps.logits, ps.targets, cfg.gamma, cfg.alpha_focal)
            dice = L.dice_loss(ps.logits, ps.targets)
            g_grid = np.zeros((h, w))
            rows = ps.coords[:, 0].astype(np.intp)
            cols = ps.coords[:, 1].astype(np.intp)
            np.add.at(g_grid, (rows, cols), focal.grad + dice.grad)
            pair_value = focal.value + dice.value
            layer_focal += focal.value
            layer_dice += dice.value
            if cfg.use_boundary and phis[gj] is not None:
                s = expit(grid)
                bl = L.boundary_loss(s, phis[gj], alpha_epoch)
                pair_value += bl.value
                layer_boundary += bl.value
                g_grid += bl.grad * s * (1.0 - s)
            layer_mask += pair_value
            dm[qi] += g_grid.ravel()
        if n_pairs:
            layer_mask /= n_pairs
            dm /= n_pairs

        cls_sum += layer_cls
        mask_sum += layer_mask
        focal_sum += layer_focal
        dice_sum += layer_dice
        boundary_sum += layer_boundary
        per_layer.append((layer_cls, layer_mask))
        d_cls.append(cfg.lambda_cls * dc)
        d_mask.append(cfg.lambda_mask * dm)
    return d_cls, d_mask, cls_sum, mask_sum, focal_sum, dice_sum, boundary_sum, per_layer


def backward(params: ModelParams, features: np.ndarray, gt: PanopticFrame,
             cfg: L.LossConfig, epoch: int, rng: np.random.Generator):
    """Exact gradients of the full deep-supervised objective.

    Returns (gradients shaped like ``params``, LossBreakdown).  The rng
    is consumed through spawned child streams in a fixed order —
    matching first, then one stream per ground-truth instance — so the
    draw pattern cannot depend on parameter values (finite differences
    would otherwise see sampling noise instead of the gradient).
    """
    flat, pix, plant_caches, leaf_caches, h, w = _forward_full(params, features)
    if gt.semantics.shape != (h, w):
        raise ValueError(
            f"frame shape {gt.semantics.shape} does not match features {(h, w)}")

    plant_targets = _plant_targets(gt)
    leaf_targets = _leaf_targets(gt)
    depth = params.config.n_layers
    n_streams = depth * (1 + len(plant_targets)) + depth * (1 + len(leaf_targets))
    streams = rng.spawn(n_streams)
    alpha_epoch = L.boundary_alpha(epoch, cfg)

    def _phi(mask):
        if mask.all():
            return None  # degenerate region: boundary term undefined, skipped
        return level_set(mask)

    plant_phis = [_phi(m) for _, m in plant_targets] if cfg.use_boundary else [None] * len(plant_targets)
    leaf_phis = [_phi(m) for _, m in leaf_targets] if cfg.use_boundary else [None] * len(leaf_targets)

    split = depth * (1 + len(plant_targets))
    (p_dcls, p_dmask, p_cls, p_mask, p_focal, p_dice, p_boundary,
     p_layers) = _decoder_losses(plant_caches, plant_targets, cfg,
                                 alpha_epoch, plant_phis, streams[:split], h, w)
    (l_dcls, l_dmask, l_cls, l_mask, l_focal, l_dice, l_boundary,
     l_layers) = _decoder_losses(leaf_caches, leaf_targets, cfg,
                                 alpha_epoch, leaf_phis, streams[split:], h, w)

    grads = zeros_like_params(params)
    dq_plant, dpix_plant = _decoder_backward(params.plant, plant_caches, pix,
                                             p_dcls, p_dmask, grads.plant)
    dq_leaf, dpix_leaf = _decoder_backward(params.leaf, leaf_caches, pix,
                                           l_dcls, l_dmask, grads.leaf)
    grads.queries += dq_plant + dq_leaf
    d_pix = dpix_plant + dpix_leaf
    grads.pixel_w += flat.T @ d_pix
    grads.pixel_b += d_pix.sum(axis=0)

    total = (cfg.lambda_cls * (p_cls + l_cls)
             + cfg.lambda_mask * (p_mask + l_mask))
    per_layer_totals = tuple(
        cfg.lambda_cls * (pc + lc) + cfg.lambda_mask * (pm + lm)
        for (pc, pm), (lc, lm) in zip(p_layers, l_layers)
    )
    breakdown = LossBreakdown(
        total=total,
        plant_cls=p_cls, plant_mask=p_mask,
        leaf_cls=l_cls, leaf_mask=l_mask,
        focal=p_focal + l_focal,
        dice=p_dice + l_dice,
        boundary=p_boundary + l_boundary,
        boundary_alpha=alpha_epoch,
        per_layer_totals=per_layer_totals,
    )
    return grads, breakdown


def _sgd_step(params: ModelParams, grads: ModelParams, lr: float) -> None:
    for (_, p), (_, g) in zip(param_items(params), param_items(grads)):
        p -= lr * g


def train(dataset, cfg: HeadConfig, loss_cfg: L.LossConfig):
    """Plain gradient descent over the dataset with dihedral augmentation.

    Returns (params, history); history holds one record per epoch with
    the mean per-term losses and that epoch's boundary weight.  Fully
    deterministic given (seed, dataset, config).
    """
    data = list(dataset)
    if not data:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(cfg.seed)
    params = init_model(cfg, rng)
    history: List[Dict] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(data))
        sums = {k: 0.0 for k in ("total", "plant_cls", "plant_mask",
                                 "leaf_cls", "leaf_mask", "focal", "dice",
                                 "boundary")}
        for di in order:
            feats, frame = data[int(di)]
            h, w = frame.semantics.shape
            flip = bool(rng.integers(2))
            turns = int(rng.integers(4)) if h == w else int(rng.integers(2)) * 2
            feats_a, frame_a = augment(feats, frame, (flip, turns))
            grads, bd = backward(params, feats_a, frame_a, loss_cfg, epoch, rng)
            _sgd_step(params, grads, cfg.learning_rate)
            for key in sums:
                sums[key] += getattr(bd, key)
        record = {"epoch": epoch,
                  "boundary_alpha": L.boundary_alpha(epoch, loss_cfg)}
        record.update({k: v / len(data) for k, v in sums.items()})
        history.append(record)
    return params, history


def _merge_queries(cls_probs: np.ndarray, mask_logits: np.ndarray,
                   semantic_ids: Sequence[int], mask_threshold: float,
                   class_threshold: float):
    """Pixel-wise argmax merge of surviving queries into label grids."""
    n, h, w = mask_logits.shape
    no_obj = cls_probs.shape[1] - 1
    arg = np.argmax(cls_probs, axis=1)
    keep = np.nonzero(arg != no_obj)[0]
    sem = np.zeros((h, w), dtype=np.uint16)
    inst = np.zeros((h, w), dtype=np.uint16)
    if keep.size == 0:
        return sem, inst
    scores = cls_probs[keep, arg[keep]]
    probs = expit(mask_logits[keep])
    smap = scores[:, None, None] * probs
    winner = np.argmax(smap, axis=0)
    best = np.take_along_axis(smap, winner[None], axis=0)[0]
    assigned = best >= mask_threshold * class_threshold
    inst[assigned] = (winner[assigned] + 1).astype(np.uint16)
    class_of = np.asarray([semantic_ids[arg[q]] for q in keep], dtype=np.uint16)
    sem[assigned] = class_of[winner[assigned]]
    return sem, inst


def predict_panoptic(params: ModelParams, features: np.ndarray,
                     mask_threshold: float = 0.5,
                     class_threshold: float = 0.5) -> PanopticFrame:
    """Merge final-layer outputs into a panoptic frame.

    Queries whose argmax class is no-object are dropped; each pixel goes
    to the surviving query with the highest class-score × mask-probability
    product, or to background when that product is below the threshold
    product.
    """
    preds = forward(params, features)
    sem, plant_inst = _merge_queries(preds.plant_class_probs[-1],
                                     preds.plant_mask_logits[-1],
                                     (CROP, WEED), mask_threshold,
                                     class_threshold)
    _, leaf_inst = _merge_queries(preds.leaf_class_probs[-1],
                                  preds.leaf_mask_logits[-1],
                                  (CROP,), mask_threshold, class_threshold)
    return PanopticFrame(semantics=sem, plant_instances=plant_inst,
                         leaf_instances=leaf_inst)


def tta_predict(params: ModelParams, features: np.ndarray,
                mask_threshold: float = 0.5,
                class_threshold: float = 0.5) -> PanopticFrame:
    """Leaf-only test-time augmentation over the dihedral group.

    Plant outputs come from the identity pass alone.  Leaf mask logits
    are recomputed under each dihedral transform, inverse-transformed,
    and averaged before the merge.  Non-square inputs restrict the group
    to its four shape-preserving elements.
    """
    feats = np.asarray(features, dtype=np.float64)
    preds = forward(params, feats)
    sem, plant_inst = _merge_queries(preds.plant_class_probs[-1],
                                     preds.plant_mask_logits[-1],
                                     (CROP, WEED), mask_threshold,
                                     class_threshold)
    _, h, w = feats.shape
    ops = DIHEDRAL_OPS if h == w else tuple(
        op for op in DIHEDRAL_OPS if op[1] % 2 == 0)
    n = params.queries.shape[0]
    acc = np.zeros((n, h, w))
    for op in ops:
        feats_t = np.stack([_transform_grid(feats[c], op)
                            for c in range(feats.shape[0])])
        leaf_logits = forward(params, feats_t).leaf_mask_logits[-1]
        acc += np.stack([_inverse_grid(leaf_logits[q], op) for q in range(n)])
    acc /= len(ops)
    _, leaf_inst = _merge_queries(preds.leaf_class_probs[-1], acc,
                                  (CROP,), mask_threshold, class_threshold)
    return PanopticFrame(semantics=sem, plant_instances=plant_inst,
                         leaf_instances=leaf_inst)
