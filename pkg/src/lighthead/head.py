"""Light R-CNN subnet: one wide FC on the flattened pooled RoI features, then
sibling FCs for class logits and class-agnostic box deltas. Also the
second-stage losses with online hard example mining.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import HeadConfig
from .layers import Linear, Module
from .losses import log_softmax, smooth_l1
from .rpn import encode_deltas, iou_matrix
from .tensor import ShapeError, Tensor, make_op, relu, reshape


class RCNNHead(Module):
    def __init__(self, cfg: HeadConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.fc = Linear(cfg.in_features, cfg.fc_width, rng)
        self.cls = Linear(cfg.fc_width, cfg.num_classes + 1, rng, std=0.01)
        self.reg = Linear(cfg.fc_width, 4, rng, std=0.001)

    def __call__(self, pooled: Tensor) -> tuple[Tensor, Tensor]:
        return head_forward(pooled, self)


def head_forward(pooled: Tensor, head: RCNNHead, trace: list | None = None) -> tuple[Tensor, Tensor]:
    """(R, alpha, p, p) pooled maps -> (R, num_classes + 1) logits, (R, 4) deltas.

    With ``trace`` given, (name, dims) of every intermediate is appended.
    """
    cfg = head.cfg
    if pooled.data.ndim != 4 or pooled.shape[1:] != (cfg.alpha, cfg.p, cfg.p):
        raise ShapeError("head_forward", "pooled dims", f"(R, {cfg.alpha}, {cfg.p}, {cfg.p})", pooled.shape)
    flat = reshape(pooled, (pooled.shape[0], cfg.in_features))
    hidden = relu(head.fc(flat))
    logits, deltas = head.cls(hidden), head.reg(hidden)
    if trace is not None:
        trace += [("head.flat", flat.shape), ("head.fc", hidden.shape), ("head.cls", logits.shape),
                  ("head.reg", deltas.shape)]
    return logits, deltas


def ohem_select(per_roi_losses, keep: int = 256) -> np.ndarray:
    """Indices of the ``keep`` largest losses, ties broken by lower index."""
    if keep < 1:
        raise ValueError("keep must be >= 1")
    losses = np.asarray(per_roi_losses, dtype=np.float64).reshape(-1)
    order = np.argsort(-losses, kind="stable")
    return order[:keep]


@dataclass
class RoITargets:
    labels: np.ndarray   # (R,) class id, 0 = background
    targets: np.ndarray  # (R, 4) normalised regression targets (zero for background)


def assign_roi_targets(rois, gt_boxes, gt_classes, cfg: HeadConfig) -> RoITargets:
    """Foreground when IoU with the best-matching gt reaches ``fg_thresh``."""
    rois = np.asarray(rois, dtype=np.float64).reshape(-1, 4)
    gts = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    labels = np.zeros(len(rois), np.int64)
    targets = np.zeros((len(rois), 4))
    if len(gts) and len(rois):
        ious = iou_matrix(rois, gts)
        best = ious.argmax(axis=1)
        fg = ious[np.arange(len(rois)), best] >= cfg.fg_thresh
        # foreground RoIs have positive area since they overlap a gt
        labels[fg] = np.asarray(gt_classes)[best[fg]]
        if fg.any():
            targets[fg] = encode_deltas(rois[fg], gts[best[fg]]) / np.asarray(cfg.bbox_stds)
    return RoITargets(labels, targets)


def per_roi_losses(cls_logits: np.ndarray, box_deltas: np.ndarray, labels, reg_targets,
                   reg_weight: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-RoI (total, classification, regression) losses in float64."""
    logp = log_softmax(cls_logits)
    labels = np.asarray(labels, dtype=np.int64)
    ce = -logp[np.arange(len(labels)), labels]
    sl1, _ = smooth_l1(np.asarray(box_deltas, np.float64) - np.asarray(reg_targets, np.float64))
    reg = sl1.sum(axis=1) * (labels > 0)
    return ce + reg_weight * reg, ce, reg


def detection_loss(cls_logits: Tensor, box_deltas: Tensor, labels, reg_targets,
                   cfg: HeadConfig, image_ids=None) -> tuple[Tensor, np.ndarray]:
    """Cross-entropy + ``reg_loss_weight`` * smooth-L1 (positives only),
    averaged over the OHEM-selected RoIs. Returns (scalar loss, per-RoI losses).

    With ``image_ids`` the hard-example selection runs per image and the
    per-image losses are averaged.
    """
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    r, k = cls_logits.shape
    if box_deltas.shape != (r, 4):
        raise ShapeError("detection_loss", "box deltas", (r, 4), box_deltas.shape)
    if labels.shape != (r,):
        raise ShapeError("detection_loss", "labels", (r,), labels.shape)
    if k != cfg.num_classes + 1:
        raise ShapeError("detection_loss", "logits", cfg.num_classes + 1, k)
    if r and (labels.min() < 0 or labels.max() > cfg.num_classes):
        raise ValueError(f"label out of range [0, {cfg.num_classes}]")
    reg_targets = np.asarray(reg_targets, dtype=np.float64).reshape(r, 4)
    z = cls_logits.data.astype(np.float64)
    d = box_deltas.data.astype(np.float64)
    total, _, _ = per_roi_losses(z, d, labels, reg_targets, cfg.reg_loss_weight)

    ids = np.zeros(r, np.int64) if image_ids is None else np.asarray(image_ids).reshape(-1)
    groups = np.unique(ids)
    weight = np.zeros(r)
    for gid in groups:
        members = np.nonzero(ids == gid)[0]
        sel = members[ohem_select(total[members], cfg.ohem_keep)]
        weight[sel] = 1.0 / (len(sel) * len(groups))
    value = float((total * weight).sum()) if r else 0.0

    g_z = np.exp(log_softmax(z)) if r else np.zeros_like(z)
    g_z[np.arange(r), labels] -= 1.0
    g_z *= weight[:, None]
    _, sg = smooth_l1(d - reg_targets)
    g_d = cfg.reg_loss_weight * sg * ((labels > 0) * weight)[:, None]

    def backward(g):
        s = float(g)
        return g_z * s, g_d * s

    return make_op(np.asarray(value), (cls_logits, box_deltas), backward), total
