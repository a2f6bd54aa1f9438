"""Region proposal machinery: anchors, IoU, label assignment, box coding,
greedy NMS, proposal selection, and the RPN head with its loss.

Boxes are ``(x1, y1, x2, y2)`` in continuous pixel coordinates; width is
``x2 - x1``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import AnchorSpec, RPNConfig
from .layers import Module, conv
from .losses import sigmoid_bce, smooth_l1
from .tensor import Tensor, make_op, relu

POSITIVE, NEGATIVE, IGNORE = 1, 0, -1
DELTA_CLAMP = 4.0


def gen_anchors(spec: AnchorSpec, feat_h: int, feat_w: int) -> np.ndarray:
    """All anchors as an (H*W*A, 4) array: cells row-major, then ratio, then scale."""
    shapes = []
    for r in spec.ratios:
        for s in spec.scales:
            shapes.append((np.sqrt(s / r), np.sqrt(s * r)))  # (w, h) with r = h / w
    wh = np.array(shapes)
    ys, xs = np.meshgrid(np.arange(feat_h), np.arange(feat_w), indexing="ij")
    cx = ((xs.ravel() + 0.5) * spec.stride)[:, None]
    cy = ((ys.ravel() + 0.5) * spec.stride)[:, None]
    boxes = np.stack([cx - wh[:, 0] / 2, cy - wh[:, 1] / 2, cx + wh[:, 0] / 2, cy + wh[:, 1] / 2], axis=-1)
    return boxes.reshape(-1, 4)


def box_area(b) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    return np.clip(b[..., 2] - b[..., 0], 0, None) * np.clip(b[..., 3] - b[..., 1], 0, None)


def iou_matrix(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.clip(np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0]), 0, None)
    ih = np.clip(np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1]), 0, None)
    inter = iw * ih
    union = box_area(a)[:, None] + box_area(b)[None, :] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def iou(a, b) -> float:
    return float(iou_matrix(a, b)[0, 0])


def encode_deltas(anchors, gts) -> np.ndarray:
    a = np.asarray(anchors, dtype=np.float64).reshape(-1, 4)
    g = np.asarray(gts, dtype=np.float64).reshape(-1, 4)
    aw, ah = a[:, 2] - a[:, 0], a[:, 3] - a[:, 1]
    gw, gh = g[:, 2] - g[:, 0], g[:, 3] - g[:, 1]
    if np.any(aw <= 0) or np.any(ah <= 0):
        raise ValueError("anchor width and height must be positive")
    if np.any(gw <= 0) or np.any(gh <= 0):
        raise ValueError("ground-truth width and height must be positive")
    return np.stack([
        ((g[:, 0] + g[:, 2]) - (a[:, 0] + a[:, 2])) / 2 / aw,
        ((g[:, 1] + g[:, 3]) - (a[:, 1] + a[:, 3])) / 2 / ah,
        np.log(gw / aw),
        np.log(gh / ah),
    ], axis=1)


def decode_deltas(anchors, deltas) -> np.ndarray:
    """Inverse of encode_deltas; size deltas are clamped to [-4, 4] first."""
    a = np.asarray(anchors, dtype=np.float64).reshape(-1, 4)
    d = np.asarray(deltas, dtype=np.float64).reshape(-1, 4)
    aw, ah = a[:, 2] - a[:, 0], a[:, 3] - a[:, 1]
    if np.any(aw <= 0) or np.any(ah <= 0):
        raise ValueError("anchor width and height must be positive")
    cx = (a[:, 0] + a[:, 2]) / 2 + d[:, 0] * aw
    cy = (a[:, 1] + a[:, 3]) / 2 + d[:, 1] * ah
    w = aw * np.exp(np.clip(d[:, 2], -DELTA_CLAMP, DELTA_CLAMP))
    h = ah * np.exp(np.clip(d[:, 3], -DELTA_CLAMP, DELTA_CLAMP))
    return np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=1)


def clip_boxes(boxes, image_h: float, image_w: float) -> np.ndarray:
    b = np.array(boxes, dtype=np.float64).reshape(-1, 4)
    b[:, 0::2] = np.clip(b[:, 0::2], 0, image_w)
    b[:, 1::2] = np.clip(b[:, 1::2], 0, image_h)
    return b


@dataclass
class LabelAssignment:
    labels: np.ndarray   # int8: 1 positive, 0 negative, -1 ignore
    matched: np.ndarray  # index of the best-overlapping gt, -1 when there is none
    targets: np.ndarray  # (n, 4) regression targets, zero for non-positives

    @property
    def num_positive(self) -> int:
        return int((self.labels == POSITIVE).sum())


def assign_labels(anchors, gt_boxes, pos_thresh: float = 0.7, neg_thresh: float = 0.3) -> LabelAssignment:
    """Positive: IoU > pos_thresh with some gt, or best anchor (ties included)
    for some gt. Negative: max IoU < neg_thresh and not positive. Else ignore."""
    if not (0 < neg_thresh <= pos_thresh < 1):
        raise ValueError("thresholds must satisfy 0 < neg <= pos < 1")
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 4)
    gts = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    n = len(anchors)
    targets = np.zeros((n, 4))
    if len(gts) == 0:
        return LabelAssignment(np.zeros(n, np.int8), np.full(n, -1), targets)
    ious = iou_matrix(anchors, gts)
    best = ious.argmax(axis=1)
    best_iou = ious[np.arange(n), best]
    labels = np.full(n, IGNORE, np.int8)
    labels[best_iou < neg_thresh] = NEGATIVE
    labels[best_iou > pos_thresh] = POSITIVE
    gt_best = ious.max(axis=0)
    for g in np.nonzero(gt_best > 0)[0]:
        labels[ious[:, g] == gt_best[g]] = POSITIVE
    pos = labels == POSITIVE
    if pos.any():
        targets[pos] = encode_deltas(anchors[pos], gts[best[pos]])
    matched = np.where(best_iou > 0, best, -1)
    return LabelAssignment(labels, matched, targets)


def nms(boxes, scores, iou_thresh: float) -> np.ndarray:
    """Greedy suppression in descending score order (ties: lower index first).

    A box is dropped when its IoU with an already kept box exceeds
    ``iou_thresh``. Returns kept indices in selection order.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if len(boxes) != len(scores):
        raise ValueError("boxes and scores differ in length")
    order = np.argsort(-scores, kind="stable")
    x1, y1, x2, y2 = boxes.T
    areas = box_area(boxes)
    keep = []
    while order.size:
        i = order[0]
        keep.append(i)
        rest = order[1:]
        iw = np.clip(np.minimum(x2[i], x2[rest]) - np.maximum(x1[i], x1[rest]), 0, None)
        ih = np.clip(np.minimum(y2[i], y2[rest]) - np.maximum(y1[i], y1[rest]), 0, None)
        inter = iw * ih
        union = areas[i] + areas[rest] - inter
        ov = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
        order = rest[ov <= iou_thresh]
    return np.array(keep, dtype=np.int64)


def propose(cls_scores, box_deltas, anchors, image_size, train_mode: bool,
            cfg: RPNConfig | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Decode, clip, drop tiny boxes, keep the pre-NMS top-k, NMS, keep the post-NMS top-k.

    Returns (boxes (K, 4), scores (K,)) in descending score order.
    """
    cfg = cfg if cfg is not None else RPNConfig()
    h, w = image_size
    scores = np.asarray(cls_scores, dtype=np.float64).reshape(-1)
    boxes = clip_boxes(decode_deltas(anchors, box_deltas), h, w)
    ok = ((boxes[:, 2] - boxes[:, 0]) >= cfg.min_size) & ((boxes[:, 3] - boxes[:, 1]) >= cfg.min_size)
    idx = np.nonzero(ok)[0]
    pre = cfg.pre_nms_train if train_mode else cfg.pre_nms_test
    post = cfg.post_nms_train if train_mode else cfg.post_nms_test
    idx = idx[np.argsort(-scores[idx], kind="stable")][:pre]
    keep = nms(boxes[idx], scores[idx], cfg.nms_thresh)[:post]
    sel = idx[keep]
    return boxes[sel], scores[sel]


class RPNHead(Module):
    """3x3 conv + ReLU, then sibling 1x1 convs for objectness (A) and deltas (4A)."""

    def __init__(self, c_in: int, channels: int, num_anchors: int, rng: np.random.Generator):
        self.num_anchors = num_anchors
        self.conv = conv(c_in, channels, 3, rng)
        self.cls = conv(channels, num_anchors, 1, rng, std=0.01)
        self.reg = conv(channels, 4 * num_anchors, 1, rng, std=0.01)

    def __call__(self, x: Tensor) -> tuple[Tensor, Tensor]:
        h = relu(self.conv(x))
        return self.cls(h), self.reg(h)


def flatten_rpn_outputs(cls_map: np.ndarray, reg_map: np.ndarray, num_anchors: int):
    """(A, H, W) and (4A, H, W) maps of one image -> per-anchor (H*W*A,) and (H*W*A, 4)."""
    a = num_anchors
    _, h, w = cls_map.shape
    scores = cls_map.transpose(1, 2, 0).reshape(-1)
    deltas = reg_map.reshape(a, 4, h, w).transpose(2, 3, 0, 1).reshape(-1, 4)
    return scores, deltas


def rpn_loss(cls_map: Tensor, reg_map: Tensor, assignments: list[LabelAssignment]) -> Tensor:
    """Objectness BCE averaged over labelled anchors plus smooth-L1 on positive
    anchors averaged over positives; averaged over the images of the batch."""
    n, a, h, w = cls_map.shape
    cls_d = cls_map.data.astype(np.float64)
    reg_d = reg_map.data.astype(np.float64)
    g_cls = np.zeros_like(cls_d)
    g_reg = np.zeros_like(reg_d)
    total = 0.0
    for i, asg in enumerate(assignments):
        logits, deltas = flatten_rpn_outputs(cls_d[i], reg_d[i], a)
        lab = asg.labels
        valid = lab != IGNORE
        nv = max(int(valid.sum()), 1)
        v, gz = sigmoid_bce(logits, (lab == POSITIVE).astype(np.float64))
        total += (v * valid).sum() / nv
        gl = gz * valid / nv
        pos = lab == POSITIVE
        npos = max(int(pos.sum()), 1)
        sv, sg = smooth_l1(deltas - asg.targets)
        total += (sv.sum(axis=1) * pos).sum() / npos
        gd = sg * pos[:, None] / npos
        g_cls[i] = gl.reshape(h, w, a).transpose(2, 0, 1)
        g_reg[i] = gd.reshape(h, w, a, 4).transpose(2, 3, 0, 1).reshape(4 * a, h, w)
    total /= n

    def backward(g):
        s = float(g) / n
        return g_cls * s, g_reg * s

    return make_op(np.asarray(total), (cls_map, reg_map), backward)
