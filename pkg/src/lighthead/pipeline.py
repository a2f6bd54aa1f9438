"""End-to-end detector: backbone -> RPN on C4 -> thin maps -> aligned PSRoI
pooling -> light R-CNN head. Includes synthetic rectangle scenes, a toy SGD
trainer, and inference with per-class NMS.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .backbone import Backbone
from .config import DetectorConfig
from .head import RCNNHead, assign_roi_targets, detection_loss, head_forward
from .layers import Module
from .losses import softmax
from .rpn import (RPNHead, assign_labels, clip_boxes, decode_deltas, flatten_rpn_outputs, gen_anchors,
                  iou_matrix, nms, propose, rpn_loss)
from .roi_warp import warp
from .tensor import Tensor, add, no_grad
from .thinmap import LargeSeparableConv

log = logging.getLogger(__name__)


@dataclass
class Detection:
    box: tuple[float, float, float, float]
    class_id: int
    score: float


@dataclass(frozen=True)
class Activation:
    """One tensor produced during inference. Rank-4 tensors are feature maps
    whose second extent is the channel count; rank-2 tensors are per-RoI
    vectors."""
    name: str
    dims: tuple

    @property
    def kind(self) -> str:
        return "map" if len(self.dims) == 4 else "vector"

    @property
    def channels(self) -> int | None:
        return self.dims[1] if self.kind == "map" else None


@dataclass
class SyntheticScene:
    image: np.ndarray        # (3, H, W) float32
    boxes: np.ndarray        # (n, 4)
    classes: np.ndarray      # (n,) in [1, num_classes]


def class_intensity(c: int, num_classes: int) -> float:
    return 0.5 + 0.5 * (c - 1) / max(num_classes - 1, 1)


def make_scene(rng: np.random.Generator, size: int = 64, num_classes: int = 2, max_objects: int = 2,
               min_side: int = 12, max_side: int = 32, noise: float = 0.1, empty: bool = False) -> SyntheticScene:
    """Non-overlapping filled rectangles of class-coded intensity on Gaussian noise."""
    if min_side < 8:
        raise ValueError("objects need a minimum side of 8 pixels")
    img = np.zeros((3, size, size), np.float64)
    boxes, classes = [], []
    n = 0 if empty else int(rng.integers(1, max_objects + 1))
    attempts = 0
    while len(boxes) < n and attempts < 100:
        attempts += 1
        w, h = (int(v) for v in rng.integers(min_side, max_side + 1, size=2))
        x1, y1 = int(rng.integers(0, size - w + 1)), int(rng.integers(0, size - h + 1))
        box = np.array([x1, y1, x1 + w, y1 + h], np.float64)
        if boxes and iou_matrix(box, np.array(boxes)).max() > 0:
            continue
        c = int(rng.integers(1, num_classes + 1))
        img[:, y1:y1 + h, x1:x1 + w] = class_intensity(c, num_classes)
        boxes.append(box)
        classes.append(c)
    img += rng.standard_normal(img.shape) * noise
    return SyntheticScene(img.astype(np.float32), np.array(boxes).reshape(-1, 4), np.array(classes, np.int64))


class Detector(Module):
    def __init__(self, cfg: DetectorConfig, seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.backbone = Backbone(cfg.backbone, int(rng.integers(2 ** 31)))
        c4 = cfg.backbone.stage_channels[1]
        self.rpn = RPNHead(c4, cfg.rpn.channels, cfg.anchor.per_cell, rng)
        self.thin = LargeSeparableConv(cfg.thin, rng)
        self.head = RCNNHead(cfg.head, rng)
        self.trace: list[Activation] = []  # post-thin-map tensors of the last detect()

    def _maps(self, images: Tensor):
        feats = self.backbone.features(images)
        c4 = feats["c4"]
        cls_map, reg_map = self.rpn(c4)
        thin = self.thin(feats[self.cfg.thin_source])
        return c4, cls_map, reg_map, thin

    def _proposals(self, cls_map: np.ndarray, reg_map: np.ndarray, anchors, image_hw, train: bool):
        scores, deltas = flatten_rpn_outputs(cls_map, reg_map, self.cfg.anchor.per_cell)
        return propose(scores, deltas, anchors, image_hw, train, self.cfg.rpn)

    def loss(self, images: np.ndarray, scenes: list[SyntheticScene], proposals=None) -> tuple[Tensor, dict]:
        """Joint RPN + R-CNN training loss on a batch.

        Proposals are constants with respect to the weights; passing a
        previous call's ``parts["proposals"]`` pins them.
        """
        cfg = self.cfg
        x = Tensor(images)
        n, _, h, w = x.shape
        c4, cls_map, reg_map, thin = self._maps(x)
        anchors = gen_anchors(cfg.anchor, c4.shape[2], c4.shape[3])
        assigns = [assign_labels(anchors, s.boxes, cfg.rpn.pos_thresh, cfg.rpn.neg_thresh) for s in scenes]
        l_rpn = rpn_loss(cls_map, reg_map, assigns)

        rois, labels, targets, ids, props = [], [], [], [], []
        for i, s in enumerate(scenes):
            if proposals is None:
                boxes, _ = self._proposals(cls_map.data[i], reg_map.data[i], anchors, (h, w), True)
            else:
                boxes = proposals[i]
            props.append(boxes)
            # ground-truth boxes join the proposals so early training sees foreground RoIs
            boxes = np.concatenate([boxes, s.boxes], axis=0)
            t = assign_roi_targets(boxes, s.boxes, s.classes, cfg.head)
            rois.append(np.concatenate([np.full((len(boxes), 1), i), boxes], axis=1))
            labels.append(t.labels)
            targets.append(t.targets)
            ids.append(np.full(len(boxes), i))
        rois = np.concatenate(rois)
        pooled = warp(thin, rois, cfg.warp)
        logits, deltas = self.head(pooled)
        l_det, _ = detection_loss(logits, deltas, np.concatenate(labels), np.concatenate(targets),
                                  cfg.head, np.concatenate(ids))
        total = add(l_rpn, l_det)
        return total, {"rpn": l_rpn.item(), "rcnn": l_det.item(), "rois": len(rois), "proposals": props}

    def detect(self, image: np.ndarray) -> list[Detection]:
        """Full forward pass on one (3, H, W) or (1, 3, H, W) image."""
        cfg = self.cfg
        img = np.asarray(image, np.float32)
        if img.ndim == 3:
            img = img[None]
        _, _, h, w = img.shape
        if h % 32 or w % 32:
            raise ValueError(f"image sides must be divisible by 32, got {h}x{w}")
        self.trace = []
        with no_grad():
            c4, cls_map, reg_map, thin = self._maps(Tensor(img))
            trace = [("thin", thin.shape)]
            anchors = gen_anchors(cfg.anchor, c4.shape[2], c4.shape[3])
            boxes, _ = self._proposals(cls_map.data[0], reg_map.data[0], anchors, (h, w), False)
            rois = np.concatenate([np.zeros((len(boxes), 1)), boxes], axis=1)
            pooled = warp(thin, rois, cfg.warp)
            trace.append(("warp", pooled.shape))
            logits, deltas = head_forward(pooled, self.head, trace)
        self.trace = [Activation(n, tuple(d)) for n, d in trace]
        if len(boxes) == 0:
            return []
        probs = softmax(logits.data)
        refined = clip_boxes(decode_deltas(boxes, deltas.data.astype(np.float64) * np.asarray(cfg.head.bbox_stds)), h, w)
        dets: list[Detection] = []
        for c in range(1, cfg.head.num_classes + 1):
            sc = probs[:, c]
            idx = np.nonzero(sc >= cfg.detect.score_thresh)[0]
            if not len(idx):
                continue
            keep = idx[nms(refined[idx], sc[idx], cfg.detect.nms_thresh)]
            dets += [Detection(tuple(float(v) for v in refined[k]), c, float(sc[k])) for k in keep]
        dets.sort(key=lambda d: -d.score)
        return dets[: cfg.detect.max_detections]


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration: int, value: float):
        self.iteration = iteration
        super().__init__(f"non-finite loss {value} at iteration {iteration}")


@dataclass
class TrainResult:
    detector: Detector
    losses: list[float] = field(default_factory=list)
    components: list[dict] = field(default_factory=list)


def scene_stream(cfg: DetectorConfig, seed: int, split: int):
    """Deterministic scene generator; split 0 trains, split 1 is held out."""
    t = cfg.train
    rng = np.random.default_rng([seed, split])
    while True:
        yield make_scene(rng, t.image_size, cfg.head.num_classes, t.max_objects, t.min_side, t.max_side, t.noise)


def train_toy(cfg: DetectorConfig, iters: int | None = None, seed: int | None = None,
              progress=None) -> TrainResult:
    """Single-process SGD with momentum and weight decay; the learning rate
    drops 10x at ``train.lr_drop_at`` of the run."""
    t = cfg.train
    iters = t.iters if iters is None else iters
    seed = t.seed if seed is None else seed
    if iters < 1:
        raise ValueError("iters must be >= 1")
    det = Detector(cfg, seed)
    params = det.named_parameters()
    names = sorted(params)
    velocity = {k: np.zeros_like(params[k].data) for k in names}
    scenes = scene_stream(cfg, seed, 0)
    drop_at = int(round(iters * t.lr_drop_at))
    result = TrainResult(det)
    for it in range(iters):
        batch = [next(scenes) for _ in range(t.batch_size)]
        images = np.stack([s.image for s in batch])
        for k in names:
            params[k].grad = None
        loss, parts = det.loss(images, batch)
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingDiverged(it, value)
        loss.backward()
        lr = t.lr if it < drop_at else t.lr * 0.1
        for k in names:
            p = params[k]
            g = p.grad if p.grad is not None else 0.0
            v = velocity[k]
            v *= t.momentum
            v += g + t.weight_decay * p.data
            p.data -= np.float32(lr) * v
        result.losses.append(value)
        result.components.append({k: parts[k] for k in ("rpn", "rcnn", "rois")})
        if progress is not None:
            progress(it, value, parts)
    return result


@dataclass
class EvalResult:
    recall: float
    false_positives_per_image: float
    num_gt: int
    num_images: int
    max_false_positives: int


def evaluate(det: Detector, scenes: list[SyntheticScene], iou_thresh: float = 0.5,
             score_thresh: float | None = None) -> EvalResult:
    """Greedy score-ordered matching of same-class detections to ground truth."""
    thr = det.cfg.detect.score_thresh if score_thresh is None else score_thresh
    tp = n_gt = fp_total = fp_max = 0
    for s in scenes:
        dets = [d for d in det.detect(s.image) if d.score >= thr]
        used = np.zeros(len(s.boxes), bool)
        fp = 0
        for d in dets:
            ious = iou_matrix(np.array(d.box), s.boxes)[0] if len(s.boxes) else np.zeros(0)
            ious = np.where((s.classes == d.class_id) & ~used, ious, 0.0)
            if len(ious) and ious.max() >= iou_thresh:
                used[ious.argmax()] = True
            else:
                fp += 1
        tp += int(used.sum())
        n_gt += len(s.boxes)
        fp_total += fp
        fp_max = max(fp_max, fp)
    return EvalResult(tp / max(n_gt, 1), fp_total / max(len(scenes), 1), n_gt, len(scenes), fp_max)
