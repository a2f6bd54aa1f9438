"""Gradient suites: every differentiable op checked on three seeded random
small shapes with central differences in float64."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .config import HeadConfig, LargeSepConvSpec, WarpSpec, toy_config
from .gradcheck import GradCheckReport, grad_check
from .head import RCNNHead, detection_loss
from .roi_warp import psroi_pool, psroi_pool_aligned, roi_align, roi_pool
from .rpn import rpn_loss
from .tensor import ConvSpec, Tensor, conv2d, fully_connected, max_pool2d, precision, relu
from .thinmap import LargeSeparableConv

EPS = 1e-6
TOL = 1e-2


@dataclass
class SuiteResult:
    name: str
    reports: list[GradCheckReport]

    @property
    def passed(self) -> bool:
        return len(self.reports) >= 3 and all(r.passed for r in self.reports)

    @property
    def max_rel_error(self) -> float:
        return max(r.max_rel_error for r in self.reports)


def _t(rng, *dims, scale=1.0):
    return Tensor(rng.standard_normal(dims) * scale, requires_grad=True)


def _check(fn, inputs, max_elements=60, seed=0):
    return grad_check(fn, inputs, epsilon=EPS, tolerance=TOL, max_elements=max_elements, seed=seed,
                      dtype=np.float64)


def _conv_case(rng, groups_mode: str):
    n = int(rng.integers(1, 3))
    c = int(rng.integers(2, 5))
    h, w = (int(v) for v in rng.integers(5, 9, size=2))
    k = int(rng.choice([1, 3]))
    if groups_mode == "depthwise":
        spec = ConvSpec(c, c, 3, 3, stride=int(rng.integers(1, 3)), pad_h=1, pad_w=1, groups=c)
    elif groups_mode == "dilated":
        spec = ConvSpec(c, int(rng.integers(2, 5)), 3, 3, pad_h=2, pad_w=2, dilation=2)
    elif groups_mode == "rect":
        kh, kw = (5, 1) if rng.random() < 0.5 else (1, 5)
        spec = ConvSpec(c, int(rng.integers(2, 5)), kh, kw, pad_h=kh // 2, pad_w=kw // 2)
    else:
        spec = ConvSpec(c, int(rng.integers(2, 5)), k, k, stride=int(rng.integers(1, 3)), pad_h=k // 2, pad_w=k // 2)
    x = _t(rng, n, c, h, w)
    wt = _t(rng, *spec.weight_dims, scale=0.5)
    b = _t(rng, spec.out_channels)
    return _check(lambda x, wt, b: conv2d(x, wt, b, spec), [x, wt, b])


def _fc_case(rng):
    n, d, m = (int(v) for v in rng.integers(1, 9, size=3))
    return _check(fully_connected, [_t(rng, n, d), _t(rng, d, m), _t(rng, m)])


def _relu_pool_case(rng):
    x = _t(rng, 1, int(rng.integers(1, 4)), int(rng.integers(4, 9)), int(rng.integers(4, 9)))
    return _check(lambda x: max_pool2d(relu(x), 3, 2, 1), [x])


def _sep_case(rng):
    k = int(rng.choice([3, 5]))
    spec = LargeSepConvSpec(k=k, c_in=int(rng.integers(2, 4)), c_mid=int(rng.integers(2, 4)),
                            c_out=int(rng.integers(2, 5)), single_branch=bool(rng.random() < 0.3))
    with precision(np.float64):
        block = LargeSeparableConv(spec, rng)
    params = list(block.named_parameters().values())
    x = _t(rng, 1, spec.c_in, int(rng.integers(k, k + 3)), int(rng.integers(k, k + 3)))

    def fn(x, *ps):
        return block(x)

    return _check(fn, [x, *params], max_elements=25)


def _rois(rng, r, n, size):
    xy = rng.uniform(-2, size + 2, size=(r, 2, 2))
    lo, hi = xy.min(axis=1), xy.max(axis=1) + 1.0
    b = rng.integers(0, n, size=(r, 1))
    return np.concatenate([b, lo[:, :1], lo[:, 1:], hi[:, :1], hi[:, 1:]], axis=1)


def _warp_case(rng, op):
    p, alpha = int(rng.integers(2, 4)), int(rng.integers(1, 3))
    spec = WarpSpec(p=p, alpha=alpha, spatial_scale=0.5, aligned=True, sampling_ratio=int(rng.integers(1, 3)))
    n, h, w = 2, int(rng.integers(4, 7)), int(rng.integers(4, 7))
    c = alpha * p * p if op in (psroi_pool_aligned, psroi_pool) else int(rng.integers(1, 4))
    x = _t(rng, n, c, h, w)
    rois = _rois(rng, int(rng.integers(1, 4)), n, 2 * max(h, w))
    return _check(lambda x: op(x, rois, spec), [x])


def _head_case(rng):
    p, alpha = 2, int(rng.integers(1, 3))
    cfg = HeadConfig(p=p, alpha=alpha, fc_width=int(rng.integers(3, 7)), num_classes=int(rng.integers(1, 4)))
    with precision(np.float64):
        head = RCNNHead(cfg, rng)
    for prm in head.named_parameters().values():
        prm.data = rng.standard_normal(prm.shape) * 0.5
    r = int(rng.integers(2, 6))
    pooled = _t(rng, r, alpha, p, p)
    labels = rng.integers(0, cfg.num_classes + 1, size=r)
    targets = rng.standard_normal((r, 4))
    params = list(head.named_parameters().values())

    def fn(x, *ps):
        logits, deltas = head(x)
        loss, _ = detection_loss(logits, deltas, labels, targets, cfg)
        return loss

    return _check(fn, [pooled, *params], max_elements=30)


def _rpn_loss_case(rng):
    from .rpn import LabelAssignment
    n, a, h, w = 2, 3, int(rng.integers(2, 4)), int(rng.integers(2, 4))
    cls = _t(rng, n, a, h, w)
    reg = _t(rng, n, 4 * a, h, w)
    asg = []
    for _ in range(n):
        m = a * h * w
        labels = rng.integers(-1, 2, size=m).astype(np.int8)
        asg.append(LabelAssignment(labels, np.zeros(m, int), rng.standard_normal((m, 4)) * (labels == 1)[:, None]))
    return _check(lambda c, r: rpn_loss(c, r, asg), [cls, reg])


def _full_loss_case(rng):
    """Joint RPN + R-CNN loss of the toy detector, w.r.t. a sample of weights."""
    from .pipeline import Detector, make_scene
    cfg = toy_config()
    seed = int(rng.integers(1 << 30))
    with precision(np.float64):
        det = Detector(cfg, seed)
    params = det.named_parameters()
    for prm in params.values():
        # nonzero residual branches so every weight reaches the loss
        prm.data = prm.data + rng.standard_normal(prm.shape) * 0.02
    scenes = [make_scene(rng, 64, cfg.head.num_classes) for _ in range(2)]
    images = np.stack([s.image for s in scenes])
    picked = [params[k] for k in ("backbone.conv1.weight", "rpn.cls.weight", "thin.a_row.weight",
                                  "head.fc.weight", "head.cls.bias", "head.reg.weight")]

    _, parts = det.loss(images, scenes)
    pinned = parts["proposals"]

    def fn(*ps):
        loss, _ = det.loss(images, scenes, pinned)
        return loss

    return _check(fn, picked, max_elements=6)


SUITES: dict[str, Callable] = {
    "conv2d": lambda rng: _conv_case(rng, "plain"),
    "conv2d_depthwise": lambda rng: _conv_case(rng, "depthwise"),
    "conv2d_dilated": lambda rng: _conv_case(rng, "dilated"),
    "conv2d_rect": lambda rng: _conv_case(rng, "rect"),
    "fully_connected": _fc_case,
    "relu_maxpool": _relu_pool_case,
    "large_separable_conv": _sep_case,
    "psroi_pool": lambda rng: _warp_case(rng, psroi_pool),
    "roi_pool": lambda rng: _warp_case(rng, roi_pool),
    "psroi_pool_aligned": lambda rng: _warp_case(rng, psroi_pool_aligned),
    "roi_align": lambda rng: _warp_case(rng, roi_align),
    "rcnn_head_loss": _head_case,
    "rpn_loss": _rpn_loss_case,
    "full_loss": _full_loss_case,
}


def run_suite(name: str, seed: int = 0, cases: int = 3) -> SuiteResult:
    rng = np.random.default_rng([seed, sorted(SUITES).index(name)])
    return SuiteResult(name, [SUITES[name](rng) for _ in range(cases)])


def run_all(seed: int = 0, cases: int = 3, names=None) -> list[SuiteResult]:
    return [run_suite(n, seed, cases) for n in (names or SUITES)]


@dataclass
class OracleResult:
    name: str
    fixtures: int
    mismatches: int

    @property
    def passed(self) -> bool:
        return self.fixtures > 0 and self.mismatches == 0


def random_boxes(rng, n: int, extent: float = 200.0, min_side: float = 4.0, max_side: float = 60.0):
    xy = rng.uniform(0, extent, size=(n, 2))
    wh = rng.uniform(min_side, max_side, size=(n, 2))
    return np.concatenate([xy, xy + wh], axis=1)


def _pool_fixture(rng):
    p = int(rng.integers(1, 5))
    alpha = int(rng.integers(1, 4))
    n, h, w = int(rng.integers(1, 3)), int(rng.integers(1, 10)), int(rng.integers(1, 10))
    scale = float(rng.choice([1.0, 0.5, 0.25, 1 / 16]))
    feats = rng.standard_normal((n, alpha * p * p, h, w)).astype(np.float32)
    r = int(rng.integers(1, 6))
    xy = rng.uniform(-8, (max(h, w) + 4) / scale, size=(r, 2, 2))
    rois = np.concatenate([rng.integers(0, n, size=(r, 1)), xy.min(axis=1), xy.max(axis=1)], axis=1)
    return WarpSpec(p=p, alpha=alpha, spatial_scale=scale, aligned=False), feats, rois


def run_oracles(seed: int = 0, pool_fixtures: int = 100, nms_boxes: int = 1000,
                assign_fixtures: int = 50) -> list[OracleResult]:
    from . import oracles
    from .rpn import assign_labels, nms

    rng = np.random.default_rng(seed)
    results = []
    bad_max = bad_avg = 0
    for _ in range(pool_fixtures):
        spec, feats, rois = _pool_fixture(rng)
        got = roi_pool(Tensor(feats), rois, spec).data
        want = oracles.roi_pool_oracle(feats, rois, spec.p, spec.spatial_scale)
        bad_max += not (got.dtype == want.dtype and np.array_equal(got, want))
        got = psroi_pool(Tensor(feats), rois, spec).data
        want = oracles.psroi_pool_oracle(feats, rois, spec.p, spec.alpha, spec.spatial_scale)
        bad_avg += not (got.dtype == want.dtype and np.array_equal(got, want))
    results += [OracleResult("roi_pool", pool_fixtures, bad_max), OracleResult("psroi_pool", pool_fixtures, bad_avg)]

    boxes = random_boxes(rng, nms_boxes)
    # coarse scores so that ties occur and the tie rule is exercised
    scores = np.round(rng.uniform(0, 1, nms_boxes), 2)
    for thr in (0.3, 0.5, 0.7):
        got = nms(boxes, scores, thr).tolist()
        want = oracles.nms_oracle(boxes.tolist(), scores.tolist(), thr)
        results.append(OracleResult(f"nms@{thr}", 1, int(got != want)))

    bad = 0
    for _ in range(assign_fixtures):
        anchors = random_boxes(rng, int(rng.integers(1, 120)), extent=100.0)
        # snapping to a grid produces exact IoU ties between anchors
        snapped = np.round(anchors / 4) * 4
        snapped[:, 2:] = np.maximum(snapped[:, 2:], snapped[:, :2] + 4)
        anchors = snapped
        gts = random_boxes(rng, int(rng.integers(0, 6)), extent=100.0)
        pos, neg = float(rng.uniform(0.5, 0.8)), float(rng.uniform(0.1, 0.5))
        got = assign_labels(anchors, gts, pos, neg)
        want = oracles.assign_labels_oracle(anchors.tolist(), gts.tolist(), pos, neg)
        bad += not (got.labels.tolist() == want.labels and got.matched.tolist() == want.matched)
    results.append(OracleResult("assign_labels", assign_fixtures, bad))
    return results
