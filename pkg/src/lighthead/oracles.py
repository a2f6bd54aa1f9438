"""Slow reference implementations written directly from the definitions.

They share no code with the vectorised ops and exist only to check them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def _qbins(start: int, length: int, p: int, size: int):
    out = []
    for i in range(p):
        lo = start + math.floor(i * length / p)
        hi = start + math.ceil((i + 1) * length / p)
        out.append((min(max(lo, 0), size), min(max(hi, 0), size)))
    return out


def _qroi(roi, scale):
    x1, y1, x2, y2 = (math.floor(v * scale + 0.5) for v in roi[1:5])
    return int(roi[0]), x1, y1, max(x2 - x1, 1), max(y2 - y1, 1)


def roi_pool_oracle(features: np.ndarray, rois, p: int, spatial_scale: float) -> np.ndarray:
    n, c, h, w = features.shape
    out = np.zeros((len(rois), c, p, p), dtype=features.dtype)
    for r, roi in enumerate(rois):
        b, x1, y1, rw, rh = _qroi(roi, spatial_scale)
        ybins, xbins = _qbins(y1, rh, p, h), _qbins(x1, rw, p, w)
        for ch in range(c):
            for i, (ys, ye) in enumerate(ybins):
                for j, (xs, xe) in enumerate(xbins):
                    best = None
                    for y in range(ys, ye):
                        for x in range(xs, xe):
                            v = features[b, ch, y, x]
                            if best is None or v > best:
                                best = v
                    out[r, ch, i, j] = 0 if best is None else best
    return out


def psroi_pool_oracle(features: np.ndarray, rois, p: int, alpha: int, spatial_scale: float) -> np.ndarray:
    n, c, h, w = features.shape
    out = np.zeros((len(rois), alpha, p, p), dtype=features.dtype)
    for r, roi in enumerate(rois):
        b, x1, y1, rw, rh = _qroi(roi, spatial_scale)
        ybins, xbins = _qbins(y1, rh, p, h), _qbins(x1, rw, p, w)
        for a in range(alpha):
            for i, (ys, ye) in enumerate(ybins):
                for j, (xs, xe) in enumerate(xbins):
                    ch = a * p * p + i * p + j
                    vals = [float(features[b, ch, y, x]) for y in range(ys, ye) for x in range(xs, xe)]
                    out[r, a, i, j] = math.fsum(vals) / len(vals) if vals else 0.0
    return out


def _bilinear(planes: np.ndarray, y: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Zero-padded bilinear reads of (G, H, W) ``planes`` at arrays of points."""
    _, h, w = planes.shape
    y0, x0 = np.floor(y).astype(int), np.floor(x).astype(int)
    total = np.zeros((len(planes),) + np.shape(y))
    for yy, wy in ((y0, 1 - (y - y0)), (y0 + 1, y - y0)):
        for xx, wx in ((x0, 1 - (x - x0)), (x0 + 1, x - x0)):
            ok = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            total += np.where(ok, wy * wx, 0.0) * planes[:, np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
    return total


def aligned_pool_oracle(features: np.ndarray, rois, p: int, spatial_scale: float, samples: int,
                        alpha: int | None = None) -> np.ndarray:
    """Bilinear average over ``samples x samples`` points per bin with the
    half-pixel shift; position-sensitive when ``alpha`` is given."""
    n, c, h, w = features.shape
    groups = alpha if alpha is not None else c
    out = np.zeros((len(rois), groups, p, p))
    offs = (np.arange(samples) + 0.5) / samples
    for r, roi in enumerate(rois):
        b = int(roi[0])
        x1, y1, x2, y2 = (v * spatial_scale - 0.5 for v in roi[1:5])
        bh, bw = (y2 - y1) / p, (x2 - x1) / p
        for i in range(p):
            for j in range(p):
                ys, xs = np.meshgrid(y1 + (i + offs) * bh, x1 + (j + offs) * bw, indexing="ij")
                chans = np.arange(groups) * p * p + i * p + j if alpha is not None else np.arange(groups)
                vals = _bilinear(features[b, chans].astype(np.float64), ys, xs)
                out[r, :, i, j] = vals.reshape(groups, -1).mean(axis=1)
    return out


def _iou(a, b) -> float:
    iw = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = iw * ih
    union = max(0.0, a[2] - a[0]) * max(0.0, a[3] - a[1]) + max(0.0, b[2] - b[0]) * max(0.0, b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def nms_oracle(boxes, scores, thresh: float) -> list[int]:
    """Full pairwise IoU table, then a greedy pass in (score desc, index asc) order."""
    n = len(boxes)
    table = [[_iou(boxes[i], boxes[j]) for j in range(n)] for i in range(n)]
    order = sorted(range(n), key=lambda i: (-float(scores[i]), i))
    removed = [False] * n
    keep = []
    for i in order:
        if removed[i]:
            continue
        keep.append(i)
        for j in order:
            if not removed[j] and j != i and table[i][j] > thresh:
                removed[j] = True
    return keep


@dataclass
class OracleLabels:
    labels: list[int]
    matched: list[int]


def assign_labels_oracle(anchors, gts, pos: float, neg: float) -> OracleLabels:
    n, m = len(anchors), len(gts)
    if m == 0:
        return OracleLabels([0] * n, [-1] * n)
    table = [[_iou(anchors[i], gts[g]) for g in range(m)] for i in range(n)]
    labels, matched = [], []
    for i in range(n):
        best = max(table[i])
        arg = table[i].index(best)
        lab = -1
        if best < neg:
            lab = 0
        if best > pos:
            lab = 1
        labels.append(lab)
        matched.append(arg if best > 0 else -1)
    for g in range(m):
        col = [table[i][g] for i in range(n)]
        top = max(col)
        if top > 0:
            for i in range(n):
                if col[i] == top:
                    labels[i] = 1
    return OracleLabels(labels, matched)
