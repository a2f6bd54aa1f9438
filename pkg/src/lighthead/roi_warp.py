"""RoI warping: max RoI pooling, position-sensitive average pooling, and the
bilinear (aligned) variants of both, each with an analytic backward pass.

RoIs are ``(R, 5)`` arrays of ``batch, x1, y1, x2, y2`` in image pixels.

Quantized variants round the scaled RoI to the feature grid, treat the end
coordinate as exclusive, and give bin ``i`` the cells
``[floor(i * h / p), ceil((i + 1) * h / p))`` offset by the RoI start.
Aligned variants map an image coordinate ``c`` to ``c * spatial_scale - 0.5``,
take ``sampling_ratio**2`` regularly spaced samples per bin, and read the
feature map as a zero-padded bilinear field.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .config import WarpSpec
from .tensor import ShapeError, Tensor, make_op


class RoI(NamedTuple):
    batch_index: int
    x1: float
    y1: float
    x2: float
    y2: float


def as_rois(rois, n_batch: int | None = None) -> np.ndarray:
    arr = np.asarray(rois, dtype=np.float64).reshape(-1, 5)
    if arr.size and (np.any(arr[:, 3] < arr[:, 1]) or np.any(arr[:, 4] < arr[:, 2])):
        raise ValueError("RoI needs x2 >= x1 and y2 >= y1")
    if arr.size and n_batch is not None:
        b = arr[:, 0]
        if np.any(b < 0) or np.any(b >= n_batch) or np.any(b != np.floor(b)):
            raise IndexError(f"RoI batch index out of range for batch of {n_batch}")
    return arr


def quantized_bins(roi, spatial_scale: float, p: int, h: int, w: int):
    """Per-bin ``[start, end)`` cell ranges along y and x, clipped to the map."""
    def q(v):
        return int(np.floor(v * spatial_scale + 0.5))

    x1, y1, x2, y2 = q(roi[1]), q(roi[2]), q(roi[3]), q(roi[4])
    rh, rw = max(y2 - y1, 1), max(x2 - x1, 1)

    def axis(start, length, size):
        lo = np.array([start + (i * length) // p for i in range(p)])
        hi = np.array([start - ((-(i + 1) * length) // p) for i in range(p)])
        return np.clip(lo, 0, size), np.clip(hi, 0, size)

    return axis(y1, rh, h), axis(x1, rw, w)


def _check_features(op, features, rois):
    if features.data.ndim != 4:
        raise ShapeError(op, "features rank", 4, features.data.ndim)
    return as_rois(rois, features.shape[0])


def _check_ps_channels(op, c, spec: WarpSpec):
    if c != spec.alpha * spec.p * spec.p:
        raise ShapeError(op, "channels", f"alpha*p*p = {spec.alpha * spec.p * spec.p}", c)


def roi_pool(features: Tensor, rois, spec: WarpSpec) -> Tensor:
    """Max pooling over quantized bins; an empty bin yields 0 and no gradient."""
    r_arr = _check_features("roi_pool", features, rois)
    n, c, h, w = features.shape
    p = spec.p
    data = features.data
    out = np.zeros((len(r_arr), c, p, p), dtype=data.dtype)
    src = np.full((len(r_arr), c, p, p), -1, dtype=np.int64)  # flat argmax into features
    chan_off = np.arange(c) * h * w
    for r, roi in enumerate(r_arr):
        b = int(roi[0])
        (ys, ye), (xs, xe) = quantized_bins(roi, spec.spatial_scale, p, h, w)
        for i in range(p):
            if ye[i] <= ys[i]:
                continue
            for j in range(p):
                if xe[j] <= xs[j]:
                    continue
                patch = data[b, :, ys[i]:ye[i], xs[j]:xe[j]]
                bw = xe[j] - xs[j]
                k = patch.reshape(c, -1).argmax(axis=1)
                out[r, :, i, j] = patch.reshape(c, -1)[np.arange(c), k]
                src[r, :, i, j] = b * c * h * w + chan_off + (ys[i] + k // bw) * w + xs[j] + k % bw

    def backward(g):
        m = src >= 0
        gf = np.bincount(src[m], weights=g[m], minlength=data.size)
        return (gf.reshape(data.shape),)

    return make_op(out, (features,), backward)


def psroi_pool(features: Tensor, rois, spec: WarpSpec) -> Tensor:
    """Position-sensitive average pooling: output bin (i, j) of group a reads
    channel ``a*p*p + i*p + j`` only. Accumulates in float64."""
    r_arr = _check_features("psroi_pool", features, rois)
    n, c, h, w = features.shape
    _check_ps_channels("psroi_pool", c, spec)
    p, alpha = spec.p, spec.alpha
    data = features.data
    out = np.zeros((len(r_arr), alpha, p, p))
    bins = []
    for r, roi in enumerate(r_arr):
        b = int(roi[0])
        (ys, ye), (xs, xe) = quantized_bins(roi, spec.spatial_scale, p, h, w)
        bins.append((b, ys, ye, xs, xe))
        for i in range(p):
            for j in range(p):
                cnt = (ye[i] - ys[i]) * (xe[j] - xs[j])
                if ye[i] <= ys[i] or xe[j] <= xs[j]:
                    continue
                chans = np.arange(alpha) * p * p + i * p + j
                patch = data[b, chans, ys[i]:ye[i], xs[j]:xe[j]].astype(np.float64)
                out[r, :, i, j] = patch.sum(axis=(1, 2)) / cnt

    def backward(g):
        gf = np.zeros(data.shape, dtype=np.float64)
        for r, (b, ys, ye, xs, xe) in enumerate(bins):
            for i in range(p):
                for j in range(p):
                    if ye[i] <= ys[i] or xe[j] <= xs[j]:
                        continue
                    cnt = (ye[i] - ys[i]) * (xe[j] - xs[j])
                    chans = np.arange(alpha) * p * p + i * p + j
                    gf[b, chans, ys[i]:ye[i], xs[j]:xe[j]] += (g[r, :, i, j] / cnt)[:, None, None]
        return (gf,)

    return make_op(out.astype(data.dtype), (features,), backward)


def _axis_samples(start, length, p: int, s: int, size: int):
    """Bilinear taps for ``p*s`` regularly spaced samples along one axis.

    Returns (idx, wt) of shape (R, p*s, 2); out-of-range taps get weight 0.
    """
    t = (np.arange(p * s) + 0.5) / s
    pos = start[:, None] + t[None, :] * (length[:, None] / p)
    lo = np.floor(pos)
    frac = pos - lo
    idx = np.stack([lo, lo + 1], axis=-1).astype(np.int64)
    wt = np.stack([1.0 - frac, frac], axis=-1)
    wt = np.where((idx >= 0) & (idx <= size - 1), wt, 0.0)
    return np.clip(idx, 0, size - 1), wt


def _aligned_geometry(r_arr, spec: WarpSpec, h: int, w: int):
    x1 = r_arr[:, 1] * spec.spatial_scale - 0.5
    y1 = r_arr[:, 2] * spec.spatial_scale - 0.5
    x2 = r_arr[:, 3] * spec.spatial_scale - 0.5
    y2 = r_arr[:, 4] * spec.spatial_scale - 0.5
    iy, wy = _axis_samples(y1, y2 - y1, spec.p, spec.sampling_ratio, h)
    ix, wx = _axis_samples(x1, x2 - x1, spec.p, spec.sampling_ratio, w)
    return iy, wy, ix, wx


def psroi_pool_aligned(features: Tensor, rois, spec: WarpSpec) -> Tensor:
    """Position-sensitive average of bilinear samples (no coordinate rounding)."""
    r_arr = _check_features("psroi_pool_aligned", features, rois)
    n, c, h, w = features.shape
    _check_ps_channels("psroi_pool_aligned", c, spec)
    p, s, alpha = spec.p, spec.sampling_ratio, spec.alpha
    R = len(r_arr)
    data = features.data
    iy, wy, ix, wx = _aligned_geometry(r_arr, spec, h, w)
    b = r_arr[:, 0].astype(np.int64)
    chans = (np.arange(alpha)[:, None, None] * p * p + np.arange(p)[None, :, None] * p
             + np.arange(p)[None, None, :])  # (alpha, p, p)
    # axes: r, a, i, sy, cy, j, sx, cx
    base = (b[:, None, None, None] * c + chans[None]) * h  # (R, a, i, j)
    base = base[:, :, :, None, None, :, None, None]
    yy = iy.reshape(R, p, s, 2)[:, None, :, :, :, None, None, None]
    xx = ix.reshape(R, p, s, 2)[:, None, None, None, None, :, :, :]
    flat = (base + yy) * w + xx
    weight = (wy.reshape(R, p, s, 2)[:, None, :, :, :, None, None, None]
              * wx.reshape(R, p, s, 2)[:, None, None, None, None, :, :, :]) / (s * s)
    weight = np.broadcast_to(weight, flat.shape)
    out = (data.ravel()[flat] * weight).sum(axis=(3, 4, 6, 7))

    def backward(g):
        contrib = weight * g[:, :, :, None, None, :, None, None]
        gf = np.bincount(flat.ravel(), weights=contrib.ravel(), minlength=data.size)
        return (gf.reshape(data.shape),)

    return make_op(out.astype(data.dtype), (features,), backward)


def _interp_matrix(idx, wt, p: int, s: int, size: int) -> np.ndarray:
    """Dense (R, p, size) matrix: bin-averaged bilinear weights along one axis."""
    R = idx.shape[0]
    m = np.zeros((R, p, size))
    rr = np.broadcast_to(np.arange(R)[:, None, None], idx.shape)
    bb = np.broadcast_to((np.arange(p * s) // s)[None, :, None], idx.shape)
    np.add.at(m, (rr, bb, idx), wt / s)
    return m


def roi_align(features: Tensor, rois, spec: WarpSpec) -> Tensor:
    """Channel-wise average of bilinear samples per bin (RoIAlign, average mode)."""
    r_arr = _check_features("roi_align", features, rois)
    n, c, h, w = features.shape
    p, s = spec.p, spec.sampling_ratio
    data = features.data
    iy, wy, ix, wx = _aligned_geometry(r_arr, spec, h, w)
    my = _interp_matrix(iy, wy, p, s, h)  # (R, p, H)
    mx = _interp_matrix(ix, wx, p, s, w)  # (R, p, W)
    b = r_arr[:, 0].astype(np.int64)
    out = np.einsum("riy,rcyx,rjx->rcij", my, data[b].astype(np.float64), mx, optimize=True)

    def backward(g):
        gr = np.einsum("riy,rcij,rjx->rcyx", my, g.astype(np.float64), mx, optimize=True)
        gf = np.zeros(data.shape)
        np.add.at(gf, b, gr)
        return (gf,)

    return make_op(out.astype(data.dtype), (features,), backward)


def warp(features: Tensor, rois, spec: WarpSpec) -> Tensor:
    """Position-sensitive pooling, aligned or quantized per ``spec.aligned``."""
    return (psroi_pool_aligned if spec.aligned else psroi_pool)(features, rois, spec)
