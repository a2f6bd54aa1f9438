"""Dense float32 tensors with a small define-by-run autograd tape.

Every primitive the detector needs lives here: convolution (grouped,
strided, dilated), fully connected, ReLU, max pooling, global average
pooling, plus a few shape ops. Each op records a closure that maps the
output gradient to input gradients.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float32

_grad_enabled = True
_dtype = DTYPE


def default_dtype():
    return _dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily build tensors in another float type (used by gradient checks)."""
    global _dtype
    prev = _dtype
    _dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _dtype = prev


class ShapeError(ValueError):
    """Raised when an operand does not have the expected extent on some axis."""

    def __init__(self, op: str, axis: str, expected, got):
        self.op, self.axis, self.expected, self.got = op, axis, expected, got
        super().__init__(f"{op}: axis '{axis}' expected {expected}, got {got}")


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.require(data, dtype=_dtype, requirements="C")
        if arr.ndim > 4:
            raise ShapeError("Tensor", "rank", "<= 4", arr.ndim)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    @property
    def dims(self) -> list[int]:
        return list(self.data.shape)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.item())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(dims={self.dims}, requires_grad={self.requires_grad})"

    def backward(self, grad=None):
        """Accumulate gradients into every reachable leaf that requires them."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=_dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pg = np.asarray(pg, dtype=_dtype)
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def make_op(out: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    """Wrap ``out`` as a tensor whose gradient flows to ``parents`` via ``backward``.

    ``backward(g)`` must return one gradient (or None) per parent.
    """
    t = Tensor(out)
    if _grad_enabled and any(p.requires_grad for p in parents):
        t.requires_grad = True
        t._parents = tuple(parents)
        t._backward = backward
    return t


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    pad_h: int = 0
    pad_w: int = 0
    dilation: int = 1
    groups: int = 1

    def __post_init__(self):
        for f in ("in_channels", "out_channels", "kernel_h", "kernel_w", "stride", "dilation", "groups"):
            if getattr(self, f) < 1:
                raise ValueError(f"ConvSpec.{f} must be >= 1")
        if self.pad_h < 0 or self.pad_w < 0:
            raise ValueError("ConvSpec padding must be >= 0")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ValueError("in_channels and out_channels must be divisible by groups")

    @property
    def weight_dims(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels // self.groups, self.kernel_h, self.kernel_w)

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        d = self.dilation
        ho = (h + 2 * self.pad_h - d * (self.kernel_h - 1) - 1) // self.stride + 1
        wo = (w + 2 * self.pad_w - d * (self.kernel_w - 1) - 1) // self.stride + 1
        return ho, wo


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int, dil: int) -> np.ndarray:
    # (N, C, Ho, Wo, kh, kw) strided view
    span_h, span_w = dil * (kh - 1) + 1, dil * (kw - 1) + 1
    win = sliding_window_view(xp, (span_h, span_w), axis=(2, 3))
    return win[:, :, ::stride, ::stride, ::dil, ::dil]


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None, spec: ConvSpec) -> Tensor:
    """Cross-correlation over NCHW input (no kernel flip)."""
    if x.data.ndim != 4:
        raise ShapeError("conv2d", "rank", 4, x.data.ndim)
    n, c, h, w = x.shape
    if c != spec.in_channels:
        raise ShapeError("conv2d", "input channels", spec.in_channels, c)
    if tuple(weight.shape) != spec.weight_dims:
        raise ShapeError("conv2d", "weight dims", spec.weight_dims, tuple(weight.shape))
    if bias is not None and tuple(bias.shape) != (spec.out_channels,):
        raise ShapeError("conv2d", "bias length", spec.out_channels, tuple(bias.shape))
    ho, wo = spec.output_hw(h, w)
    if ho < 1:
        raise ShapeError("conv2d", "output height", ">= 1", ho)
    if wo < 1:
        raise ShapeError("conv2d", "output width", ">= 1", wo)

    ph, pw, s, d, g = spec.pad_h, spec.pad_w, spec.stride, spec.dilation, spec.groups
    kh, kw = spec.kernel_h, spec.kernel_w
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    win = _windows(xp, kh, kw, s, d)[:, :, :ho, :wo]
    wt = weight.data
    cg, og = c // g, spec.out_channels // g
    if g == 1:
        out = np.tensordot(win, wt, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    else:
        wg = win.reshape(n, g, cg, ho, wo, kh, kw)
        out = np.einsum("ngchwij,gocij->ngohw", wg, wt.reshape(g, og, cg, kh, kw), optimize=True)
        out = out.reshape(n, spec.out_channels, ho, wo)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.require(out, dtype=_dtype, requirements="C")

    def backward(gout):
        if g == 1:
            gw = np.tensordot(gout, win, axes=([0, 2, 3], [0, 2, 3]))
            gcols = np.tensordot(gout, wt, axes=([1], [0]))  # (N, Ho, Wo, C, kh, kw)
            gcols = gcols.transpose(0, 3, 1, 2, 4, 5)
        else:
            gg = gout.reshape(n, g, og, ho, wo)
            wg = win.reshape(n, g, cg, ho, wo, kh, kw)
            gw = np.einsum("ngohw,ngchwij->gocij", gg, wg, optimize=True).reshape(spec.weight_dims)
            gcols = np.einsum("ngohw,gocij->ngchwij", gg, wt.reshape(g, og, cg, kh, kw), optimize=True)
            gcols = gcols.reshape(n, c, ho, wo, kh, kw)
        gxp = np.zeros(xp.shape, dtype=_dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i * d: i * d + s * (ho - 1) + 1: s, j * d: j * d + s * (wo - 1) + 1: s] += gcols[..., i, j]
        gx = gxp[:, :, ph: ph + h, pw: pw + w]
        gb = gout.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) + ((bias,) if bias is not None else ())
    return make_op(out, parents, backward)


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weight + bias`` with weight laid out as (in, out)."""
    if x.data.ndim != 2:
        raise ShapeError("fully_connected", "input rank", 2, x.data.ndim)
    if weight.data.ndim != 2 or weight.shape[0] != x.shape[1]:
        raise ShapeError("fully_connected", "inner dimension", x.shape[1], weight.shape[0])
    if bias is not None and tuple(bias.shape) != (weight.shape[1],):
        raise ShapeError("fully_connected", "bias length", weight.shape[1], tuple(bias.shape))
    xd, wd = x.data, weight.data
    out = xd @ wd
    if bias is not None:
        out = out + bias.data

    def backward(g):
        gb = g.sum(axis=0) if bias is not None else None
        return g @ wd.T, xd.T @ g, gb

    parents = (x, weight) + ((bias,) if bias is not None else ())
    return make_op(out, parents, backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_op(np.where(mask, x.data, 0).astype(_dtype), (x,), lambda g: (g * mask,))


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError("add", "dims", a.shape, b.shape)
    return make_op(a.data + b.data, (a, b), lambda g: (g, g))


def scale(a: Tensor, factor: float) -> Tensor:
    return make_op(a.data * _dtype(factor), (a,), lambda g: (g * _dtype(factor),))


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return make_op(np.asarray(x.data.sum(dtype=np.float64), dtype=_dtype), (x,),
                   lambda g: (np.broadcast_to(g, shape).astype(_dtype),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    return make_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def max_pool2d(x: Tensor, kernel: int = 3, stride: int = 2, pad: int = 1) -> Tensor:
    """Windowed max; padding cells never win."""
    n, c, h, w = x.shape
    if kernel > h + 2 * pad or kernel > w + 2 * pad:
        raise ShapeError("max_pool2d", "window", f"<= padded input {h + 2 * pad}x{w + 2 * pad}", kernel)
    ho = (h + 2 * pad - kernel) // stride + 1
    wo = (w + 2 * pad - kernel) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=-np.inf)
    win = _windows(xp, kernel, kernel, stride, 1)[:, :, :ho, :wo].reshape(n, c, ho, wo, kernel * kernel)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    rows = np.arange(ho)[None, None, :, None] * stride + idx // kernel
    cols = np.arange(wo)[None, None, None, :] * stride + idx % kernel
    flat = ((np.arange(n)[:, None, None, None] * c + np.arange(c)[None, :, None, None])
            * xp.shape[2] + rows) * xp.shape[3] + cols

    def backward(g):
        gxp = np.bincount(flat.ravel(), weights=g.ravel(), minlength=xp.size).reshape(xp.shape)
        return (gxp[:, :, pad: pad + h, pad: pad + w],)

    return make_op(out, (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean per channel: (N, C, H, W) -> (N, C)."""
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), dtype=np.float64)
    return make_op(out, (x,), lambda g: (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape),))


def fold_batch_norm(conv_weight, conv_bias, bn_mean, bn_var, bn_gamma, bn_beta, epsilon=1e-5):
    """Absorb frozen batch-norm statistics into the preceding convolution.

    Returns ``(weight, bias)`` arrays such that conv(x; weight, bias) equals
    BN(conv(x; conv_weight, conv_bias)).
    """
    w = np.asarray(conv_weight, dtype=np.float64)
    cout = w.shape[0]
    b = np.zeros(cout) if conv_bias is None else np.asarray(conv_bias, dtype=np.float64)
    mean, var, gamma, beta = (np.asarray(v, dtype=np.float64) for v in (bn_mean, bn_var, bn_gamma, bn_beta))
    for name, v in (("mean", mean), ("var", var), ("gamma", gamma), ("beta", beta)):
        if v.shape != (cout,):
            raise ShapeError("fold_batch_norm", f"bn_{name} length", cout, v.shape)
    if np.any(var < 0):
        raise ValueError("fold_batch_norm: negative variance")
    factor = gamma / np.sqrt(var + epsilon)
    w_new = w * factor.reshape((cout,) + (1,) * (w.ndim - 1))
    b_new = (b - mean) * factor + beta
    return w_new.astype(_dtype), b_new.astype(_dtype)


def he_normal(rng: np.random.Generator, dims: Sequence[int], fan_in: int) -> np.ndarray:
    return (rng.standard_normal(dims) * np.sqrt(2.0 / fan_in)).astype(_dtype)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)
