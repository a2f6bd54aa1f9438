"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad, precision


class GradCheckError(RuntimeError):
    pass


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_input: list[float]
    tolerance: float
    checked: int
    worst: tuple[int, int] = (-1, -1)  # (input index, flat element index)
    kinks: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-4)


def _project(out: Tensor, weights: np.ndarray | None) -> float:
    d = out.data.astype(np.float64)
    return float(d.sum()) if weights is None else float((d * weights).sum())


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[Tensor], epsilon: float = 1e-3,
               tolerance: float = 1e-2, max_elements: int | None = None, seed: int = 0,
               dtype=np.float32) -> GradCheckReport:
    """Compare backprop gradients of ``fn(*inputs)`` against central differences.

    Scalar outputs are used as the loss directly. Non-scalar outputs are
    reduced with a fixed random projection, evaluated in float64 so that the
    reduction itself adds no rounding noise. Relative error per element is
    ``|a - n| / max(|a|, |n|, 1e-4)``. Where the forward and backward
    one-sided slopes disagree (a ReLU or max kink lies inside the stencil),
    the element is counted as a kink and judged against the one-sided slope. With ``max_elements`` set, a seeded
    random subset of each input's elements is checked. ``dtype`` selects the
    arithmetic for both passes; the default is the engine's float32.
    """
    saved = [t.data for t in inputs]
    for t in inputs:
        t.data = t.data.astype(dtype)
    try:
        with precision(dtype):
            return _grad_check(fn, inputs, epsilon, tolerance, max_elements, seed)
    finally:
        for t, d in zip(inputs, saved):
            t.data = d
            t.grad = None


def _grad_check(fn, inputs, epsilon, tolerance, max_elements, seed):
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    rng = np.random.default_rng(seed)
    for t in inputs:
        t.grad = None
        t.requires_grad = True

    out = fn(*inputs)
    weights = None
    if out.data.size != 1:
        weights = rng.uniform(-1.0, 1.0, size=out.shape)
        out.backward(weights)
    else:
        out.backward()

    per_input, checked, worst, worst_err, kinks = [], 0, (-1, -1), 0.0, 0
    for k, t in enumerate(inputs):
        analytic = np.zeros(t.data.size) if t.grad is None else t.grad.astype(np.float64).ravel()
        if not np.all(np.isfinite(analytic)):
            raise GradCheckError(f"non-finite analytic gradient for input {k}")
        idx = np.arange(t.data.size)
        if max_elements is not None and idx.size > max_elements:
            idx = np.sort(rng.choice(idx.size, size=max_elements, replace=False))
        flat = t.data.reshape(-1)
        err_k = 0.0
        with no_grad():
            f_mid = _project(fn(*inputs), weights)
            for i in idx:
                orig = flat[i]
                flat[i] = orig + epsilon
                hi_x = float(flat[i])
                f_hi = _project(fn(*inputs), weights)
                flat[i] = orig - epsilon
                lo_x = float(flat[i])
                f_lo = _project(fn(*inputs), weights)
                flat[i] = orig
                numeric = (f_hi - f_lo) / (hi_x - lo_x)
                if not np.isfinite(numeric):
                    raise GradCheckError(f"non-finite numeric gradient for input {k}, element {i}")
                a = analytic[i]
                rel = _rel(a, numeric)
                if rel > tolerance:
                    # a kink inside the stencil shows up as disagreeing one-sided slopes;
                    # the analytic gradient must then match the kink-free side
                    fwd = (f_hi - f_mid) / (hi_x - float(orig))
                    bwd = (f_mid - f_lo) / (float(orig) - lo_x)
                    if _rel(fwd, bwd) > tolerance:
                        kinks += 1
                        rel = min(_rel(a, fwd), _rel(a, bwd))
                if rel > err_k:
                    err_k = rel
                if rel > worst_err:
                    worst_err, worst = rel, (k, int(i))
        per_input.append(err_k)
        checked += idx.size
    return GradCheckReport(max(per_input, default=0.0), per_input, tolerance, checked, worst, kinks)
