"""Thin feature maps via the large separable convolution block.

Two branches, each a ``k x 1`` then ``1 x k`` pair (the second branch in the
opposite order), squeeze ``C_in`` through ``C_mid`` and emit ``C_out``
channels, summed elementwise. There is no nonlinearity between the halves of
a branch. ``single_branch`` keeps only the ``k x 1 -> 1 x k`` branch.
"""
from __future__ import annotations

import numpy as np

from .config import ConfigError, LargeSepConvSpec
from .layers import Module, conv
from .report import CostReport
from .tensor import Tensor, add


class LargeSeparableConv(Module):
    def __init__(self, spec: LargeSepConvSpec, rng: np.random.Generator):
        if spec.k % 2 == 0:
            raise ConfigError(f"large separable conv needs an odd kernel, got k={spec.k}")
        self.spec = spec
        k, b = spec.k, spec.bias
        self.a_col = conv(spec.c_in, spec.c_mid, 0, rng, kh=k, kw=1, bias=b)
        self.a_row = conv(spec.c_mid, spec.c_out, 0, rng, kh=1, kw=k, bias=b)
        if not spec.single_branch:
            self.b_row = conv(spec.c_in, spec.c_mid, 0, rng, kh=1, kw=k, bias=b)
            self.b_col = conv(spec.c_mid, spec.c_out, 0, rng, kh=k, kw=1, bias=b)

    def __call__(self, x: Tensor) -> Tensor:
        out = self.a_row(self.a_col(x))
        if self.spec.single_branch:
            return out
        return add(out, self.b_col(self.b_row(x)))

    def cost(self, h: int, w: int) -> CostReport:
        return sep_conv_flops(self.spec, h, w)


def large_separable_conv(x: Tensor, block: LargeSeparableConv) -> Tensor:
    return block(x)


def sep_conv_flops(spec: LargeSepConvSpec, h: int, w: int) -> CostReport:
    """Itemized MACs of the block on an ``h x w`` map, with the dense k x k
    alternative reported in ``extras`` for comparison."""
    k, ci, cm, co = spec.k, spec.c_in, spec.c_mid, spec.c_out
    hw = h * w
    branches = [("a", "kx1", "1xk")] if spec.single_branch else [("a", "kx1", "1xk"), ("b", "1xk", "kx1")]
    rep = CostReport()
    bias = 1 if spec.bias else 0
    for name, first, second in branches:
        rep.add(f"thin.{name}.{first}", k * ci * cm * hw, k * ci * cm + bias * cm, cm * hw, cm)
        rep.add(f"thin.{name}.{second}", k * cm * co * hw, k * cm * co + bias * co, co * hw, co)
    dense = k * k * ci * co * hw
    rep.extras.update(dense_kxk_macs=dense, per_position_macs=rep.macs // hw if hw else 0)
    return rep


def separable_is_cheaper(spec: LargeSepConvSpec) -> bool:
    """Closed form of sep < dense: ``branches * C_mid * (C_in + C_out) < k * C_in * C_out``."""
    branches = 1 if spec.single_branch else 2
    return branches * spec.c_mid * (spec.c_in + spec.c_out) < spec.k * spec.c_in * spec.c_out
