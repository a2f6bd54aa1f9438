"""Xception-like small backbone (Setting S).

Conv1 3x3/2 -> MaxPool 3x3/2 -> three bottleneck stages. Every block is
1x1 reduce -> 3x3 channel-wise (carries the stride) -> 1x1 expand, added to
the shortcut, then ReLU. The first block of a stage uses a strided 1x1
projection shortcut, the rest are identity. Activations follow each conv
(post-activation), except the channel-wise conv which feeds the expand conv
directly. Without trainable batch norm, the expand conv starts at zero so
a freshly built network keeps activations bounded through the residual sums.

Stage outputs: stage 2 is stride 8, stage 3 (C4) stride 16, stage 4 (C5)
stride 32.
"""
from __future__ import annotations

import numpy as np

from .config import BackboneSpec
from .layers import Linear, Module, conv
from .report import CostReport
from .tensor import Tensor, add, global_avg_pool, max_pool2d, relu


class Bottleneck(Module):
    def __init__(self, cin: int, mid: int, cout: int, stride: int, rng: np.random.Generator):
        self.stride = stride
        self.reduce = conv(cin, mid, 1, rng)
        self.dw = conv(mid, mid, 3, rng, stride=stride, groups=mid)
        # zero-initialised last conv of the residual branch (folded BN gamma = 0)
        self.expand = conv(mid, cout, 1, rng, std=0.0)
        self.proj = conv(cin, cout, 1, rng, stride=stride) if (stride != 1 or cin != cout) else None

    def __call__(self, x: Tensor) -> Tensor:
        y = self.expand(self.dw(relu(self.reduce(x))))
        short = self.proj(x) if self.proj is not None else x
        return relu(add(y, short))


class Backbone(Module):
    def __init__(self, spec: BackboneSpec, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.spec = spec
        self.conv1 = conv(3, spec.conv1_channels, 3, rng, stride=2)
        stages = []
        cin = spec.conv1_channels
        n_stages = 3 if spec.use_c5 else 2
        for c, reps, mid in list(zip(spec.stage_channels, spec.stage_repeats, spec.mid_channels))[:n_stages]:
            blocks = [Bottleneck(cin, mid, c, 2, rng)] + [Bottleneck(c, mid, c, 1, rng) for _ in range(reps)]
            stages.append(blocks)
            cin = c
        self.stages = [_Stage(b) for b in stages]
        self.fc = Linear(spec.stage_channels[-1], 1000, rng) if spec.use_c5 else None

    def features(self, x: Tensor) -> dict[str, Tensor]:
        """Named intermediate maps: conv1, pool, stage2, c4 and (when enabled) c5."""
        out = {}
        x = relu(self.conv1(x))
        out["conv1"] = x
        x = max_pool2d(x, 3, 2, 1)
        out["pool"] = x
        for name, stage in zip(("stage2", "c4", "c5"), self.stages):
            x = stage(x)
            out[name] = x
        return out

    def classify(self, x: Tensor) -> Tensor:
        """ImageNet-style head: GAP + FC-1000 on the stage-4 output."""
        if self.fc is None:
            raise ValueError("classification head needs use_c5 = true")
        return self.fc(global_avg_pool(self.features(x)["c5"]))


class _Stage(Module):
    def __init__(self, blocks):
        self.blocks = blocks

    def __call__(self, x: Tensor) -> Tensor:
        for b in self.blocks:
            x = b(x)
        return x


def build_backbone(seed: int = 0, spec: BackboneSpec | None = None) -> Backbone:
    return Backbone(spec if spec is not None else BackboneSpec(), seed)


def _conv_out(h, k, s, pad):
    return (h + 2 * pad - k) // s + 1


def backbone_flops(input_h: int, input_w: int, spec: BackboneSpec | None = None,
                   classifier: bool = True) -> CostReport:
    """Analytic per-layer MAC count (bias, activation and pooling excluded).

    ``classifier`` adds the GAP + FC-1000 head; it only applies when stage 4
    is enabled.
    """
    spec = spec if spec is not None else BackboneSpec()
    rep = CostReport()
    h, w = input_h, input_w

    def layer(name, cin, cout, k, stride, groups=1, pad=None):
        nonlocal h, w
        pad = (k - 1) // 2 if pad is None else pad
        ho, wo = _conv_out(h, k, stride, pad), _conv_out(w, k, stride, pad)
        per_group_in = cin // groups if groups else 0
        macs = cout * per_group_in * k * k * ho * wo
        params = cout * per_group_in * k * k + cout
        rep.add(name, macs, params, cout * ho * wo, cout)
        return ho, wo

    h, w = layer("conv1", 3, spec.conv1_channels, 3, 2)
    h, w = _conv_out(h, 3, 2, 1), _conv_out(w, 3, 2, 1)
    rep.add("maxpool", 0, 0, spec.conv1_channels * h * w, spec.conv1_channels)
    cin = spec.conv1_channels
    n_stages = 3 if spec.use_c5 else 2
    for si, (c, reps, mid) in enumerate(list(zip(spec.stage_channels, spec.stage_repeats, spec.mid_channels))[:n_stages]):
        for bi in range(reps + 1):
            stride = 2 if bi == 0 else 1
            src = cin if bi == 0 else c
            tag = f"stage{si + 2}.{bi}"
            h0, w0 = h, w
            layer(f"{tag}.reduce", src, mid, 1, 1)
            h, w = layer(f"{tag}.dw", mid, mid, 3, stride, groups=mid)
            layer(f"{tag}.expand", mid, c, 1, 1)
            if stride != 1 or src != c:
                hh, ww = h, w
                h, w = h0, w0
                layer(f"{tag}.proj", src, c, 1, stride)
                h, w = hh, ww
        cin = c
    if classifier and spec.use_c5:
        c = spec.stage_channels[-1]
        rep.add("gap", 0, 0, c, c)
        rep.add("fc", c * 1000, c * 1000 + 1000, 1000, 1000)
    rep.extras.update(input=f"{input_h}x{input_w}", reference_macs=145_000_000,
                      convention="1 MAC = 1 FLOP; bias, BN, activation and pooling excluded")
    return rep
