"""Parameter-holding layers on top of the tensor ops."""
from __future__ import annotations

import numpy as np

from .tensor import ConvSpec, Tensor, conv2d, fully_connected, he_normal, parameter


class Module:
    """Named-parameter container; children are discovered from attributes."""

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                out[name] = val
            elif isinstance(val, Module):
                out.update(val.named_parameters(name + "."))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{name}.{i}."))
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True):
        params = self.named_parameters()
        missing = set(params) - set(state)
        if strict and missing:
            raise KeyError(f"missing weights: {sorted(missing)[:5]}")
        for k, t in params.items():
            if k in state:
                if tuple(state[k].shape) != t.shape:
                    raise ValueError(f"{k}: stored dims {state[k].shape} != {t.shape}")
                t.data = np.require(state[k], dtype=t.data.dtype, requirements="C")


class Conv(Module):
    def __init__(self, spec: ConvSpec, rng: np.random.Generator, bias: bool = True, std: float | None = None):
        self.spec = spec
        fan_in = spec.in_channels // spec.groups * spec.kernel_h * spec.kernel_w
        w = he_normal(rng, spec.weight_dims, fan_in) if std is None else \
            (rng.standard_normal(spec.weight_dims) * std).astype(np.float32)
        self.weight = parameter(w)
        self.bias = parameter(np.zeros(spec.out_channels, np.float32)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.spec)

    def macs(self, h: int, w: int) -> tuple[int, int, int]:
        """(MACs, output height, output width) at an input of ``h`` x ``w``."""
        s = self.spec
        ho, wo = s.output_hw(h, w)
        return s.out_channels * (s.in_channels // s.groups) * s.kernel_h * s.kernel_w * ho * wo, ho, wo

    def num_params(self) -> int:
        return self.weight.data.size + (self.bias.data.size if self.bias is not None else 0)


def conv(cin, cout, k, rng, stride=1, groups=1, bias=True, kh=None, kw=None, std=None) -> Conv:
    kh = k if kh is None else kh
    kw = k if kw is None else kw
    spec = ConvSpec(cin, cout, kh, kw, stride=stride, pad_h=(kh - 1) // 2, pad_w=(kw - 1) // 2, groups=groups)
    return Conv(spec, rng, bias=bias, std=std)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, std: float | None = None):
        w = he_normal(rng, (d_in, d_out), d_in) if std is None else \
            (rng.standard_normal((d_in, d_out)) * std).astype(np.float32)
        self.weight = parameter(w)
        self.bias = parameter(np.zeros(d_out, np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return fully_connected(x, self.weight, self.bias)

    def num_params(self) -> int:
        return self.weight.data.size + self.bias.data.size
