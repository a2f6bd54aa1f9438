"""Itemized cost accounting shared by the backbone, thin-map and head models."""
from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class CostLine:
    name: str
    macs: int
    params: int = 0
    activations: int = 0  # values in the tensor this line produces
    channels: int = 0
    kind: str = "map"  # "map" for NCHW feature maps, "vector" for per-RoI features


@dataclass
class CostReport:
    """MACs (1 MAC = 1 FLOP), parameters and peak activation values."""

    lines: list[CostLine] = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    def add(self, name, macs, params=0, activations=0, channels=0, kind="map") -> "CostReport":
        self.lines.append(CostLine(name, int(macs), int(params), int(activations), int(channels), kind))
        return self

    def extend(self, other: "CostReport", prefix: str = "") -> "CostReport":
        for ln in other.lines:
            self.lines.append(CostLine(prefix + ln.name, ln.macs, ln.params, ln.activations, ln.channels, ln.kind))
        return self

    @property
    def macs(self) -> int:
        return sum(ln.macs for ln in self.lines)

    @property
    def params(self) -> int:
        return sum(ln.params for ln in self.lines)

    @property
    def peak_activation_values(self) -> int:
        return max((ln.activations for ln in self.lines), default=0)

    def line(self, name: str) -> CostLine:
        for ln in self.lines:
            if ln.name == name:
                return ln
        raise KeyError(name)

    def format(self, title: str = "") -> str:
        rows = [title] if title else []
        rows.append(f"{'layer':<40} {'macs':>16} {'params':>12} {'activations':>12}")
        for ln in self.lines:
            rows.append(f"{ln.name:<40} {ln.macs:>16,} {ln.params:>12,} {ln.activations:>12,}")
        rows.append(f"{'TOTAL':<40} {self.macs:>16,} {self.params:>12,} {self.peak_activation_values:>12,}")
        return "\n".join(rows)

    def key_values(self, prefix: str = "") -> list[str]:
        kv = [f"#= {prefix}macs={self.macs}", f"#= {prefix}params={self.params}",
              f"#= {prefix}peak_activation_values={self.peak_activation_values}"]
        kv += [f"#= {prefix}{k}={v}" for k, v in self.extras.items()]
        return kv
