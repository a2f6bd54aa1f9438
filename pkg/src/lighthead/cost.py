"""Analytic head-cost model for three head designs.

Conventions: one multiply-accumulate counts as one FLOP; RoI pooling costs
one MAC-equivalent per bilinear sample (``samples_per_bin`` per output
value); parameters are counted once, per-RoI MACs are multiplied by R.
Each report itemizes (a) map generation before warping, (b) per-RoI work
after warping and (c) activation values of the maps and warped features.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .config import LargeSepConvSpec
from .report import CostReport
from .thinmap import sep_conv_flops

VARIANTS = ("faster_rcnn_2fc", "rfcn_scoremap", "light_head")


@dataclass(frozen=True)
class HeadDesign:
    variant: str = "light_head"
    num_classes: int = 80          # foreground classes; score maps add background
    p: int = 7
    alpha: int = 10
    k: int = 15
    c_mid: int = 64
    c_in: int = 1024
    h: int = 50
    w: int = 75
    rois: int = 1000
    fc_width: int = 2048           # light head FC
    fc2_width: int = 1024          # faster_rcnn_2fc hidden widths
    samples_per_bin: int = 4

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown head variant {self.variant!r}")

    @property
    def map_channels(self) -> int:
        if self.variant == "rfcn_scoremap":
            return (self.num_classes + 1) * self.p * self.p
        if self.variant == "light_head":
            return self.alpha * self.p * self.p
        return self.c_in

    def with_rois(self, r: int) -> "HeadDesign":
        return dataclasses.replace(self, rois=r)


def coco_design(variant: str, **kw) -> HeadDesign:
    """800x1200 input at stride 16 (50x75 map), 80 classes, R=1000, on a
    1024-channel shared feature."""
    return HeadDesign(variant=variant, **kw)


def _per_roi(d: HeadDesign) -> CostReport:
    rep = CostReport()
    k1 = d.num_classes + 1
    pp = d.p * d.p
    if d.variant == "light_head":
        f = d.alpha * pp
        rep.add("pool.psroi_align", f * d.samples_per_bin, 0, f, d.alpha)
        rep.add("fc", f * d.fc_width, f * d.fc_width + d.fc_width, d.fc_width, kind="vector")
        rep.add("fc.cls", d.fc_width * k1, d.fc_width * k1 + k1, k1, kind="vector")
        rep.add("fc.reg", d.fc_width * 4, d.fc_width * 4 + 4, 4, kind="vector")
    elif d.variant == "rfcn_scoremap":
        rep.add("pool.psroi.cls", k1 * pp * d.samples_per_bin, 0, k1 * pp, k1)
        rep.add("pool.psroi.reg", 4 * pp * d.samples_per_bin, 0, 4 * pp, 4)
        rep.add("vote", (k1 + 4) * pp, 0, k1 + 4, kind="vector")
    else:
        f = d.c_in * pp
        w, k4 = d.fc2_width, 4 * k1
        rep.add("pool.roi_align", f * d.samples_per_bin, 0, f, d.c_in)
        rep.add("fc1", f * w, f * w + w, w, kind="vector")
        rep.add("fc2", w * w, w * w + w, w, kind="vector")
        rep.add("fc.cls", w * k1, w * k1 + k1, k1, kind="vector")
        rep.add("fc.reg", w * k4, w * k4 + k4, k4, kind="vector")
    return rep


def _map_generation(d: HeadDesign) -> CostReport:
    hw = d.h * d.w
    if d.variant == "light_head":
        spec = LargeSepConvSpec(k=d.k, c_in=d.c_in, c_mid=d.c_mid, c_out=d.alpha * d.p * d.p)
        return sep_conv_flops(spec, d.h, d.w)
    rep = CostReport()
    if d.variant == "rfcn_scoremap":
        c_cls = (d.num_classes + 1) * d.p * d.p
        c_reg = 4 * d.p * d.p
        rep.add("rfcn.cls_map", d.c_in * c_cls * hw, d.c_in * c_cls + c_cls, c_cls * hw, c_cls)
        rep.add("rfcn.reg_map", d.c_in * c_reg * hw, d.c_in * c_reg + c_reg, c_reg * hw, c_reg)
    return rep


def head_cost(design: HeadDesign) -> CostReport:
    """Itemized cost: ``map.*`` lines once per image, ``roi.*`` lines scaled by R."""
    rep = CostReport()
    rep.extend(_map_generation(design), "map.")
    per = _per_roi(design)
    for ln in per.lines:
        rep.add("roi." + ln.name, ln.macs * design.rois, ln.params, ln.activations * design.rois,
                ln.channels, ln.kind)
    map_macs = sum(ln.macs for ln in rep.lines if ln.name.startswith("map."))
    rep.extras.update(variant=design.variant, rois=design.rois, map_channels=design.map_channels,
                      map_activation_values=design.map_channels * design.h * design.w,
                      map_macs=map_macs, per_roi_macs=per.macs,
                      per_roi_fc_macs=sum(ln.macs for ln in per.lines if ln.name.startswith("fc")),
                      warped_activation_values=sum(ln.activations for ln in rep.lines
                                                   if ln.name.startswith("roi.pool")))
    return rep


@dataclass
class Comparison:
    rows: list[dict] = field(default_factory=list)
    crossovers: dict = field(default_factory=dict)

    def curve(self, name: str, key: str = "total_macs") -> list[tuple[int, int]]:
        return [(r["rois"], r[key]) for r in self.rows if r["design"] == name]

    def format(self) -> str:
        out = [f"{'design':<18} {'R':>6} {'map_macs':>16} {'roi_macs':>16} {'total_macs':>16}"]
        for r in self.rows:
            out.append(f"{r['design']:<18} {r['rois']:>6} {r['map_macs']:>16,} {r['roi_macs']:>16,} {r['total_macs']:>16,}")
        for (a, b), x in self.crossovers.items():
            out.append(f"crossover {a} vs {b}: R* = {x}")
        return "\n".join(out)


def compare_designs(designs, r_values) -> Comparison:
    """Cost curves over RoI counts, plus the RoI count at which a design with
    heavier per-RoI work overtakes one with heavier map generation."""
    designs = list(designs)
    if len(designs) < 2:
        raise ValueError("need at least two designs")
    names = []
    for i, d in enumerate(designs):
        base = d.variant
        names.append(base if base not in names else f"{base}#{i}")
    comp = Comparison()
    summary = {}
    for name, d in zip(names, designs):
        base = head_cost(d.with_rois(0))
        per = base.extras["per_roi_macs"]
        summary[name] = (base.extras["map_macs"], per)
        for r in r_values:
            rep = head_cost(d.with_rois(r))
            comp.rows.append(dict(design=name, rois=r, map_macs=rep.extras["map_macs"],
                                  roi_macs=rep.macs - rep.extras["map_macs"], total_macs=rep.macs,
                                  peak_activation_values=rep.peak_activation_values))
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            (ma, qa), (mb, qb) = summary[a], summary[b]
            if qa == qb:
                continue
            heavy_roi, heavy_map = (a, b) if qa > qb else (b, a)
            (m_r, q_r), (m_m, q_m) = summary[heavy_roi], summary[heavy_map]
            x = (m_m - m_r) / (q_r - q_m)
            if x > 0:
                comp.crossovers[(heavy_roi, heavy_map)] = x
    return comp
