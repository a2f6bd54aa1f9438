import numpy as np
import pytest
from hypothesis import given, strategies as st

from lighthead.config import LargeSepConvSpec
from lighthead.cost import VARIANTS, HeadDesign, coco_design, compare_designs, head_cost
from lighthead.thinmap import sep_conv_flops


def test_map_channels():
    assert coco_design("rfcn_scoremap").map_channels == 3969
    assert coco_design("light_head").map_channels == 490
    assert 3969 / 490 == pytest.approx(8.1, abs=0.01)


def test_map_memory_ratio_is_exact():
    light = head_cost(coco_design("light_head")).extras["map_activation_values"]
    rfcn = head_cost(coco_design("rfcn_scoremap")).extras["map_activation_values"]
    assert light * 81 == rfcn * 10


def test_light_head_fc_closed_form():
    rep = head_cost(coco_design("light_head", rois=1))
    assert rep.extras["per_roi_fc_macs"] == 490 * 2048 + 2048 * 81 + 2048 * 4 == 1_177_600
    # pooling adds one MAC-equivalent per bilinear sample
    assert rep.extras["per_roi_macs"] == 1_177_600 + 490 * 4


@pytest.mark.parametrize("variant", VARIANTS)
def test_zero_rois_has_no_per_roi_cost(variant):
    rep = head_cost(coco_design(variant, rois=0))
    assert all(ln.macs == 0 for ln in rep.lines if ln.name.startswith("roi."))
    assert rep.macs == rep.extras["map_macs"]


def test_total_is_sum_of_lines():
    for v in VARIANTS:
        rep = head_cost(coco_design(v))
        assert rep.macs == sum(ln.macs for ln in rep.lines)
        assert rep.params == sum(ln.params for ln in rep.lines)
        assert all(ln.macs >= 0 and ln.params >= 0 and ln.activations >= 0 for ln in rep.lines)


def test_separable_generator_single_source():
    d = coco_design("light_head")
    rep = head_cost(d)
    ref = sep_conv_flops(LargeSepConvSpec(k=d.k, c_in=d.c_in, c_mid=d.c_mid, c_out=490), d.h, d.w)
    assert [ln.macs for ln in rep.lines if ln.name.startswith("map.")] == [ln.macs for ln in ref.lines]


def test_light_cheaper_than_rfcn_at_1000():
    assert head_cost(coco_design("light_head")).macs < head_cost(coco_design("rfcn_scoremap")).macs


def test_slopes_on_emitted_table():
    comp = compare_designs([coco_design(v) for v in VARIANTS], [0, 100, 500, 1000, 2000])
    for name in VARIANTS:
        rows = [r for r in comp.rows if r["design"] == name]
        assert len({r["map_macs"] for r in rows}) == 1  # R-independent
        slopes = {r["roi_macs"] / r["rois"] for r in rows if r["rois"]}
        assert len(slopes) == 1 and rows[0]["roi_macs"] == 0  # exactly linear through the origin
    faster = comp.curve("faster_rcnn_2fc", "roi_macs")
    rfcn = comp.curve("rfcn_scoremap", "roi_macs")
    assert faster[-1][1] / 2000 > 100 * rfcn[-1][1] / 2000


def test_identical_designs_identical_curves():
    d = coco_design("light_head")
    comp = compare_designs([d, d], [0, 10, 1000])
    names = sorted({r["design"] for r in comp.rows})
    assert comp.curve(names[0]) == comp.curve(names[1])
    assert comp.crossovers == {}


def test_crossover_location():
    comp = compare_designs([coco_design("faster_rcnn_2fc"), coco_design("rfcn_scoremap")], [0])
    (heavy_roi, heavy_map), x = next(iter(comp.crossovers.items()))
    assert (heavy_roi, heavy_map) == ("faster_rcnn_2fc", "rfcn_scoremap")
    lo, hi = int(np.floor(x)), int(np.ceil(x)) + 1
    f = lambda v, r: head_cost(coco_design(v, rois=r)).macs
    assert f("faster_rcnn_2fc", lo) <= f("rfcn_scoremap", lo)
    assert f("faster_rcnn_2fc", hi) > f("rfcn_scoremap", hi)


def test_compare_needs_two():
    with pytest.raises(ValueError):
        compare_designs([coco_design("light_head")], [1])
    with pytest.raises(ValueError):
        HeadDesign(variant="mask")


@given(st.sampled_from(VARIANTS), st.sampled_from(["rois", "num_classes", "h", "w"]), st.integers(1, 400),
       st.integers(1, 50))
def test_monotone(variant, field, base, step):
    a = head_cost(coco_design(variant, **{field: base})).macs
    b = head_cost(coco_design(variant, **{field: base + step})).macs
    assert b >= a
