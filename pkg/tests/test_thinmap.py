import numpy as np
import pytest
from hypothesis import given, strategies as st

from lighthead.config import LargeSepConvSpec
from lighthead.tensor import ConvSpec, Tensor, conv2d, precision
from lighthead.thinmap import LargeSeparableConv, sep_conv_flops, separable_is_cheaper


def test_output_channels_and_same_size(rng):
    spec = LargeSepConvSpec(k=5, c_in=4, c_mid=3, c_out=490)
    block = LargeSeparableConv(spec, rng)
    out = block(Tensor(rng.standard_normal((1, 4, 6, 9))))
    assert out.shape == (1, 490, 6, 9)


def test_equals_sum_of_two_rank_limited_branches(rng):
    spec = LargeSepConvSpec(k=3, c_in=2, c_mid=2, c_out=3)
    with precision(np.float64):
        block = LargeSeparableConv(spec, rng)
        x = rng.standard_normal((1, 2, 5, 5))
        for b in (block.a_col.bias, block.a_row.bias, block.b_row.bias, block.b_col.bias):
            b.data[:] = 0
        # compose each branch as one dense k x k conv: W[o, i, u, v] = sum_m B[o, m, v] A[m, i, u]
        a_col, a_row = block.a_col.weight.data[..., 0], block.a_row.weight.data[:, :, 0, :]
        b_row, b_col = block.b_row.weight.data[:, :, 0, :], block.b_col.weight.data[..., 0]
        dense = np.einsum("omv,miu->oiuv", a_row, a_col) + np.einsum("omu,miv->oiuv", b_col, b_row)
        got = block(Tensor(x)).data
        want = conv2d(Tensor(x), Tensor(dense), None, ConvSpec(2, 3, 3, 3, pad_h=1, pad_w=1)).data
    np.testing.assert_allclose(got, want, atol=1e-10)


def test_single_branch_has_half_the_params(rng):
    two = LargeSeparableConv(LargeSepConvSpec(k=15, c_in=8, c_mid=4, c_out=490, bias=False), rng)
    one = LargeSeparableConv(LargeSepConvSpec(k=15, c_in=8, c_mid=4, c_out=490, bias=False, single_branch=True), rng)
    n2 = sum(p.data.size for p in two.named_parameters().values())
    n1 = sum(p.data.size for p in one.named_parameters().values())
    assert n2 == 2 * n1 == 2 * 15 * (8 * 4 + 4 * 490)


def test_flops_full_scale_setting():
    spec = LargeSepConvSpec()
    rep = sep_conv_flops(spec, 25, 38)
    hw = 25 * 38
    assert rep.macs == 2 * 15 * 64 * (576 + 490) * hw
    assert rep.extras["dense_kxk_macs"] == 15 * 15 * 576 * 490 * hw
    assert rep.macs < rep.extras["dense_kxk_macs"]


@given(st.sampled_from([1, 3, 5, 15]), st.integers(1, 2048), st.integers(1, 512), st.integers(1, 1024), st.booleans())
def test_cheaper_predicate_agrees_with_counts(k, c_in, c_mid, c_out, single):
    spec = LargeSepConvSpec(k=k, c_in=c_in, c_mid=c_mid, c_out=c_out, single_branch=single, bias=False)
    rep = sep_conv_flops(spec, 1, 1)
    assert separable_is_cheaper(spec) == (rep.macs < rep.extras["dense_kxk_macs"])
