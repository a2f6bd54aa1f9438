import numpy as np
import pytest
from hypothesis import given, strategies as st

from lighthead.tensor import (ConvSpec, ShapeError, Tensor, add, conv2d, default_dtype, fold_batch_norm,
                              fully_connected, global_avg_pool, max_pool2d, no_grad, precision, relu,
                              reshape, scale, sum_all)


def naive_conv(x, w, b, s: ConvSpec):
    n, c, h, wd = x.shape
    ho, wo = s.output_hw(h, wd)
    xp = np.pad(x, ((0, 0), (0, 0), (s.pad_h, s.pad_h), (s.pad_w, s.pad_w)))
    cin_g, cout_g = c // s.groups, s.out_channels // s.groups
    out = np.zeros((n, s.out_channels, ho, wo))
    for b_ in range(n):
        for o in range(s.out_channels):
            g = o // cout_g
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ci in range(cin_g):
                        for u in range(s.kernel_h):
                            for v in range(s.kernel_w):
                                acc += w[o, ci, u, v] * xp[b_, g * cin_g + ci, i * s.stride + u * s.dilation,
                                                           j * s.stride + v * s.dilation]
                    out[b_, o, i, j] = acc + (b[o] if b is not None else 0.0)
    return out


@given(st.integers(1, 2), st.integers(1, 3), st.integers(1, 3), st.sampled_from([1, 3]), st.integers(1, 2),
       st.integers(1, 2), st.booleans(), st.integers(0, 2 ** 31))
def test_conv2d_matches_loops(n, cin, mult, k, stride, dil, depthwise, seed):
    rng = np.random.default_rng(seed)
    groups = cin if depthwise else 1
    cout = cin * mult if depthwise else mult + 1
    pad = dil * (k - 1) // 2
    spec = ConvSpec(cin, cout, k, k, stride=stride, pad_h=pad, pad_w=pad, dilation=dil, groups=groups)
    x = rng.standard_normal((n, cin, 6, 7))
    w = rng.standard_normal(spec.weight_dims)
    b = rng.standard_normal(cout)
    with precision(np.float64):
        got = conv2d(Tensor(x), Tensor(w), Tensor(b), spec).data
    np.testing.assert_allclose(got, naive_conv(x, w, b, spec), rtol=1e-10, atol=1e-10)


def test_conv_spec_rejects_bad_groups():
    with pytest.raises(ValueError):
        ConvSpec(3, 4, 3, 3, groups=2)


def test_conv2d_shape_errors():
    spec = ConvSpec(3, 4, 3, 3, pad_h=1, pad_w=1)
    x = Tensor(np.zeros((1, 2, 5, 5)))
    w = Tensor(np.zeros(spec.weight_dims))
    with pytest.raises(ShapeError) as exc:
        conv2d(x, w, None, spec)
    assert exc.value.op == "conv2d"


def test_tensor_rank_limit():
    with pytest.raises(ShapeError):
        Tensor(np.zeros((1, 1, 1, 1, 1)))


def test_default_dtype_is_float32_and_precision_restores():
    assert default_dtype() is np.float32
    with precision(np.float64):
        assert Tensor([1.0]).data.dtype == np.float64
    assert Tensor([1.0]).data.dtype == np.float32


def test_fully_connected_and_backward():
    x = Tensor(np.array([[1.0, 2.0]]), requires_grad=True)
    w = Tensor(np.array([[1.0, 0.0, -1.0], [2.0, 1.0, 0.5]]), requires_grad=True)
    b = Tensor(np.array([0.5, 0.0, 0.0]), requires_grad=True)
    y = sum_all(fully_connected(x, w, b))
    assert y.item() == pytest.approx(5.5 + 2.0 + 0.0)
    y.backward()
    np.testing.assert_allclose(x.grad, [[0.0, 3.5]])
    np.testing.assert_allclose(w.grad, [[1, 1, 1], [2, 2, 2]])
    np.testing.assert_allclose(b.grad, [1, 1, 1])


def test_gradient_accumulates_over_shared_inputs():
    x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    y = sum_all(add(relu(x), scale(x, 2.0)))
    y.backward()
    np.testing.assert_allclose(x.grad, [3.0, 2.0, 3.0])


def test_no_grad_records_nothing():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with no_grad():
        y = relu(x)
    assert not y.requires_grad and y._parents == ()


def test_max_pool_matches_loops(rng):
    x = rng.standard_normal((1, 2, 7, 6)).astype(np.float32)
    got = max_pool2d(Tensor(x), 3, 2, 1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)), constant_values=-np.inf)
    want = np.array([[[[xp[0, c, 2 * i:2 * i + 3, 2 * j:2 * j + 3].max() for j in range(3)]
                       for i in range(4)] for c in range(2)]])
    np.testing.assert_array_equal(got, want)


def test_global_avg_pool_and_reshape(rng):
    x = rng.standard_normal((2, 3, 4, 4))
    with precision(np.float64):
        np.testing.assert_allclose(global_avg_pool(Tensor(x)).data, x.mean(axis=(2, 3)))
        assert reshape(Tensor(x), (2, 48)).shape == (2, 48)


def test_fold_batch_norm_equivalence(rng):
    spec = ConvSpec(3, 4, 3, 3, pad_h=1, pad_w=1)
    x = rng.standard_normal((1, 3, 5, 5))
    w, b = rng.standard_normal(spec.weight_dims), rng.standard_normal(4)
    mean, var = rng.standard_normal(4), rng.uniform(0.5, 2, 4)
    gamma, beta = rng.standard_normal(4), rng.standard_normal(4)
    with precision(np.float64):
        y = conv2d(Tensor(x), Tensor(w), Tensor(b), spec).data
        bn = gamma[None, :, None, None] * (y - mean[None, :, None, None]) / np.sqrt(var + 1e-5)[None, :, None, None] \
            + beta[None, :, None, None]
        w2, b2 = fold_batch_norm(w, b, mean, var, gamma, beta)
        np.testing.assert_allclose(conv2d(Tensor(x), Tensor(w2), Tensor(b2), spec).data, bn, atol=1e-9)


def test_fold_batch_norm_rejects_negative_variance():
    with pytest.raises(ValueError):
        fold_batch_norm(np.zeros((1, 1, 1, 1)), np.zeros(1), np.zeros(1), -np.ones(1), np.ones(1), np.zeros(1))
