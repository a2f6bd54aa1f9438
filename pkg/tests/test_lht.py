import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from lighthead import lht


@given(arrays(np.float32, array_shapes(min_dims=0, max_dims=4, min_side=0, max_side=5),
              elements=st.floats(-1e6, 1e6, width=32)))
def test_roundtrip(arr):
    out = lht.decode(lht.encode(arr))
    assert out.shape == arr.shape and out.dtype == np.float32
    np.testing.assert_array_equal(out, arr)


def test_header_layout():
    buf = lht.encode(np.zeros((2, 3), np.float32))
    assert buf[:4] == b"LHT1"
    assert buf[4:8] == (2).to_bytes(4, "little")
    assert len(buf) == 8 + 8 + 24


@pytest.mark.parametrize("buf", [b"", b"LHT2\x00\x00\x00\x00", lht.encode(np.ones(3))[:-1]])
def test_rejects_malformed(buf):
    with pytest.raises(lht.FormatError):
        lht.decode(buf)


def test_weight_directory_roundtrip(tmp_path):
    params = {"backbone.conv1.weight": np.arange(6, dtype=np.float32).reshape(1, 1, 2, 3), "head.fc.bias": np.ones(4)}
    lht.save_weights(tmp_path, params)
    assert (tmp_path / "manifest.txt").exists()
    back = lht.load_weights(tmp_path)
    assert set(back) == set(params)
    for k in params:
        np.testing.assert_array_equal(back[k], params[k])
