import numpy as np
import pytest

from lighthead.checks import SUITES, run_suite
from lighthead.gradcheck import grad_check
from lighthead.tensor import Tensor, make_op, relu, sum_all


@pytest.mark.parametrize("name", list(SUITES))
def test_gradient_suite(name):
    res = run_suite(name)
    assert len(res.reports) >= 3
    assert res.passed, f"{name}: max relative error {res.max_rel_error:.3e}"


def test_detects_a_wrong_gradient():
    def bad_square(x):
        return make_op(x.data ** 2, (x,), lambda g: (g * 3 * x.data,))

    x = Tensor(np.array([0.5, -1.0, 2.0]), requires_grad=True)
    rep = grad_check(bad_square, [x], epsilon=1e-6, dtype=np.float64)
    assert not rep.passed


def test_relu_kink_is_judged_one_sided():
    x = Tensor(np.array([1e-7, -1e-7, 0.3]), requires_grad=True)
    rep = grad_check(lambda t: sum_all(relu(t)), [x], epsilon=1e-6, dtype=np.float64)
    assert rep.passed and rep.kinks >= 1


def test_inputs_restored_after_check():
    arr = np.array([[1.0, 2.0]], dtype=np.float32)
    x = Tensor(arr.copy(), requires_grad=True)
    grad_check(lambda t: sum_all(relu(t)), [x], dtype=np.float64)
    assert x.data.dtype == np.float32
    np.testing.assert_array_equal(x.data, arr)
