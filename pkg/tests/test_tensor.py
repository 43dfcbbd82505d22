import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from selfsr.gradcheck import check_gradients
from selfsr.ops import conv2d
from selfsr.tensor import NonFiniteError, ShapeError, Tensor, concat, is_grad_enabled, no_grad


def leaf(v):
    return Tensor(np.asarray(v, dtype=np.float64), requires_grad=True)


def test_relu_example():
    assert Tensor([-1.0, 0.0, 2.0]).relu().numpy().tolist() == [0.0, 0.0, 2.0]


def test_add_zero_is_identity():
    x = np.random.default_rng(0).standard_normal((2, 3))
    out = Tensor(x) + Tensor(np.zeros_like(x))
    assert np.array_equal(out.numpy(), x)


def test_grad_of_mean_square():
    x = leaf([1.0, 2.0])
    (x * x).mean().backward()
    np.testing.assert_allclose(x.grad, [1.0, 2.0])


def test_backward_mean_is_one_over_n():
    x = leaf(np.ones((3, 4)))
    x.mean().backward()
    np.testing.assert_allclose(x.grad, np.full((3, 4), 1 / 12))


def test_two_backward_passes_accumulate():
    x = leaf([0.5, -1.5, 2.0])
    (x * 3.0).sum().backward()
    first = x.grad.copy()
    (x * 3.0).sum().backward()
    np.testing.assert_allclose(x.grad, 2 * first)


def test_shared_subexpression_visited_once():
    # y is used twice; a naive recursive backward would double count its parents
    x = leaf([2.0])
    y = x * x
    z = y + y
    z.sum().backward()
    np.testing.assert_allclose(x.grad, [8.0])


def test_composite_conv_relu_mean_fd():
    rng = np.random.default_rng(3)
    x = rng.uniform(-1, 1, (1, 2, 6, 6))
    w = rng.uniform(-1, 1, (3, 2, 3, 3))
    b = rng.uniform(-1, 1, 3)
    err = check_gradients(lambda x, w, b: conv2d(x, w, b, 1, 1).relu().mean(), [x, w, b])
    assert err <= 1e-4


def test_deep_chain_does_not_recurse():
    x = leaf([1.0])
    y = x
    for _ in range(5000):
        y = y * 1.0
    y.sum().backward()
    assert x.grad[0] == 1.0


def test_scalar_on_left():
    x = leaf([0.25, 0.75])
    (1.0 - x).sum().backward()
    np.testing.assert_allclose(x.grad, [-1.0, -1.0])


def test_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        Tensor(np.zeros((2, 3))) + Tensor(np.zeros((3, 2)))


def test_log_of_nonpositive_raises():
    with pytest.raises((NonFiniteError, ValueError)):
        Tensor([0.0, 1.0]).log()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_result_raises():
    with pytest.raises(NonFiniteError):
        Tensor([1e308]) * 1e10


def test_no_grad_records_nothing():
    x = leaf([1.0, 2.0])
    with no_grad():
        assert not is_grad_enabled()
        y = (x * x).sum()
    assert is_grad_enabled()
    assert not y.requires_grad


def test_concat_splits_gradient():
    a, b = leaf(np.ones((1, 1, 2, 2))), leaf(np.ones((1, 2, 2, 2)))
    c = concat([a, b], axis=1)
    (c * Tensor(np.arange(12.0).reshape(1, 3, 2, 2))).sum().backward()
    np.testing.assert_allclose(a.grad.ravel(), [0, 1, 2, 3])
    np.testing.assert_allclose(b.grad.ravel(), np.arange(4, 12))


def test_grad_dims_match_value():
    x = leaf(np.ones((2, 3, 4)))
    x.mean(axis=(1, 2)).sum().backward()
    assert x.grad.shape == x.shape


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.integers(1, 6), elements=st.floats(-5, 5)))
def test_sigmoid_range_and_determinism(a):
    s1 = Tensor(a).sigmoid().numpy()
    s2 = Tensor(a).sigmoid().numpy()
    assert np.array_equal(s1, s2)
    assert np.all((s1 > 0) & (s1 < 1))
