import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from spage.numerics import (NEG_INF, NumericError, Tensor, as_tensor, concat, custom_op, grad_check,
                            index_add, layer_norm, leaky_relu, linear, log_softmax, matmul,
                            max_, no_grad, parameter, relative_error, segment_softmax, sigmoid,
                            softmax, stack, tanh)

finite = st.floats(-20, 20, allow_nan=False)


# -- softmax ---------------------------------------------------------------------

def test_softmax_examples():
    np.testing.assert_array_equal(softmax(np.array([0.0, 0.0])).data, [0.5, 0.5])
    np.testing.assert_array_equal(softmax(np.array([0.0, NEG_INF])).data, [1.0, 0.0])
    np.testing.assert_allclose(softmax(np.array([1.0, 2.0, 3.0])).data,
                               [0.09003057, 0.24472847, 0.66524096], atol=1e-8)


def test_softmax_fully_masked_row():
    with pytest.raises(ValueError, match="fully masked row"):
        softmax(np.array([[0.0, 1.0], [2.0, 3.0]]), mask=np.array([[0.0, 0.0], [NEG_INF, NEG_INF]]))


def test_softmax_mask_gives_exact_zeros():
    out = softmax(np.array([[3.0, 1.0, 2.0]]), mask=np.array([[0.0, NEG_INF, 0.0]])).data
    assert out[0, 1] == 0.0
    assert out[0].sum() == pytest.approx(1.0, abs=1e-15)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(1, 8), elements=finite), st.randoms(use_true_random=False))
def test_softmax_permutation_equivariant(x, rnd):
    perm = list(range(len(x)))
    rnd.shuffle(perm)
    np.testing.assert_allclose(softmax(x[perm]).data, softmax(x).data[perm], rtol=0, atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(1, 8), elements=finite), st.floats(-50, 50))
def test_softmax_shift_invariant_and_normalised(x, c):
    p = softmax(x).data
    assert p.sum() == pytest.approx(1.0, abs=1e-12)
    assert (p >= 0).all()
    np.testing.assert_allclose(softmax(x + c).data, p, atol=1e-12)


def test_log_softmax_matches_log_of_softmax():
    x = np.array([[0.3, -1.2, 2.5], [10.0, 10.0, -3.0]])
    np.testing.assert_allclose(log_softmax(x).data, np.log(softmax(x).data), atol=1e-14)


def test_segment_softmax_groups():
    out = segment_softmax(np.array([1.0, 2.0, 5.0, 0.0]), np.array([0, 0, 1, 2]), 3).data
    np.testing.assert_allclose(out, [0.26894142, 0.73105858, 1.0, 1.0], atol=1e-8)


# -- layer norm / linear ---------------------------------------------------------

def test_layer_norm_examples():
    ones, zeros = np.ones(3), np.zeros(3)
    np.testing.assert_array_equal(layer_norm(np.full(3, 7.0), ones, zeros).data, zeros)
    np.testing.assert_allclose(layer_norm(np.array([1.0, -1.0]), np.ones(2), np.zeros(2), eps=0.0).data,
                               [1.0, -1.0], atol=1e-15)
    out = layer_norm(np.array([0.0, 2.0]), np.array([2.0, 2.0]), np.array([1.0, 1.0]), eps=1e-5).data
    expected = 1.0 + 2.0 * np.array([-1.0, 1.0]) / np.sqrt(1.0 + 1e-5)
    np.testing.assert_allclose(out, expected, atol=1e-15)
    np.testing.assert_allclose(out, [-1.0, 3.0], atol=1e-5)


def test_layer_norm_errors():
    with pytest.raises(ValueError, match="nonempty"):
        layer_norm(np.zeros((2, 0)), np.zeros(0), np.zeros(0))
    with pytest.raises(ValueError, match="do not match"):
        layer_norm(np.zeros(3), np.ones(2), np.zeros(3))


def test_linear_examples():
    x = np.array([1.0, 2.0])
    np.testing.assert_array_equal(linear(x, np.eye(2)).data, x)
    np.testing.assert_array_equal(linear(x, np.zeros((2, 3)), np.array([1.0, 2.0, 3.0])).data, [1, 2, 3])
    np.testing.assert_array_equal(linear(x, np.array([[1.0, 0.0], [0.0, 3.0]])).data, [1.0, 6.0])


def test_linear_shape_error_names_both_shapes():
    with pytest.raises(ValueError, match=r"\(2,\).*\(3, 4\)"):
        linear(np.zeros(2), np.zeros((3, 4)))


# -- autodiff ----------------------------------------------------------------------

def test_grad_check_quadratic():
    p = parameter(np.array([0.3, -1.7, 2.2, 0.0]))
    report = grad_check(lambda: (p * p).sum() * 0.5, {"p": p}, eps=1e-5)
    assert report.ok and report.errors["p"] < 1e-6
    loss = (p * p).sum() * 0.5
    loss.backward()
    np.testing.assert_allclose(p.grad, p.data, atol=1e-15)


def test_grad_check_constant_loss():
    p = parameter(np.array([1.0, 2.0]))
    report = grad_check(lambda: Tensor(np.array(3.0)), {"p": p})
    assert report.ok and report.errors["p"] == 0.0


def test_grad_check_rejects_non_finite_loss():
    p = parameter(np.array([1.0]))
    with pytest.raises(NumericError):
        grad_check(lambda: (p * np.inf).sum(), {"p": p})


def test_grad_check_detects_wrong_gradient():
    p = parameter(np.array([1.0, 2.0]))

    def bad():
        return custom_op(np.array(float((p.data ** 2).sum())), (p,), lambda g: (g * p.data,))

    assert not grad_check(bad, {"p": p}).ok


def test_relative_error_floor():
    assert relative_error(np.array([0.0]), np.array([1e-12]))[0] == pytest.approx(1e-4)


def test_op_gradients():
    rng = np.random.default_rng(0)
    a = parameter(rng.normal(size=(3, 4)))
    b = parameter(rng.normal(size=(4, 2)))
    gain, bias = parameter(rng.normal(size=4)), parameter(rng.normal(size=4))
    mask = np.where(rng.random((3, 4)) < 0.3, NEG_INF, 0.0)
    mask[:, 0] = 0.0

    def loss():
        x = layer_norm(tanh(a), gain, bias)
        y = softmax(x, mask=mask) * sigmoid(a)
        z = matmul(leaky_relu(y - 0.1), b)
        w = concat([z, log_softmax(z)], axis=-1)
        s = stack([w, w * w]).sum(axis=0)
        m = max_(s, axis=1) + index_add(3, np.array([2, 0, 2]), s[np.array([0, 1, 2])]).sum(axis=1)
        return (m * m).sum() + segment_softmax(a.reshape(-1), np.arange(12) % 5, 5).sum()

    report = grad_check(loss, {"a": a, "b": b, "gain": gain, "bias": bias})
    assert report.ok, report.errors


def test_no_grad_builds_no_graph():
    p = parameter(np.ones(2))
    with no_grad():
        out = p * 2.0
    assert not out.requires_grad


def test_numpy_left_operand_keeps_graph():
    p = parameter(np.ones(2))
    out = np.array([2.0, 3.0]) * p
    assert isinstance(out, Tensor)
    out.sum().backward()
    np.testing.assert_array_equal(p.grad, [2.0, 3.0])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 5)), elements=finite))
def test_ops_keep_finite(x):
    t = as_tensor(x)
    for out in (softmax(t), log_softmax(t), sigmoid(t), tanh(t),
                layer_norm(t, np.ones(x.shape[1]), np.zeros(x.shape[1]))):
        assert np.isfinite(out.data).all()
