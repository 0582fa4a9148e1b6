"""Tape, op, and gradient-oracle tests for the autodiff core."""

import numpy as np
import pytest

from motionground import autodiff as ad
from motionground.autodiff import Tensor
from motionground.gradcheck import finite_diff_check
from motionground.layers import MLP, ParamStore


def test_square_gradient():
    store = ParamStore()
    x = store.register("x", np.array(3.0))
    loss = ad.mul(x, x)
    ad.backward(loss)
    assert store.grad("x") == pytest.approx(6.0)


def test_softmax_uniform_logits_jacobian_rows_sum_zero():
    # gradient of each softmax output w.r.t. inputs sums to 0 (shift invariance)
    n = 5
    for j in range(n):
        x = Tensor(np.zeros(n), requires_grad=True)
        s = ad.softmax(x)
        ad.backward(ad.take_rows(s, [j]).sum())
        assert x.grad is not None
        assert abs(x.grad.sum()) < 1e-12


def test_two_layer_mlp_matches_central_differences():
    rng = np.random.RandomState(3)
    store = ParamStore()
    mlp = MLP(store, "m", [5, 7, 2], rng)
    inputs = Tensor(rng.standard_normal((5, 5)))
    target = rng.standard_normal((5, 2))

    def loss_fn():
        diff = ad.sub(mlp(inputs), target)
        return ad.mean(ad.mul(diff, diff))

    report = finite_diff_check(store, loss_fn, tolerance=1e-4, h=1e-5)
    assert report.passed, report.worst()


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ad.NumericsError, match="scalar"):
        ad.backward(ad.mul(x, 2.0))


def test_unreachable_parameter_keeps_zero_gradient():
    store = ParamStore()
    x = store.register("x", np.array(2.0))
    store.register("unused", np.array(5.0))
    ad.backward(ad.mul(x, x))
    assert store.grad("unused") == 0.0
    assert store.grad("x") == pytest.approx(4.0)


def test_nan_in_forward_is_an_error():
    x = Tensor(np.array([-1.0]), requires_grad=True)
    with pytest.raises(ad.NumericsError):
        ad.log(x)


def test_softmax_rows_sum_to_one_and_nonnegative():
    rng = np.random.RandomState(0)
    s = ad.softmax(Tensor(rng.standard_normal((20, 13)) * 5))
    assert np.all(s.data >= 0)
    assert np.max(np.abs(s.data.sum(axis=-1) - 1.0)) < 1e-12


def test_softmax_all_neg_inf_row_is_error():
    x = np.zeros((2, 3))
    x[1] = -np.inf
    with pytest.raises(ad.NumericsError):
        ad.softmax(Tensor(x))


def test_layer_norm_row_moments():
    rng = np.random.RandomState(1)
    out = ad.layer_norm(Tensor(rng.standard_normal((30, 64)) * 3 + 1)).data
    assert np.max(np.abs(out.mean(axis=-1))) < 1e-9
    assert np.max(np.abs(out.var(axis=-1) - 1.0)) < 1e-9


def test_broadcast_add_gradients():
    a = Tensor(np.ones((4, 3)), requires_grad=True)
    b = Tensor(np.ones(3), requires_grad=True)
    ad.backward(ad.sum_(ad.add(a, b)))
    assert a.grad.shape == (4, 3) and np.all(a.grad == 1)
    assert b.grad.shape == (3,) and np.all(b.grad == 4)


def test_take_rows_scatters_gradient():
    x = Tensor(np.arange(5.0), requires_grad=True)
    ad.backward(ad.sum_(ad.take_rows(x, [1, 1, 3])))
    assert x.grad.tolist() == [0.0, 2.0, 0.0, 1.0, 0.0]


def test_logsumexp_shift_invariance():
    rng = np.random.RandomState(2)
    row = rng.standard_normal((1, 9))
    a = ad.logsumexp_rows(Tensor(row)).data
    b = ad.logsumexp_rows(Tensor(row + 123.456)).data
    assert abs((b - a) - 123.456) < 1e-9


def test_l2_normalize_zero_row_is_error():
    with pytest.raises(ad.NumericsError):
        ad.l2_normalize_rows(Tensor(np.zeros((2, 4))))


def test_fused_linear_matches_composition():
    rng = np.random.RandomState(4)
    x = rng.standard_normal((6, 3))
    w = rng.standard_normal((3, 5))
    b = rng.standard_normal(5)
    fused = ad.linear(Tensor(x), Tensor(w), Tensor(b)).data
    assert np.allclose(fused, x @ w + b, atol=1e-12)


def test_fused_layer_norm_affine_matches_composition():
    rng = np.random.RandomState(5)
    x = rng.standard_normal((7, 9))
    gain = rng.standard_normal(9)
    bias = rng.standard_normal(9)
    fused = ad.layer_norm_affine(Tensor(x), Tensor(gain), Tensor(bias)).data
    manual = ad.layer_norm(Tensor(x)).data * gain + bias
    assert np.allclose(fused, manual, atol=1e-9)


def test_pow_gradient():
    store = ParamStore()
    x = store.register("x", np.array([0.3, 1.7]))

    def loss_fn():
        return ad.sum_(ad.pow_(x, 2.5))

    report = finite_diff_check(store, loss_fn)
    assert report.passed


def test_clip_blocks_gradient_outside_range():
    x = Tensor(np.array([-2.0, 0.5, 2.0]), requires_grad=True)
    ad.backward(ad.sum_(ad.clip(x, 0.0, 1.0)))
    assert x.grad.tolist() == [0.0, 1.0, 0.0]


def test_graph_is_single_shot():
    # the reverse sweep frees the tape; a second backward finds no graph
    x = Tensor(np.array(2.0), requires_grad=True)
    y = ad.mul(x, x)
    ad.backward(y)
    g1 = x.grad.copy()
    ad.backward(y)  # graph already released: gradient unchanged
    assert x.grad == g1
