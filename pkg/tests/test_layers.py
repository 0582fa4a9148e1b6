"""Attention, transformer-block, and parameter-store behavior."""

import numpy as np
import pytest

from motionground import autodiff as ad
from motionground.autodiff import Tensor
from motionground.gradcheck import finite_diff_check
from motionground.layers import (MultiHeadAttention, ParamStore, TransformerBlock,
                                 sinusoidal_encoding)


def make_attention(d=8, heads=2, seed=0):
    store = ParamStore()
    attn = MultiHeadAttention(store, "a", d, heads, np.random.RandomState(seed))
    return store, attn


def set_identity(attn):
    for lin in (attn.wq, attn.wk, attn.wv, attn.wo):
        lin.w.data = np.eye(lin.w.data.shape[0])
        lin.b.data = np.zeros_like(lin.b.data)


def test_single_key_returns_projected_value():
    store, attn = make_attention()
    rng = np.random.RandomState(1)
    k = rng.standard_normal((1, 8))
    out1 = attn(rng.standard_normal((3, 8)), k, k).data
    out2 = attn(rng.standard_normal((3, 8)), k, k).data
    # softmax over one key is 1 for any query
    assert np.allclose(out1, out2, atol=1e-12)
    assert np.allclose(out1[0], out1[1], atol=1e-12)


def test_key_value_permutation_invariance():
    store, attn = make_attention()
    rng = np.random.RandomState(2)
    q = rng.standard_normal((4, 8))
    k = rng.standard_normal((6, 8))
    v = rng.standard_normal((6, 8))
    perm = np.random.RandomState(3).permutation(6)
    base = attn(q, k, v).data
    permuted = attn(q, k[perm], v[perm]).data
    assert np.allclose(base, permuted, atol=1e-12)


def test_uniform_logits_average_values():
    store, attn = make_attention(d=2, heads=1)
    set_identity(attn)
    q = np.array([[1.0, 0.0]])
    k = np.zeros((2, 2))          # both logits 0 -> uniform weights
    v = np.array([[2.0, 0.0], [4.0, 2.0]])
    out = attn(q, k, v).data
    assert np.allclose(out, [[3.0, 1.0]], atol=1e-12)


def test_identical_keys_give_uniform_weights():
    store, attn = make_attention(d=4, heads=1)
    set_identity(attn)
    q = np.array([[0.3, -0.2, 0.5, 0.1]])
    k = np.tile(np.array([[0.7, 0.1, -0.4, 0.2]]), (5, 1))
    v = np.random.RandomState(4).standard_normal((5, 4))
    out = attn(q, k, v).data
    assert np.allclose(out, v.mean(axis=0, keepdims=True), atol=1e-12)


def test_heads_must_divide_width():
    store = ParamStore()
    with pytest.raises(ValueError, match="divide"):
        MultiHeadAttention(store, "bad", 10, 3, np.random.RandomState(0))


def test_dimension_mismatch_rejected():
    store, attn = make_attention()
    rng = np.random.RandomState(5)
    with pytest.raises(ValueError):
        attn(rng.standard_normal((3, 6)), rng.standard_normal((4, 8)),
             rng.standard_normal((4, 8)))
    with pytest.raises(ValueError):
        attn(rng.standard_normal((3, 8)), rng.standard_normal((4, 8)),
             rng.standard_normal((5, 8)))


def test_attention_gradients():
    store, attn = make_attention(d=6, heads=3, seed=7)
    rng = np.random.RandomState(8)
    x = Tensor(rng.standard_normal((2, 4, 6)))

    def loss_fn():
        out = attn(x, x, x)
        return ad.mean(ad.mul(out, out))

    report = finite_diff_check(store, loss_fn, max_entries=5)
    assert report.passed, report.worst()


def test_transformer_block_gradients():
    store = ParamStore()
    block = TransformerBlock(store, "t", 8, 2, np.random.RandomState(9))
    x = Tensor(np.random.RandomState(10).standard_normal((2, 3, 8)))

    def loss_fn():
        out = block(x)
        return ad.mean(ad.mul(out, out))

    report = finite_diff_check(store, loss_fn, max_entries=4)
    assert report.passed, report.worst()


def test_sinusoidal_encoding_shape_and_range():
    pe = sinusoidal_encoding(10, 16)
    assert pe.shape == (10, 16)
    assert np.all(np.abs(pe) <= 1.0)
    assert not np.allclose(pe[0], pe[5])


def test_param_store_rejects_duplicates_and_tracks_grads():
    store = ParamStore()
    p = store.register("w", np.ones((2, 2)))
    with pytest.raises(ValueError):
        store.register("w", np.ones(2))
    assert np.all(store.grad("w") == 0)
    ad.backward(ad.sum_(ad.mul(p, 3.0)))
    assert np.all(store.grad("w") == 3.0)
    assert store.grad("w").shape == p.data.shape
    store.zero_grad()
    assert np.all(store.grad("w") == 0)


def test_single_use_audit_detects_reuse():
    store = ParamStore()
    p = store.register("w", np.array(2.0))
    loss = ad.add(ad.mul(p, 3.0), ad.mul(p, 4.0))
    with pytest.raises(ad.NumericsError, match="more than once"):
        store.audit_single_use(loss)
    loss2 = ad.mul(p, 5.0)
    store.audit_single_use(loss2)
