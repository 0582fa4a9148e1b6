"""Differentiable building blocks: parameter store, linear/MLP layers,
layer normalization, multi-head attention, and pre-norm transformer blocks."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class ParamStore:
    """Named parameter tensors with per-parameter gradient accumulators."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def register(self, name: str, values: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"parameter {name!r} already registered")
        t = Tensor(np.array(values, dtype=ad.default_dtype()), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def grad(self, name: str) -> np.ndarray:
        t = self._params[name]
        return np.zeros_like(t.data) if t.grad is None else t.grad

    def values_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_values(self, values: dict[str, np.ndarray], strict: bool = True) -> None:
        missing = set(self._params) - set(values)
        if strict and missing:
            raise KeyError(f"missing parameter values: {sorted(missing)}")
        for name, arr in values.items():
            if name not in self._params:
                if strict:
                    raise KeyError(f"unknown parameter {name!r}")
                continue
            t = self._params[name]
            if tuple(arr.shape) != t.data.shape:
                raise ValueError(
                    f"shape mismatch for {name!r}: stored {tuple(arr.shape)}, expected {t.data.shape}"
                )
            t.data = np.array(arr, dtype=t.data.dtype)

    def audit_single_use(self, loss: Tensor) -> None:
        """Assert no parameter is consumed more than once per forward graph.

        Training stacks the whole batch into one graph, so every weight
        feeds exactly one op per step; reuse signals an accidental second
        forward pass sharing the same tape."""
        counts = ad.count_param_uses(loss, dict(self._params))
        reused = {n: c for n, c in counts.items() if c > 1}
        if reused:
            raise ad.NumericsError(f"parameters used more than once per forward pass: {reused}")


def init_linear_weight(rng: np.random.RandomState, d_in: int, d_out: int, style: str = "scaled", sigma: float = 0.01) -> np.ndarray:
    if style == "scaled":
        return rng.standard_normal((d_in, d_out)) / np.sqrt(d_in)
    if style == "identity_noise":
        if d_in != d_out:
            raise ValueError("identity init requires a square map")
        return np.eye(d_in) + sigma * rng.standard_normal((d_in, d_in))
    if style == "gauss":
        return sigma * rng.standard_normal((d_in, d_out))
    raise ValueError(f"unknown init style {style!r}")


class Linear:
    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int,
                 rng: np.random.RandomState, bias: bool = True, init: str = "scaled",
                 sigma: float = 0.01):
        self.w = store.register(f"{name}.w", init_linear_weight(rng, d_in, d_out, init, sigma))
        self.b = store.register(f"{name}.b", np.zeros(d_out)) if bias else None

    def __call__(self, x) -> Tensor:
        return ad.linear(x, self.w, self.b)


class MLP:
    """Linear stack with GELU between layers (none after the last)."""

    def __init__(self, store: ParamStore, name: str, dims: list[int], rng: np.random.RandomState):
        self.layers = [
            Linear(store, f"{name}.{i}", dims[i], dims[i + 1], rng)
            for i in range(len(dims) - 1)
        ]

    def __call__(self, x) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = ad.gelu(x)
        return x


class LayerNorm:
    def __init__(self, store: ParamStore, name: str, d: int):
        self.gain = store.register(f"{name}.g", np.ones(d))
        self.bias = store.register(f"{name}.b", np.zeros(d))

    def __call__(self, x) -> Tensor:
        return ad.layer_norm_affine(x, self.gain, self.bias)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    """(..., L, d) -> (..., heads, L, d/heads)"""
    *lead, length, d = x.shape
    x = ad.reshape(x, (*lead, length, heads, d // heads))
    axes = list(range(x.ndim))
    axes[-3], axes[-2] = axes[-2], axes[-3]
    return ad.transpose(x, axes)


def _merge_heads(x: Tensor) -> Tensor:
    """(..., heads, L, dh) -> (..., L, heads*dh)"""
    axes = list(range(x.ndim))
    axes[-3], axes[-2] = axes[-2], axes[-3]
    x = ad.transpose(x, axes)
    *lead, length, heads, dh = x.shape
    return ad.reshape(x, (*lead, length, heads * dh))


class MultiHeadAttention:
    """Scaled-dot-product attention with per-head splits of a shared
    projection, heads concatenated and output-projected."""

    def __init__(self, store: ParamStore, name: str, d_model: int, heads: int,
                 rng: np.random.RandomState):
        if d_model % heads != 0:
            raise ValueError(f"heads ({heads}) must divide d_model ({d_model})")
        self.heads = heads
        self.d_model = d_model
        self.wq = Linear(store, f"{name}.q", d_model, d_model, rng)
        self.wk = Linear(store, f"{name}.k", d_model, d_model, rng)
        self.wv = Linear(store, f"{name}.v", d_model, d_model, rng)
        self.wo = Linear(store, f"{name}.o", d_model, d_model, rng)

    def __call__(self, queries, keys, values) -> Tensor:
        q_in, k_in, v_in = ad.as_tensor(queries), ad.as_tensor(keys), ad.as_tensor(values)
        if q_in.shape[-1] != self.d_model or k_in.shape[-1] != self.d_model:
            raise ValueError(
                f"expected feature dim {self.d_model}, got queries {q_in.shape} keys {k_in.shape}"
            )
        if k_in.shape[:-1] != v_in.shape[:-1]:
            raise ValueError(f"keys {k_in.shape} and values {v_in.shape} disagree")
        dh = self.d_model // self.heads
        q = _split_heads(self.wq(q_in), self.heads)
        k = _split_heads(self.wk(k_in), self.heads)
        v = _split_heads(self.wv(v_in), self.heads)
        axes = list(range(k.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
        scores = ad.mul(ad.matmul(q, ad.transpose(k, axes)), 1.0 / np.sqrt(dh))
        probs = ad.softmax(scores, axis=-1)
        ctx = ad.matmul(probs, v)
        return self.wo(_merge_heads(ctx))


class TransformerBlock:
    """Pre-norm residual block: x + attn(ln(x)), then x + ffn(ln(x))."""

    def __init__(self, store: ParamStore, name: str, d_model: int, heads: int,
                 rng: np.random.RandomState, ffn_mult: int = 2):
        self.ln1 = LayerNorm(store, f"{name}.ln1", d_model)
        self.attn = MultiHeadAttention(store, f"{name}.attn", d_model, heads, rng)
        self.ln2 = LayerNorm(store, f"{name}.ln2", d_model)
        self.ffn_in = Linear(store, f"{name}.ffn.0", d_model, ffn_mult * d_model, rng)
        self.ffn_out = Linear(store, f"{name}.ffn.1", ffn_mult * d_model, d_model, rng)

    def __call__(self, x) -> Tensor:
        h = self.ln1(x)
        x = ad.add(x, self.attn(h, h, h))
        h = self.ffn_out(ad.gelu(self.ffn_in(self.ln2(x))))
        return ad.add(x, h)


def sinusoidal_encoding(length: int, d: int) -> np.ndarray:
    """Classic fixed sin/cos position table, shape (length, d)."""
    pe = np.zeros((length, d))
    position = np.arange(length)[:, None].astype(np.float64)
    div = np.exp(np.arange(0, d, 2) * (-np.log(10000.0) / d))
    pe[:, 0::2] = np.sin(position * div)
    pe[:, 1::2] = np.cos(position * div[: (d + 1) // 2][: pe[:, 1::2].shape[1]])
    return pe
