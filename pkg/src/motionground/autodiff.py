"""Reverse-mode automatic differentiation over dense numpy arrays.

Array-valued tape: every operation on `Tensor` records its inputs and a
backward closure; `backward()` walks the recorded graph once in reverse
topological order. The graph lives only for the duration of one forward
pass (nodes are garbage collected with the loss), which keeps memory
bounded and makes "one graph per step" auditable.

Gradient checking requires float64; training may run in float32.
"""

from __future__ import annotations

import numpy as np

from . import _kernels as kernels


class NumericsError(RuntimeError):
    """A non-finite value (NaN/Inf) or structural misuse of the graph."""


_DEFAULT_DTYPE = np.float64

# Cheap single-pass finiteness probe: a sum is NaN/Inf iff the array holds
# NaN, Inf, or +Inf/-Inf together. Full isfinite scans only run in tests.
CHECK_FINITE = True

_GRAD_ENABLED = True


class no_grad:
    """Skip recording backward closures (inference paths)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._saved = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._saved
        return False


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    if dtype not in (np.float32, np.float64):
        raise ValueError("dtype must be float32 or float64")
    _DEFAULT_DTYPE = dtype


def default_dtype():
    return _DEFAULT_DTYPE


class dtype_context:
    """Temporarily switch the default dtype (used by the gradcheck harness)."""

    def __init__(self, dtype):
        self.dtype = dtype

    def __enter__(self):
        self._saved = _DEFAULT_DTYPE
        set_default_dtype(self.dtype)
        return self

    def __exit__(self, *exc):
        set_default_dtype(self._saved)
        return False


def _check(arr: np.ndarray, op: str) -> None:
    if CHECK_FINITE and not np.isfinite(arr.sum()):
        raise NumericsError(f"non-finite values produced by op '{op}'")


class Tensor:
    """A node in the computation graph wrapping an ndarray."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        if isinstance(data, Tensor):
            raise TypeError("cannot wrap a Tensor in a Tensor")
        arr = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def item(self) -> float:
        return float(self.data)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=_DEFAULT_DTYPE))


def _node(data: np.ndarray, parents, backward_fn, op: str) -> Tensor:
    _check(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = ""
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum `grad` down to `shape` (reverses numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _accum(t: Tensor, g: np.ndarray, fresh: bool = False) -> None:
    """Accumulate gradient `g` into `t`. `fresh` marks arrays the caller
    just allocated, which may be adopted without a defensive copy."""
    if not t.requires_grad:
        return
    if CHECK_FINITE and not np.isfinite(g.sum()):
        raise NumericsError("NaN/Inf gradient encountered during reverse sweep")
    if t.grad is None:
        if fresh and g.dtype == t.data.dtype and g.shape == t.data.shape:
            t.grad = g
        else:
            t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


# ---------------------------------------------------------------------------
# elementwise / structural ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        ga = _unbroadcast(g, a.data.shape)
        _accum(a, ga, fresh=ga is not g)
        gb = _unbroadcast(g, b.data.shape)
        _accum(b, gb, fresh=gb is not g)

    return _node(out_data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data - b.data

    def backward(g):
        ga = _unbroadcast(g, a.data.shape)
        _accum(a, ga, fresh=ga is not g)
        _accum(b, _unbroadcast(-g, b.data.shape), fresh=True)

    return _node(out_data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape), fresh=True)
        _accum(b, _unbroadcast(g * a.data, b.data.shape), fresh=True)

    return _node(out_data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    with np.errstate(invalid="ignore", divide="ignore"):
        out_data = a.data / b.data

    def backward(g):
        _accum(a, _unbroadcast(g / b.data, a.data.shape), fresh=True)
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape), fresh=True)

    return _node(out_data, (a, b), backward, "div")


def matmul(a, b) -> Tensor:
    """Matrix product; supports 2-D weights under N-D activations and
    equal-rank batched operands (as in attention)."""
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            _accum(a, _unbroadcast(ga, a.data.shape), fresh=True)
        if b.requires_grad:
            if b.data.ndim == 2 and a.data.ndim > 2:
                k = a.data.shape[-1]
                n = g.shape[-1]
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
            else:
                gb = np.swapaxes(a.data, -1, -2) @ g
                gb = _unbroadcast(gb, b.data.shape)
            _accum(b, gb, fresh=True)

    return _node(out_data, (a, b), backward, "matmul")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.reshape(shape)

    def backward(g):
        _accum(a, g.reshape(a.data.shape))

    return _node(out_data, (a,), backward, "reshape")


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    out_data = np.transpose(a.data, axes)
    inv = np.argsort(axes)

    def backward(g):
        _accum(a, np.transpose(g, inv))

    return _node(out_data, (a,), backward, "transpose")


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape))
        else:
            if not keepdims:
                g = np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(g, a.data.shape).copy(), fresh=True)

    return _node(out_data, (a,), backward, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        n = a.data.shape[axis]
    return mul(sum_(a, axis, keepdims), 1.0 / n)


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out_data = np.exp(a.data)

    def backward(g):
        _accum(a, g * out_data, fresh=True)

    return _node(out_data, (a,), backward, "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(invalid="ignore", divide="ignore"):
        out_data = np.log(a.data)

    def backward(g):
        _accum(a, g / a.data, fresh=True)

    return _node(out_data, (a,), backward, "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(invalid="ignore"):
        out_data = np.sqrt(a.data)

    def backward(g):
        _accum(a, g * (0.5 / out_data), fresh=True)

    return _node(out_data, (a,), backward, "sqrt")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.tanh(a.data)

    def backward(g):
        _accum(a, g * (1.0 - out_data * out_data), fresh=True)

    return _node(out_data, (a,), backward, "tanh")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out_data = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        _accum(a, g * out_data * (1.0 - out_data), fresh=True)

    return _node(out_data, (a,), backward, "sigmoid")


def gelu(a) -> Tensor:
    """Smooth tanh-form GELU; kept kink-free so finite differences stay clean."""
    a = as_tensor(a)
    x = a.data
    out_data = kernels.gelu_fwd(x)

    def backward(g):
        _accum(a, kernels.gelu_bwd(x, g), fresh=True)

    return _node(out_data, (a,), backward, "gelu")


def relu(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.maximum(a.data, 0.0)

    def backward(g):
        _accum(a, g * (a.data > 0), fresh=True)

    return _node(out_data, (a,), backward, "relu")


def abs_(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.abs(a.data)

    def backward(g):
        _accum(a, g * np.sign(a.data), fresh=True)

    return _node(out_data, (a,), backward, "abs")


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp with zero gradient outside [lo, hi]."""
    a = as_tensor(a)
    out_data = np.clip(a.data, lo, hi)

    def backward(g):
        _accum(a, g * ((a.data >= lo) & (a.data <= hi)), fresh=True)

    return _node(out_data, (a,), backward, "clip")


def pow_(a, exponent: float) -> Tensor:
    """Elementwise x**exponent for x >= 0 (fixed scalar exponent)."""
    a = as_tensor(a)
    out_data = np.power(a.data, exponent)

    def backward(g):
        _accum(a, g * exponent * np.power(a.data, exponent - 1.0), fresh=True)

    return _node(out_data, (a,), backward, "pow")


def stop_gradient(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(a.data)


def take_rows(a, indices) -> Tensor:
    """Gather rows along axis 0; backward scatter-adds."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    out_data = a.data[idx]

    def backward(g):
        if a.requires_grad:
            acc = np.zeros_like(a.data)
            np.add.at(acc, idx, g)
            _accum(a, acc, fresh=True)

    return _node(out_data, (a,), backward, "take_rows")


def take_columns(a, indices) -> Tensor:
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    out_data = a.data[..., idx]

    def backward(g):
        if a.requires_grad:
            acc = np.zeros_like(a.data)
            np.add.at(acc.swapaxes(0, -1), idx, g.swapaxes(0, -1))
            _accum(a, acc, fresh=True)

    return _node(out_data, (a,), backward, "take_columns")


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        pieces = np.split(g, len(tensors), axis=axis)
        for t, piece in zip(tensors, pieces):
            _accum(t, np.squeeze(piece, axis=axis))

    return _node(out_data, tuple(tensors), backward, "stack")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accum(t, g[tuple(sl)])

    return _node(out_data, tuple(tensors), backward, "concat")


# ---------------------------------------------------------------------------
# fused normalization ops


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    if axis not in (-1, a.data.ndim - 1):
        raise ValueError("softmax is defined over the last axis")
    if CHECK_FINITE and not np.isfinite(a.data.max(axis=-1)).all():
        raise NumericsError("softmax over a row with no finite entries")
    shape = a.data.shape
    flat = np.ascontiguousarray(a.data).reshape(-1, shape[-1])
    out_flat = kernels.softmax_fwd(flat)
    out_data = out_flat.reshape(shape)

    def backward(g):
        dx = kernels.softmax_bwd(out_flat, g.reshape(-1, shape[-1]))
        _accum(a, dx.reshape(shape), fresh=True)

    return _node(out_data, (a,), backward, "softmax")


def linear(x, w, b=None) -> Tensor:
    """Fused affine map x @ w (+ b) with the bias added in place on the
    freshly allocated product; x may carry leading batch axes."""
    x, w = as_tensor(x), as_tensor(w)
    d_in, d_out = w.shape
    lead = x.data.shape[:-1]
    x2 = x.data.reshape(-1, d_in)
    out_data = x2 @ w.data
    if b is not None:
        b = as_tensor(b)
        np.add(out_data, b.data, out=out_data)
    out_data = out_data.reshape(*lead, d_out)

    def backward(g):
        g2 = g.reshape(-1, d_out)
        if x.requires_grad:
            _accum(x, (g2 @ w.data.T).reshape(x.data.shape), fresh=True)
        if w.requires_grad:
            _accum(w, x2.T @ g2, fresh=True)
        if b is not None and b.requires_grad:
            _accum(b, g2.sum(axis=0), fresh=True)

    parents = (x, w) if b is None else (x, w, b)
    return _node(out_data, parents, backward, "linear")


def layer_norm_affine(x, gain, bias, eps: float = 1e-12) -> Tensor:
    """Fused layer_norm(x) * gain + bias over the last axis."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    shape = x.data.shape
    flat = np.ascontiguousarray(x.data).reshape(-1, shape[-1])
    out_flat, xhat, inv = kernels.ln_affine_fwd(flat, gain.data, bias.data,
                                                x.data.dtype.type(eps))
    out_data = out_flat.reshape(shape)

    def backward(g):
        dx, dgain, dbias = kernels.ln_affine_bwd(xhat, inv, gain.data,
                                                 g.reshape(-1, shape[-1]))
        _accum(x, dx.reshape(shape), fresh=True)
        _accum(gain, dgain, fresh=True)
        _accum(bias, dbias, fresh=True)

    return _node(out_data, (x, gain, bias), backward, "layer_norm_affine")


def layer_norm(a, eps: float = 1e-12) -> Tensor:
    """Normalize the last axis to mean 0, variance 1 (no affine)."""
    a = as_tensor(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    out_data = xc * inv
    n = a.data.shape[-1]

    def backward(g):
        gsum = g.sum(axis=-1, keepdims=True)
        gx = (g * out_data).sum(axis=-1, keepdims=True)
        _accum(a, inv * (g - gsum / n - out_data * gx / n), fresh=True)

    return _node(out_data, (a,), backward, "layer_norm")


def logsumexp_rows(a) -> Tensor:
    """log(sum(exp(row))) over the last axis, max-shifted for stability.

    The shift is detached; the gradient is exactly softmax(a)."""
    a = as_tensor(a)
    m = a.data.max(axis=-1, keepdims=True)
    if not np.isfinite(m).all():
        raise NumericsError("logsumexp over a row with no finite entries")
    shifted = sub(a, Tensor(m))
    return add(Tensor(m[..., 0]), log(sum_(exp(shifted), axis=-1)))


def l2_normalize_rows(a, min_norm: float = 1e-12) -> Tensor:
    """Scale each row of the last axis to unit L2 norm; zero rows are an error."""
    a = as_tensor(a)
    norms_sq = sum_(mul(a, a), axis=-1, keepdims=True)
    if np.any(norms_sq.data < min_norm * min_norm):
        raise NumericsError("cannot normalize a (near-)zero-norm row")
    return div(a, sqrt(norms_sq))


# ---------------------------------------------------------------------------
# reverse sweep


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into `.grad` of every reachable leaf.

    `loss` must be scalar. Parameters not reachable from `loss` keep a
    zero gradient (their accumulators are simply never touched)."""
    if loss.size != 1:
        raise NumericsError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not np.isfinite(loss.data.sum()):
        raise NumericsError("loss is NaN/Inf; aborting backward")
    if not loss.requires_grad:
        return

    # iterative topological order (graphs can be deep)
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    _dead = np.empty(0, dtype=loss.data.dtype)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)
            # release graph references as we go; the tape is single-shot.
            # Every consumer of this node ran earlier in the sweep, so its
            # activation can be dropped too, which caps peak memory.
            node._backward = None
            node._parents = ()
            if node is not loss:
                node.grad = None
                if not node.name:
                    node.data = _dead


def count_param_uses(loss: Tensor, params) -> dict[str, int]:
    """How many ops consume each named parameter in the graph under `loss`.

    Must be called before `backward` (the sweep frees the graph)."""
    ids = {id(p): name for name, p in params.items()}
    counts = {name: 0 for name in ids.values()}
    seen: set[int] = set()
    stack = [loss]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        for p in node._parents:
            if id(p) in ids:
                counts[ids[id(p)]] += 1
            if p._parents or id(p) in ids:
                stack.append(p)
    return counts
