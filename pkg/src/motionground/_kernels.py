"""Fused elementwise/normalization kernels.

numba (when importable) compiles the memory-bound chains into single-pass
loops; otherwise pure numpy fallbacks keep behavior identical in shape and
semantics. Kernels are single-threaded and IEEE-strict (fastmath off), so
runs stay deterministic per machine.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap

_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_A = 0.044715


@njit(cache=True)
def _gelu_fwd_nb(x, out):
    c = _GELU_C
    a = _GELU_A
    for i in range(x.size):
        v = x[i]
        t = np.tanh(c * (v + a * v * v * v))
        out[i] = 0.5 * v * (1.0 + t)


@njit(cache=True)
def _gelu_bwd_nb(x, g, out):
    c = _GELU_C
    a = _GELU_A
    for i in range(x.size):
        v = x[i]
        t = np.tanh(c * (v + a * v * v * v))
        dinner = c * (1.0 + 3.0 * a * v * v)
        out[i] = g[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner)


def gelu_fwd(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    if HAVE_NUMBA:
        _gelu_fwd_nb(x.reshape(-1), out.reshape(-1))
        return out
    t = np.tanh(_GELU_C * (x + _GELU_A * (x * x * x)))
    return 0.5 * x * (1.0 + t)


def gelu_bwd(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    if HAVE_NUMBA:
        out = np.empty_like(x)
        _gelu_bwd_nb(x.reshape(-1), np.ascontiguousarray(g).reshape(-1), out.reshape(-1))
        return out
    t = np.tanh(_GELU_C * (x + _GELU_A * (x * x * x)))
    dinner = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
    return g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner)


@njit(cache=True)
def _ln_affine_fwd_nb(x, gain, bias, eps, out, xhat, inv):
    rows, d = x.shape
    for r in range(rows):
        mu = 0.0
        for c in range(d):
            mu += x[r, c]
        mu /= d
        var = 0.0
        for c in range(d):
            diff = x[r, c] - mu
            var += diff * diff
        var /= d
        s = 1.0 / np.sqrt(var + eps)
        inv[r] = s
        for c in range(d):
            h = (x[r, c] - mu) * s
            xhat[r, c] = h
            out[r, c] = h * gain[c] + bias[c]


@njit(cache=True)
def _ln_affine_bwd_nb(xhat, inv, gain, g, dx, dgain, dbias):
    rows, d = xhat.shape
    for c in range(d):
        dgain[c] = 0.0
        dbias[c] = 0.0
    for r in range(rows):
        m1 = 0.0
        m2 = 0.0
        for c in range(d):
            gv = g[r, c]
            dgain[c] += gv * xhat[r, c]
            dbias[c] += gv
            gh = gv * gain[c]
            m1 += gh
            m2 += gh * xhat[r, c]
        m1 /= d
        m2 /= d
        s = inv[r]
        for c in range(d):
            gh = g[r, c] * gain[c]
            dx[r, c] = s * (gh - m1 - xhat[r, c] * m2)


def ln_affine_fwd(x2d, gain, bias, eps):
    if HAVE_NUMBA:
        out = np.empty_like(x2d)
        xhat = np.empty_like(x2d)
        inv = np.empty(x2d.shape[0], dtype=x2d.dtype)
        _ln_affine_fwd_nb(x2d, gain, bias, x2d.dtype.type(eps), out, xhat, inv)
        return out, xhat, inv
    mu = x2d.mean(axis=-1, keepdims=True)
    xc = x2d - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return xhat * gain + bias, xhat, inv[:, 0]


def ln_affine_bwd(xhat, inv, gain, g):
    if HAVE_NUMBA:
        dx = np.empty_like(xhat)
        dgain = np.empty_like(gain)
        dbias = np.empty_like(gain)
        _ln_affine_bwd_nb(xhat, inv, gain, np.ascontiguousarray(g), dx, dgain, dbias)
        return dx, dgain, dbias
    dgain = (g * xhat).sum(axis=0)
    dbias = g.sum(axis=0)
    gh = g * gain
    m1 = gh.mean(axis=-1, keepdims=True)
    m2 = (gh * xhat).mean(axis=-1, keepdims=True)
    dx = inv[:, None] * (gh - m1 - xhat * m2)
    return dx, dgain, dbias


@njit(cache=True)
def _softmax_fwd_nb(x, out):
    rows, d = x.shape
    for r in range(rows):
        m = x[r, 0]
        for c in range(1, d):
            if x[r, c] > m:
                m = x[r, c]
        total = 0.0
        for c in range(d):
            e = np.exp(x[r, c] - m)
            out[r, c] = e
            total += e
        for c in range(d):
            out[r, c] /= total


@njit(cache=True)
def _softmax_bwd_nb(out, g, dx):
    rows, d = out.shape
    for r in range(rows):
        dot = 0.0
        for c in range(d):
            dot += g[r, c] * out[r, c]
        for c in range(d):
            dx[r, c] = out[r, c] * (g[r, c] - dot)


def softmax_fwd(x2d: np.ndarray) -> np.ndarray:
    if HAVE_NUMBA:
        out = np.empty_like(x2d)
        _softmax_fwd_nb(x2d, out)
        return out
    m = x2d.max(axis=-1, keepdims=True)
    e = np.exp(x2d - m)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_bwd(out: np.ndarray, g: np.ndarray) -> np.ndarray:
    if HAVE_NUMBA:
        dx = np.empty_like(out)
        _softmax_bwd_nb(out, np.ascontiguousarray(g), dx)
        return dx
    gs = (g * out).sum(axis=-1, keepdims=True)
    return out * (g - gs)
