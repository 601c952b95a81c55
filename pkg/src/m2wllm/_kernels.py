"""Hot inner loops, compiled with numba when available.

Every kernel has a pure-numpy twin with identical semantics.  The compiled
path is used unless ``M2W_DISABLE_NUMBA=1`` is set in the environment (or
numba cannot be imported); ``use_numba(False)`` switches at runtime, which
the benchmark and the parity tests rely on.

Row kernels operate on 2-D C-contiguous arrays; callers reshape.
"""

from __future__ import annotations

import os
from functools import lru_cache

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

_ENABLED = HAVE_NUMBA and os.environ.get("M2W_DISABLE_NUMBA", "0") not in ("1", "true", "yes")


def numba_enabled() -> bool:
    return _ENABLED


def use_numba(flag: bool) -> None:
    """Select the compiled (True) or numpy (False) implementation."""
    global _ENABLED
    _ENABLED = bool(flag) and HAVE_NUMBA


# --------------------------------------------------------------------------
# layer norm


def _layer_norm_fwd_np(x, gain, bias, eps):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gain + bias, xhat, rstd[:, 0]


def _layer_norm_bwd_np(g, xhat, rstd, gain):
    gx = g * gain
    dx = (gx - gx.mean(axis=1, keepdims=True)
          - xhat * (gx * xhat).mean(axis=1, keepdims=True)) * rstd[:, None]
    dgain = (g * xhat).sum(axis=0)
    dbias = g.sum(axis=0)
    return dx, dgain, dbias


# --------------------------------------------------------------------------
# softmax backward: dx = y * (g - <g, y>)


def _softmax_bwd_np(y, g):
    return y * (g - (g * y).sum(axis=1, keepdims=True))


# --------------------------------------------------------------------------
# causal attention softmax over (rows, m, n) score blocks, m <= n: query row i
# sits at key position n - m + i, so y = softmax(scale * x) restricted to
# j <= n - m + i and zero beyond it


@lru_cache(maxsize=32)
def _causal_bias(m: int, n: int, dtype) -> np.ndarray:
    bias = np.zeros((m, n), dtype=dtype)
    bias[np.triu_indices(m, k=n - m + 1, m=n)] = -np.inf
    bias.setflags(write=False)
    return bias


def _causal_softmax_fwd_np(x, scale):
    s = x * x.dtype.type(scale)
    s += _causal_bias(x.shape[1], x.shape[2], x.dtype)
    s -= s.max(axis=-1, keepdims=True)
    np.exp(s, out=s)
    s /= s.sum(axis=-1, keepdims=True)
    return s


def _causal_softmax_bwd_np(y, g, scale):
    # y is zero above the diagonal, so the masked entries get no gradient
    return y.dtype.type(scale) * y * (g - (g * y).sum(axis=-1, keepdims=True))


# --------------------------------------------------------------------------
# gelu backward given the saved tanh term


_GELU_C = 0.7978845608028654  # sqrt(2 / pi)


def _gelu_bwd_np(g, x, th):
    dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * dinner)


# --------------------------------------------------------------------------
# generator recurrences


def _ar2_np(shocks, phi1, phi2, x0, x1):
    out = np.empty_like(shocks)
    n = shocks.shape[0]
    if n > 0:
        out[0] = x0
    if n > 1:
        out[1] = x1
    for t in range(2, n):
        out[t] = phi1 * out[t - 1] + phi2 * out[t - 2] + shocks[t]
    return out


def _markov2_np(uniforms, p_enter, p_exit, state0):
    out = np.empty(uniforms.shape[0], dtype=np.int8)
    s = state0
    for t in range(uniforms.shape[0]):
        if s == 0:
            if uniforms[t] < p_enter:
                s = 1
        else:
            if uniforms[t] < p_exit:
                s = 0
        out[t] = s
    return out


if HAVE_NUMBA:

    @njit(cache=True)
    def _layer_norm_fwd_nb(x, gain, bias, eps):
        rows, k = x.shape
        out = np.empty_like(x)
        xhat = np.empty_like(x)
        rstd = np.empty(rows, dtype=x.dtype)
        for i in range(rows):
            mu = 0.0
            for j in range(k):
                mu += x[i, j]
            mu /= k
            var = 0.0
            for j in range(k):
                d = x[i, j] - mu
                var += d * d
            var /= k
            r = 1.0 / np.sqrt(var + eps)
            rstd[i] = r
            for j in range(k):
                h = (x[i, j] - mu) * r
                xhat[i, j] = h
                out[i, j] = h * gain[j] + bias[j]
        return out, xhat, rstd

    @njit(cache=True)
    def _layer_norm_bwd_nb(g, xhat, rstd, gain):
        rows, k = g.shape
        dx = np.empty_like(g)
        dgain = np.zeros(k, dtype=np.float64)
        dbias = np.zeros(k, dtype=np.float64)
        for i in range(rows):
            m1 = 0.0
            m2 = 0.0
            for j in range(k):
                gx = g[i, j] * gain[j]
                m1 += gx
                m2 += gx * xhat[i, j]
                dgain[j] += g[i, j] * xhat[i, j]
                dbias[j] += g[i, j]
            m1 /= k
            m2 /= k
            for j in range(k):
                dx[i, j] = (g[i, j] * gain[j] - m1 - xhat[i, j] * m2) * rstd[i]
        return dx, dgain.astype(g.dtype), dbias.astype(g.dtype)

    @njit(cache=True)
    def _softmax_bwd_nb(y, g):
        rows, k = y.shape
        dx = np.empty_like(y)
        for i in range(rows):
            s = 0.0
            for j in range(k):
                s += g[i, j] * y[i, j]
            for j in range(k):
                dx[i, j] = y[i, j] * (g[i, j] - s)
        return dx

    @njit(cache=True)
    def _causal_softmax_bwd_nb(y, g, scale):
        rows, m, n = y.shape
        dx = np.zeros_like(y)
        for r in range(rows):
            for i in range(m):
                last = n - m + i
                s = 0.0
                for j in range(last + 1):
                    s += g[r, i, j] * y[r, i, j]
                for j in range(last + 1):
                    dx[r, i, j] = scale * y[r, i, j] * (g[r, i, j] - s)
        return dx

    @njit(cache=True)
    def _gelu_bwd_nb(g, x, th):
        out = np.empty_like(g)
        gf, xf, tf, of = g.ravel(), x.ravel(), th.ravel(), out.ravel()
        for i in range(gf.size):
            v = xf[i]
            t = tf[i]
            dinner = _GELU_C * (1.0 + 3 * 0.044715 * v * v)
            of[i] = gf[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner)
        return out

    _ar2_nb = njit(cache=True)(_ar2_np)
    _markov2_nb = njit(cache=True)(_markov2_np)


def _contig(a):
    return np.ascontiguousarray(a)


def layer_norm_fwd(x, gain, bias, eps):
    """Row-wise standardization then affine; returns (out, xhat, rstd)."""
    if _ENABLED:
        return _layer_norm_fwd_nb(_contig(x), _contig(gain), _contig(bias), eps)
    return _layer_norm_fwd_np(x, gain, bias, eps)


def layer_norm_bwd(g, xhat, rstd, gain):
    """Returns (dx, dgain, dbias) for ``layer_norm_fwd``."""
    if _ENABLED:
        return _layer_norm_bwd_nb(_contig(g), _contig(xhat), rstd, _contig(gain))
    return _layer_norm_bwd_np(g, xhat, rstd, gain)


def softmax_bwd(y, g):
    if _ENABLED:
        return _softmax_bwd_nb(_contig(y), _contig(g))
    return _softmax_bwd_np(y, g)


def causal_softmax_fwd(x, scale):
    """(rows, m, n) scores -> causal attention weights, queries last in the sequence.

    The numpy path is used either way: its vectorized exp beats the compiled
    loop here even though the loop skips the masked half.
    """
    return _causal_softmax_fwd_np(x, scale)


def causal_softmax_bwd(y, g, scale):
    if _ENABLED:
        return _causal_softmax_bwd_nb(_contig(y), _contig(g), float(scale))
    return _causal_softmax_bwd_np(y, g, scale)


def gelu_bwd(g, x, th):
    """d gelu(x) given upstream ``g`` and the forward's ``tanh`` term ``th``."""
    if _ENABLED:
        return _gelu_bwd_nb(_contig(g), _contig(x), _contig(th))
    return _gelu_bwd_np(g, x, th)


def ar2(shocks, phi1, phi2, x0=0.0, x1=0.0):
    """x[t] = phi1*x[t-1] + phi2*x[t-2] + shocks[t], seeded with x0, x1."""
    shocks = np.ascontiguousarray(shocks, dtype=np.float64)
    if _ENABLED:
        return _ar2_nb(shocks, float(phi1), float(phi2), float(x0), float(x1))
    return _ar2_np(shocks, float(phi1), float(phi2), float(x0), float(x1))


def markov2(uniforms, p_enter, p_exit, state0=0):
    """Two-state Markov chain driven by pre-drawn uniforms (0 = normal, 1 = calm)."""
    uniforms = np.ascontiguousarray(uniforms, dtype=np.float64)
    if _ENABLED:
        return _markov2_nb(uniforms, float(p_enter), float(p_exit), int(state0))
    return _markov2_np(uniforms, float(p_enter), float(p_exit), int(state0))
