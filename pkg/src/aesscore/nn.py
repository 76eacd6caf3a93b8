"""Differentiable building blocks with explicit forward/backward pairs.

Every ``*_forward`` returns ``(output, cache)`` and the matching
``*_backward`` consumes the upstream gradient plus that cache. Arrays are
batched on leading axes; the feature axis is always last.
"""

import math

import numpy as np
from scipy.special import erf

LN_EPS = 1e-5
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def linear_forward(x, w, b):
    return x @ w + b, x


def linear_backward(dy, x, w, need_dx=True):
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    dw = x2.T @ dy2
    db = dy2.sum(axis=0)
    dx = dy @ w.T if need_dx else None
    return dx, dw, db


def layer_norm_forward(x, gamma, beta, eps=LN_EPS):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return xhat * gamma + beta, (xhat, inv)


def layer_norm_backward(dy, cache, gamma):
    xhat, inv = cache
    lead = dy.reshape(-1, dy.shape[-1])
    dgamma = (lead * xhat.reshape(lead.shape)).sum(axis=0)
    dbeta = lead.sum(axis=0)
    dxhat = dy * gamma
    n = dy.shape[-1]
    dx = (inv / n) * (
        n * dxhat
        - dxhat.sum(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
    )
    return dx, dgamma, dbeta


def gelu_forward(x):
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    return x * cdf, (x, cdf)


def gelu_backward(dy, cache):
    x, cdf = cache
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return dy * (cdf + x * pdf)


def softmax(s):
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def attention_forward(x, w_qkv, b_qkv, w_o, b_o, num_heads):
    """Unmasked multi-head self-attention over ``x`` of shape (B, T, d)."""
    bsz, t, d = x.shape
    dh = d // num_heads
    qkv = x @ w_qkv + b_qkv
    qkv = qkv.reshape(bsz, t, 3, num_heads, dh).transpose(2, 0, 3, 1, 4)
    q, k, v = qkv[0], qkv[1], qkv[2]
    scale = 1.0 / math.sqrt(dh)
    p = softmax((q @ k.transpose(0, 1, 3, 2)) * scale)
    o = p @ v
    merged = o.transpose(0, 2, 1, 3).reshape(bsz, t, d)
    out = merged @ w_o + b_o
    return out, (x, q, k, v, p, merged, scale)


def attention_backward(dout, cache, w_qkv, w_o, num_heads):
    x, q, k, v, p, merged, scale = cache
    bsz, t, d = x.shape
    dh = d // num_heads
    dmerged, dw_o, db_o = linear_backward(dout, merged, w_o)
    do = dmerged.reshape(bsz, t, num_heads, dh).transpose(0, 2, 1, 3)
    dp = do @ v.transpose(0, 1, 3, 2)
    dv = p.transpose(0, 1, 3, 2) @ do
    ds = p * (dp - (dp * p).sum(axis=-1, keepdims=True)) * scale
    dq = ds @ k
    dk = ds.transpose(0, 1, 3, 2) @ q
    dqkv = np.stack([dq, dk, dv]).transpose(1, 3, 0, 2, 4).reshape(bsz, t, 3 * d)
    dx, dw_qkv, db_qkv = linear_backward(dqkv, x, w_qkv)
    return dx, dw_qkv, db_qkv, dw_o, db_o


def sinusoidal_positions(n, d, dtype=np.float64):
    pos = np.arange(n, dtype=np.float64)[:, None]
    i = np.arange(d // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / d)
    pe = np.zeros((n, d), dtype=np.float64)
    pe[:, 0 : 2 * (d // 2) : 2] = np.sin(angle)
    pe[:, 1 : 2 * (d // 2) : 2] = np.cos(angle)
    return pe.astype(dtype)
