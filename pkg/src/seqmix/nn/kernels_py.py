"""Pure-numpy reference kernels.

These define the numerics; the compiled twins in ``_ckernels.pyx`` follow the
same formulas (two-pass mean/variance, max-shifted softmax) so the two
backends agree to rounding error. All functions take 2D C-contiguous arrays
of float32 or float64 and return new arrays.
"""

from __future__ import annotations

import numpy as np


def layernorm_fwd(x, gamma, beta, eps):
    mean = x.mean(axis=1)
    var = x.var(axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[:, None]) * rstd[:, None]
    y = xhat * gamma + beta
    return y, mean, rstd


def layernorm_bwd(dy, x, gamma, mean, rstd):
    xhat = (x - mean[:, None]) * rstd[:, None]
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = (dxhat - m1 - xhat * m2) * rstd[:, None]
    return dx, dgamma, dbeta


def softmax_fwd(x):
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_bwd(dy, y):
    inner = (dy * y).sum(axis=1, keepdims=True)
    return y * (dy - inner)


def softmax_xent_fwd(logits, labels):
    """Per-row cross-entropy of integer labels; also returns the softmax."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    denom = e.sum(axis=1)
    probs = e / denom[:, None]
    rows = np.arange(logits.shape[0])
    losses = np.log(denom) - shifted[rows, labels]
    return losses, probs


def softmax_xent_bwd(probs, labels, dlosses):
    dlogits = probs * dlosses[:, None]
    rows = np.arange(probs.shape[0])
    dlogits[rows, labels] -= dlosses
    return dlogits


def relu_fwd(x):
    return np.maximum(x, 0)


def relu_bwd(dy, x):
    return np.where(x > 0, dy, 0)
