"""Smooth reparameterizations keeping constrained parameters feasible.

Optimizers work on unconstrained arrays; these maps squash them into the
feasible region with exact, everywhere-nonzero gradients, which avoids the
dead zones that clipping would create at the bounds.
"""

from __future__ import annotations

import numpy as np


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic squash onto (0, 1)."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_grad(y: np.ndarray) -> np.ndarray:
    """Derivative of the logistic squash, expressed in its output ``y``."""
    return y * (1.0 - y)


def softplus(x: np.ndarray) -> np.ndarray:
    """log(1 + e^x), stable for large |x|."""
    x = np.asarray(x, dtype=float)
    return np.logaddexp(0.0, x)


#: softplus evaluated at zero by the same code path; the ratio
#: softplus(0)/SOFTPLUS_AT_ZERO is then exactly 1.0.
SOFTPLUS_AT_ZERO = float(softplus(np.array(0.0)))


def positive(x: np.ndarray, scale: float) -> np.ndarray:
    """Squash onto (0, inf), equal to ``scale`` exactly at x = 0.

    Defined as ``scale * softplus(x) / softplus(0)`` so a zero raw value
    reproduces the initialization constant bit-exactly.
    """
    return scale * (softplus(x) / SOFTPLUS_AT_ZERO)


def positive_grad(x: np.ndarray, scale: float) -> np.ndarray:
    return scale * (sigmoid(x) / SOFTPLUS_AT_ZERO)


def sigmoid_inverse(y: np.ndarray) -> np.ndarray:
    """Logit; exact zero at y = 0.5.  Requires y strictly inside (0, 1)."""
    y = np.asarray(y, dtype=float)
    return np.log(y) - np.log1p(-y)


def positive_inverse(y: np.ndarray, scale: float) -> np.ndarray:
    """Inverse of :func:`positive` up to float rounding; exact zero at
    ``y == scale``."""
    y = np.asarray(y, dtype=float)
    ratio = y / scale
    raw = np.log(np.expm1(ratio * SOFTPLUS_AT_ZERO))
    return np.where(ratio == 1.0, 0.0, raw)


def softmax_rows(z: np.ndarray) -> np.ndarray:
    """Row-wise normalized exponential; rows sum to one."""
    z = np.asarray(z, dtype=float)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_rows_backward(u: np.ndarray, grad_u: np.ndarray) -> np.ndarray:
    """Chain an upstream gradient through a row-wise softmax with output ``u``.

    The result lies in the tangent space of the simplex (rows sum to zero).
    """
    inner = (grad_u * u).sum(axis=-1, keepdims=True)
    return u * (grad_u - inner)


def simplex_tangent_projection(grad: np.ndarray) -> np.ndarray:
    """Project per-row gradients onto directions preserving the row sum."""
    return grad - grad.mean(axis=-1, keepdims=True)
