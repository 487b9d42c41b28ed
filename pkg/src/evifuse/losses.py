"""Two-part Dice-style training loss.

The first term scores each modality's evidence on its own: only the
singleton masses enter, so unassigned (ignorance) mass counts against the
overlap.  The second term scores the fused probabilities after discounting
and combination.  Both are soft Dice complements in [0, 1]; the total is
their sum, differentiable in every input.
"""

from __future__ import annotations

import numpy as np


def _dice_complement(values: np.ndarray, one_hot: np.ndarray) -> tuple[float, np.ndarray]:
    """1 - 2*sum(v*g)/sum(v+g) and its gradient with respect to ``values``."""
    overlap = float((values * one_hot).sum())
    total = float((values + one_hot).sum())
    loss = 1.0 - 2.0 * overlap / total
    grad = -2.0 * (one_hot * total - overlap) / total**2
    return loss, grad


def loss_source(singleton_masses: np.ndarray, one_hot: np.ndarray) -> float:
    """Per-modality evidence loss summed over modalities.

    ``singleton_masses`` is (T, N, K); ``one_hot`` is (N, K).
    """
    value, _ = loss_source_with_grad(singleton_masses, one_hot)
    return value


def loss_source_with_grad(
    singleton_masses: np.ndarray, one_hot: np.ndarray
) -> tuple[float, np.ndarray]:
    singleton_masses = np.asarray(singleton_masses, dtype=float)
    one_hot = np.asarray(one_hot, dtype=float)
    if one_hot.size == 0:
        raise ValueError("empty grid")
    total = 0.0
    grads = np.empty_like(singleton_masses)
    for t in range(singleton_masses.shape[0]):
        value, grad = _dice_complement(singleton_masses[t], one_hot)
        total += value
        grads[t] = grad
    return total, grads


def loss_fused(probs: np.ndarray, one_hot: np.ndarray) -> float:
    """Fused-probability loss; ``probs`` and ``one_hot`` are (N, K)."""
    value, _ = loss_fused_with_grad(probs, one_hot)
    return value


def loss_fused_with_grad(
    probs: np.ndarray, one_hot: np.ndarray
) -> tuple[float, np.ndarray]:
    probs = np.asarray(probs, dtype=float)
    one_hot = np.asarray(one_hot, dtype=float)
    if one_hot.size == 0:
        raise ValueError("empty grid")
    return _dice_complement(probs, one_hot)


def total_loss(
    singleton_masses: np.ndarray, probs: np.ndarray, one_hot: np.ndarray
) -> float:
    """Sum of the per-modality and fused terms."""
    return loss_source(singleton_masses, one_hot) + loss_fused(probs, one_hot)
