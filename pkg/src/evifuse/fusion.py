"""Multimodal fusion of per-modality contour functions.

Each modality's singleton plausibilities are corrected by contextual
discounting with learnable per-class reliability coefficients, the corrected
contours are multiplied across modalities (the linear-time form of
Dempster's rule on contours, with the conflict constant absorbed by the
final normalization), and the product is normalized into a per-voxel
probability distribution:

    p(k) = prod_t (1 - b_tk + b_tk * pl_tk) / sum_l prod_t (1 - b_tl + b_tl * pl_tl)

Only contour functions are fused; combining the full discounted mass
functions across modalities is out of scope.  Reliability coefficients are
stored through a logistic squash so gradient steps keep them inside (0, 1).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import reparam
from .dst import ContourFunction, Frame, FrameMismatchError, ReliabilityVector

#: Positive floor applied to the normalizer before dividing; a normalizer
#: that is exactly zero is an error (every class fully implausible under
#: every modality), anything smaller than the floor is underflow.
NORMALIZER_FLOOR = 1e-300


@dataclass
class ReliabilityMatrix:
    """Per-modality, per-class reliability coefficients.

    ``raw`` is the unconstrained trainable array; ``beta`` is its logistic
    squash, the degree of belief that modality t is reliable when the true
    class is k.
    """

    frame: Frame
    modalities: tuple[str, ...]
    raw: np.ndarray  # (T, K)

    def __post_init__(self) -> None:
        self.raw = np.asarray(self.raw, dtype=float)
        expected = (len(self.modalities), self.frame.k)
        if self.raw.shape != expected:
            raise ValueError(f"raw shape {self.raw.shape} != {expected}")

    @property
    def n_modalities(self) -> int:
        return len(self.modalities)

    @property
    def beta(self) -> np.ndarray:
        return reparam.sigmoid(self.raw)

    def vector(self, t: int) -> ReliabilityVector:
        return ReliabilityVector(self.frame, self.beta[t])

    def copy(self) -> "ReliabilityMatrix":
        return ReliabilityMatrix(self.frame, self.modalities, self.raw.copy())


def init_reliability(
    n_modalities: int,
    n_classes: int,
    frame: Frame | None = None,
    modalities: Sequence[str] | None = None,
) -> ReliabilityMatrix:
    """All coefficients at 0.5 exactly (raw zeros under the logistic squash)."""
    if n_modalities < 1 or n_classes < 1:
        raise ValueError("need at least one modality and one class")
    frame = frame or Frame.indexed(n_classes)
    if frame.k != n_classes:
        raise ValueError("frame size does not match n_classes")
    names = tuple(modalities) if modalities else tuple(
        f"mod{t + 1}" for t in range(n_modalities)
    )
    if len(names) != n_modalities:
        raise ValueError("modality name count does not match n_modalities")
    return ReliabilityMatrix(frame, names, np.zeros((n_modalities, n_classes)))


def discount_modality(pl: ContourFunction, beta_t: ReliabilityVector) -> ContourFunction:
    """Contextually discount one modality's contour by its reliability."""
    return pl.contextual_discount(beta_t)


@dataclass(frozen=True)
class FusedPrediction:
    """Fusion output for one voxel.

    ``normalizer`` is the pre-normalization total plausibility mass; it is a
    diagnostic of cross-modality agreement (small when every class is
    heavily discounted or implausible), not the Dempster conflict, which
    cannot be recovered from contours alone.
    """

    frame: Frame
    probabilities: np.ndarray  # (K,)
    discounted_contours: np.ndarray  # (T, K)
    normalizer: float


def fuse(contours: Sequence[ContourFunction], betas: ReliabilityMatrix) -> FusedPrediction:
    """Fuse one voxel's per-modality contours into class probabilities."""
    if len(contours) != betas.n_modalities:
        raise ValueError(
            f"{len(contours)} contours for {betas.n_modalities} modalities"
        )
    for pl in contours:
        if pl.frame != betas.frame:
            raise FrameMismatchError("contour frame differs from reliability frame")
    stacked = np.stack([pl.pl for pl in contours])[:, None, :]
    probs, discounted, normalizer, _ = fuse_batch(stacked, betas.beta)
    return FusedPrediction(
        betas.frame, probs[0], discounted[:, 0, :], float(normalizer[0])
    )


@dataclass
class FuseCache:
    contours: np.ndarray  # (T, N, K)
    beta: np.ndarray  # (T, K)
    discounted: np.ndarray  # (T, N, K)
    product: np.ndarray  # (N, K)
    normalizer: np.ndarray  # (N,)
    probs: np.ndarray  # (N, K)


def fuse_batch(
    contours: np.ndarray, beta: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, FuseCache]:
    """Vectorized fusion of (T, N, K) contours with (T, K) coefficients.

    Returns (probabilities (N, K), discounted contours (T, N, K),
    normalizer (N,), cache for the backward pass).
    """
    contours = np.asarray(contours, dtype=float)
    beta = np.asarray(beta, dtype=float)
    discounted = 1.0 - beta[:, None, :] + beta[:, None, :] * contours
    product = discounted.prod(axis=0)
    normalizer = product.sum(axis=1)
    if np.any(normalizer == 0.0):
        raise ValueError(
            "zero fusion normalizer: every class fully implausible under all modalities"
        )
    probs = product / np.maximum(normalizer, NORMALIZER_FLOOR)[:, None]
    cache = FuseCache(contours, beta, discounted, product, normalizer, probs)
    return probs, discounted, normalizer, cache


def fuse_batch_backward(
    cache: FuseCache, grad_probs: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients through the product-and-normalize map.

    Returns (gradients wrt each modality's contour (T, N, K), gradients wrt
    the squashed coefficients (T, K), summed over voxels).
    """
    grad_probs = np.asarray(grad_probs, dtype=float)
    z = cache.normalizer[:, None]
    inner = (grad_probs * cache.probs).sum(axis=1, keepdims=True)
    grad_product = (grad_probs - inner) / z  # (N, K)

    # leave-one-out products across modalities
    t_count = cache.discounted.shape[0]
    prefix = np.ones_like(cache.discounted)
    for t in range(1, t_count):
        prefix[t] = prefix[t - 1] * cache.discounted[t - 1]
    suffix = np.ones_like(cache.discounted)
    for t in range(t_count - 2, -1, -1):
        suffix[t] = suffix[t + 1] * cache.discounted[t + 1]
    grad_discounted = grad_product[None, :, :] * prefix * suffix  # (T, N, K)

    grad_contours = grad_discounted * cache.beta[:, None, :]
    grad_beta = (grad_discounted * (cache.contours - 1.0)).sum(axis=1)
    return grad_contours, grad_beta


def raw_beta_gradients(matrix: ReliabilityMatrix, grad_beta: np.ndarray) -> np.ndarray:
    """Chain coefficient gradients through the logistic squash."""
    return grad_beta * reparam.sigmoid_grad(matrix.beta)


def beta_long_csv(matrix: ReliabilityMatrix) -> str:
    """Long-format table ``modality,class,beta`` with 3-decimal values."""
    lines = ["modality,class,beta"]
    beta = matrix.beta
    for t, name in enumerate(matrix.modalities):
        for k, label in enumerate(matrix.frame.labels):
            lines.append(f"{name},{label},{beta[t, k]:.3f}")
    return "\n".join(lines) + "\n"


def beta_wide_csv(matrix: ReliabilityMatrix) -> str:
    """One row per modality: name followed by the K coefficients, 3 decimals."""
    header = "modality," + ",".join(matrix.frame.labels)
    lines = [header]
    beta = matrix.beta
    for t, name in enumerate(matrix.modalities):
        lines.append(name + "," + ",".join(f"{v:.3f}" for v in beta[t]))
    return "\n".join(lines) + "\n"
