"""Prototype-based evidence mapping from feature vectors to simple masses.

Each of I prototype units holds a point in feature space; its activation
``s_i = alpha_i * exp(-gamma_i * ||x - p_i||^2)`` measures similarity to the
input.  A unit contributes the mass function ``m_i({k}) = u_ik * s_i``,
``m_i(frame) = 1 - s_i`` where the membership row ``u_i`` lies on the class
simplex.  The unit masses are combined with Dempster's rule, staying inside
the singletons-plus-frame family, so one input yields K singleton masses and
an ignorance mass in O(I*(H+K)) operations.

The layer is trained by gradient descent, so the whole map has an exact
hand-written backward pass.  Constrained parameters are stored through the
smooth reparameterizations in :mod:`evifuse.reparam`: alpha through a
logistic squash, gamma through a positive squash, membership rows through a
normalized exponential.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import reparam
from .dst import Frame, SimpleMassFunction, TotalConflictError

#: Initialization constants for the activation parameters.
ALPHA_INIT = 0.5
GAMMA_INIT = 0.01


@dataclass
class EnnParameters:
    """Trainable state of one evidence-mapping layer.

    The stored arrays are unconstrained; the ``alpha``, ``gamma`` and
    ``memberships`` properties expose the feasible values the forward pass
    uses.  At raw zeros the squashes reproduce the standard initialization
    (alpha 0.5, gamma ``gamma_scale``) bit-exactly.
    """

    prototypes: np.ndarray  # (I, H)
    alpha_raw: np.ndarray  # (I,)
    gamma_raw: np.ndarray  # (I,)
    membership_logits: np.ndarray  # (I, K)
    gamma_scale: float = GAMMA_INIT

    @property
    def n_prototypes(self) -> int:
        return self.prototypes.shape[0]

    @property
    def n_features(self) -> int:
        return self.prototypes.shape[1]

    @property
    def n_classes(self) -> int:
        return self.membership_logits.shape[1]

    @property
    def alpha(self) -> np.ndarray:
        return reparam.sigmoid(self.alpha_raw)

    @property
    def gamma(self) -> np.ndarray:
        return reparam.positive(self.gamma_raw, self.gamma_scale)

    @property
    def memberships(self) -> np.ndarray:
        return reparam.softmax_rows(self.membership_logits)

    @classmethod
    def from_constrained(
        cls,
        prototypes: np.ndarray,
        alpha: np.ndarray,
        gamma: np.ndarray,
        memberships: np.ndarray,
        gamma_scale: float = GAMMA_INIT,
    ) -> "EnnParameters":
        """Build raw parameters whose squashed values reproduce the inputs
        (up to float rounding of the inverse maps)."""
        alpha = np.asarray(alpha, dtype=float)
        gamma = np.asarray(gamma, dtype=float)
        memberships = np.asarray(memberships, dtype=float)
        return cls(
            prototypes=np.array(prototypes, dtype=float),
            alpha_raw=reparam.sigmoid_inverse(alpha),
            gamma_raw=reparam.positive_inverse(gamma, gamma_scale),
            membership_logits=np.log(np.maximum(memberships, 1e-300)),
            gamma_scale=gamma_scale,
        )

    def copy(self) -> "EnnParameters":
        return EnnParameters(
            self.prototypes.copy(),
            self.alpha_raw.copy(),
            self.gamma_raw.copy(),
            self.membership_logits.copy(),
            self.gamma_scale,
        )


def init_enn(
    n_prototypes: int, n_classes: int, n_features: int, seed: int
) -> EnnParameters:
    """Standard initialization: alpha 0.5 and gamma 0.01 exactly, prototypes
    standard normal, membership rows uniform draws normalized to sum one.

    Deterministic per seed; prototypes are drawn before memberships.
    """
    if min(n_prototypes, n_classes, n_features) < 1:
        raise ValueError("sizes must be at least 1")
    rng = np.random.default_rng(seed)
    prototypes = rng.standard_normal((n_prototypes, n_features))
    draws = np.maximum(rng.random((n_prototypes, n_classes)), 1e-12)
    return EnnParameters(
        prototypes=prototypes,
        alpha_raw=np.zeros(n_prototypes),
        gamma_raw=np.zeros(n_prototypes),
        membership_logits=np.log(draws),
        gamma_scale=GAMMA_INIT,
    )


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------


def activations(
    feats: np.ndarray, prototypes: np.ndarray, alpha: np.ndarray, gamma: np.ndarray
) -> np.ndarray:
    """Similarities ``s`` of shape (N, I) for a batch of feature vectors."""
    feats = np.asarray(feats, dtype=float)
    if feats.shape[1] != prototypes.shape[1]:
        raise ValueError(
            f"feature dim {feats.shape[1]} != prototype dim {prototypes.shape[1]}"
        )
    diff = feats[:, None, :] - prototypes[None, :, :]
    dist2 = np.einsum("nih,nih->ni", diff, diff)
    return alpha[None, :] * np.exp(-gamma[None, :] * dist2)


def prototype_activation(x: np.ndarray, params: EnnParameters) -> np.ndarray:
    """Similarities of a single feature vector to every prototype."""
    x = np.asarray(x, dtype=float)
    if x.shape != (params.n_features,):
        raise ValueError(f"expected feature vector of length {params.n_features}")
    return activations(x[None, :], params.prototypes, params.alpha, params.gamma)[0]


def prototype_mass(
    s_i: float, membership_row: np.ndarray, frame: Frame | None = None
) -> SimpleMassFunction:
    """Evidence of one prototype: singleton masses ``u_k * s`` and ignorance
    ``1 - s``."""
    membership_row = np.asarray(membership_row, dtype=float)
    if not 0.0 <= s_i <= 1.0:
        raise ValueError(f"similarity {s_i!r} outside [0, 1]")
    if abs(membership_row.sum() - 1.0) > 1e-9 or np.any(membership_row < 0):
        raise ValueError("membership row is not on the simplex")
    frame = frame or Frame.indexed(membership_row.shape[0])
    return SimpleMassFunction(frame, membership_row * s_i, 1.0 - s_i)


@dataclass
class EnnCache:
    """Intermediates of one batched forward pass, kept for the backward."""

    feats: np.ndarray
    prototypes: np.ndarray
    alpha: np.ndarray
    gamma: np.ndarray
    memberships: np.ndarray
    dist2: np.ndarray  # (N, I)
    decay: np.ndarray  # (N, I) exp(-gamma * dist2)
    s: np.ndarray  # (N, I)
    mass_steps: list[np.ndarray] = field(default_factory=list)  # (N, K) per step
    theta_steps: list[np.ndarray] = field(default_factory=list)  # (N,) per step
    totals: list[np.ndarray] = field(default_factory=list)  # (N,) per step


def forward_masses(
    feats: np.ndarray,
    prototypes: np.ndarray,
    alpha: np.ndarray,
    gamma: np.ndarray,
    memberships: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, EnnCache]:
    """Batched layer forward: per-voxel singleton masses and ignorance mass.

    Prototype masses are folded in index order with the normalized rule,
    dividing the pairwise conflict out at each step; the order is fixed for
    bit-reproducibility (the result is order-independent up to rounding).
    Returns ``(masses (N, K), theta (N,), cache)``.
    """
    feats = np.asarray(feats, dtype=float)
    n = feats.shape[0]
    n_proto, n_classes = memberships.shape
    diff = feats[:, None, :] - prototypes[None, :, :]
    dist2 = np.einsum("nih,nih->ni", diff, diff)
    decay = np.exp(-gamma[None, :] * dist2)
    s = alpha[None, :] * decay

    mass = np.zeros((n, n_classes))
    theta = np.ones(n)
    cache = EnnCache(feats, prototypes, alpha, gamma, memberships, dist2, decay, s)
    cache.mass_steps.append(mass)
    cache.theta_steps.append(theta)
    for i in range(n_proto):
        m_i = memberships[i][None, :] * s[:, i : i + 1]
        w_i = 1.0 - s[:, i]
        prod = mass * m_i + mass * w_i[:, None] + theta[:, None] * m_i
        prod_theta = theta * w_i
        total = prod.sum(axis=1) + prod_theta
        if np.any(total <= 1e-12):
            raise TotalConflictError("prototype evidence is totally conflicting")
        mass = prod / total[:, None]
        theta = prod_theta / total
        cache.mass_steps.append(mass)
        cache.theta_steps.append(theta)
        cache.totals.append(total)
    return mass, theta, cache


def enn_forward(
    x: np.ndarray, params: EnnParameters, frame: Frame | None = None
) -> SimpleMassFunction:
    """Map a single feature vector to its combined simple mass function."""
    x = np.asarray(x, dtype=float)
    masses, theta, _ = forward_masses(
        x[None, :], params.prototypes, params.alpha, params.gamma, params.memberships
    )
    frame = frame or Frame.indexed(params.n_classes)
    return SimpleMassFunction(frame, masses[0], float(theta[0]))


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


@dataclass
class EnnGradients:
    """Exact partial derivatives of the layer output.

    All fields are partials of the forward map with respect to the
    constrained quantities.  ``memberships`` holds the per-coordinate
    partials; ``memberships_tangent`` removes the component normal to the
    simplex for use on the constraint manifold.
    """

    feats: np.ndarray  # (N, H)
    prototypes: np.ndarray  # (I, H)
    alpha: np.ndarray  # (I,)
    gamma: np.ndarray  # (I,)
    memberships: np.ndarray  # (I, K)

    @property
    def memberships_tangent(self) -> np.ndarray:
        return reparam.simplex_tangent_projection(self.memberships)


def backward(
    cache: EnnCache, grad_mass: np.ndarray, grad_theta: np.ndarray
) -> EnnGradients:
    """Reverse sweep through the combination recurrence and the activations.

    ``grad_mass`` (N, K) and ``grad_theta`` (N,) are upstream gradients with
    respect to the layer's output singleton and ignorance masses.
    """
    s = cache.s
    memberships = cache.memberships
    n, n_proto = s.shape
    grad_s = np.zeros((n, n_proto))
    grad_u = np.zeros_like(memberships)
    g_mass = np.array(grad_mass, dtype=float)
    g_theta = np.array(grad_theta, dtype=float)

    for i in reversed(range(n_proto)):
        mass_in = cache.mass_steps[i]
        theta_in = cache.theta_steps[i]
        mass_out = cache.mass_steps[i + 1]
        theta_out = cache.theta_steps[i + 1]
        total = cache.totals[i]
        m_i = memberships[i][None, :] * s[:, i : i + 1]
        w_i = 1.0 - s[:, i]

        # through the conflict normalization
        v = (g_mass * mass_out).sum(axis=1) + g_theta * theta_out
        g_prod = (g_mass - v[:, None]) / total[:, None]
        g_prod_theta = (g_theta - v) / total

        # through the bilinear product step
        g_mass = g_prod * (m_i + w_i[:, None])
        g_m_i = g_prod * (mass_in + theta_in[:, None])
        g_w_i = (g_prod * mass_in).sum(axis=1) + g_prod_theta * theta_in
        g_theta = (g_prod * m_i).sum(axis=1) + g_prod_theta * w_i

        grad_s[:, i] = (g_m_i * memberships[i][None, :]).sum(axis=1) - g_w_i
        grad_u[i] = (g_m_i * s[:, i : i + 1]).sum(axis=0)

    # similarities back to the activation parameters and inputs
    grad_alpha = (grad_s * cache.decay).sum(axis=0)
    grad_gamma = -(grad_s * s * cache.dist2).sum(axis=0)
    grad_dist2 = -grad_s * s * cache.gamma[None, :]
    diff = cache.feats[:, None, :] - cache.prototypes[None, :, :]
    weighted = 2.0 * grad_dist2[:, :, None] * diff
    grad_feats = weighted.sum(axis=1)
    grad_prototypes = -weighted.sum(axis=0)
    return EnnGradients(grad_feats, grad_prototypes, grad_alpha, grad_gamma, grad_u)


def raw_gradients(params: EnnParameters, grads: EnnGradients) -> dict[str, np.ndarray]:
    """Chain constrained-space gradients to the stored raw parameters."""
    return {
        "prototypes": grads.prototypes,
        "alpha_raw": grads.alpha * reparam.sigmoid_grad(params.alpha),
        "gamma_raw": grads.gamma
        * reparam.positive_grad(params.gamma_raw, params.gamma_scale),
        "membership_logits": reparam.softmax_rows_backward(
            params.memberships, grads.memberships
        ),
    }
