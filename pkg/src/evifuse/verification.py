"""Independent brute-force oracles and gradient-check utilities.

Everything here deliberately avoids the optimized code paths it is used to
check: mass algebra is done on dense powerset arrays with explicit loops,
and gradients are estimated by central finite differences.  The library's
self-test command and the test suite both drive these oracles.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .dst import Frame, MassFunction, SimpleMassFunction


# ---------------------------------------------------------------------------
# dense powerset algebra
# ---------------------------------------------------------------------------


def dense_masses(m: MassFunction) -> np.ndarray:
    """Mass function as a dense array indexed by subset bitmask."""
    out = np.zeros(1 << m.frame.k)
    for bits, value in m.masses.items():
        out[bits] = value
    return out


def dense_combine(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, float]:
    """Normalized conjunctive combination by full double enumeration."""
    size = a.shape[0]
    out = np.zeros(size)
    conflict = 0.0
    for i in range(size):
        if a[i] == 0.0:
            continue
        for j in range(size):
            if b[j] == 0.0:
                continue
            inter = i & j
            if inter:
                out[inter] += a[i] * b[j]
            else:
                conflict += a[i] * b[j]
    if conflict >= 1.0:
        raise ValueError("total conflict in oracle combination")
    return out / (1.0 - conflict), conflict


def dense_belief(masses: np.ndarray, subset: int) -> float:
    return float(sum(masses[b] for b in range(masses.shape[0]) if b & ~subset == 0))


def dense_plausibility(masses: np.ndarray, subset: int) -> float:
    return float(sum(masses[b] for b in range(masses.shape[0]) if b & subset))


def dense_contour(masses: np.ndarray, k: int) -> np.ndarray:
    return np.array([dense_plausibility(masses, 1 << i) for i in range(k)])


def dense_contextual_discount(masses: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Per-class discounting by direct evaluation of the defining sum:
    for each subset A, add ``m(B)`` over subsets B of A weighted by
    ``prod_{k in A\\B} (1 - beta_k) * prod_{l not in A} beta_l``.
    """
    k = beta.shape[0]
    size = 1 << k
    out = np.zeros(size)
    for target in range(size):
        acc = 0.0
        for source in range(size):
            if masses[source] == 0.0 or source & ~target:
                continue
            weight = 1.0
            for idx in range(k):
                bit = 1 << idx
                if target & bit and not source & bit:
                    weight *= 1.0 - beta[idx]
                elif not target & bit:
                    weight *= beta[idx]
            acc += masses[source] * weight
        out[target] = acc
    return out


# ---------------------------------------------------------------------------
# random instances
# ---------------------------------------------------------------------------


def random_mass(rng: np.random.Generator, frame: Frame, max_focal: int = 6) -> MassFunction:
    """Random mass function with a handful of distinct nonempty focal sets."""
    n_subsets = frame.full  # nonempty subsets are 1..full
    count = int(rng.integers(1, min(max_focal, n_subsets) + 1))
    focal = rng.choice(np.arange(1, n_subsets + 1), size=count, replace=False)
    weights = rng.random(count) + 1e-3
    weights /= weights.sum()
    return MassFunction(frame, {int(b): float(w) for b, w in zip(focal, weights)})


def random_simple(rng: np.random.Generator, frame: Frame) -> SimpleMassFunction:
    """Random member of the singletons-plus-frame family with positive
    ignorance mass (so any two are combinable)."""
    weights = rng.random(frame.k + 1) + 1e-3
    weights /= weights.sum()
    return SimpleMassFunction(frame, weights[:-1], float(weights[-1]))


def random_reliability(rng: np.random.Generator, k: int) -> np.ndarray:
    return rng.random(k)


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------

FD_STEP = 1e-5
FD_REL_TOL = 1e-4
#: Relative-error denominator floor; keeps 0-vs-0 comparisons from blowing
#: up on finite-difference noise.
FD_DENOM_FLOOR = 1e-6


def finite_difference_gradient(
    f: Callable[[np.ndarray], float], x: np.ndarray, step: float = FD_STEP
) -> np.ndarray:
    """Central finite differences of a scalar function, one coordinate at a
    time."""
    x = np.array(x, dtype=float)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        saved = x[idx]
        x[idx] = saved + step
        hi = f(x)
        x[idx] = saved - step
        lo = f(x)
        x[idx] = saved
        grad[idx] = (hi - lo) / (2.0 * step)
    return grad


def max_relative_error(
    analytic: np.ndarray, numeric: np.ndarray, floor: float = FD_DENOM_FLOOR
) -> float:
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_gradient(
    f: Callable[[np.ndarray], float],
    x: np.ndarray,
    analytic: np.ndarray,
    step: float = FD_STEP,
    tol: float = FD_REL_TOL,
) -> float:
    """Assert-style helper: returns the max relative error, raising if over
    tolerance."""
    numeric = finite_difference_gradient(f, x, step)
    err = max_relative_error(analytic, numeric)
    if err >= tol:
        raise AssertionError(
            f"gradient mismatch: max relative error {err:.3e} >= {tol:.1e}"
        )
    return err
