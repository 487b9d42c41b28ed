"""Evidence-mapping layer: activations, masses, combination, gradients."""

import math

import numpy as np
import pytest

from evifuse import enn
from evifuse.dst import Frame, SimpleMassFunction
from evifuse.verification import check_gradient, finite_difference_gradient, max_relative_error


def random_constrained(rng, n_proto, n_classes, n_features):
    prototypes = rng.standard_normal((n_proto, n_features))
    alpha = rng.uniform(0.1, 0.9, n_proto)
    gamma = rng.uniform(0.05, 1.5, n_proto)
    memberships = rng.random((n_proto, n_classes)) + 0.1
    memberships /= memberships.sum(axis=1, keepdims=True)
    return prototypes, alpha, gamma, memberships


# -- activations ----------------------------------------------------------------


def test_activation_at_prototype_equals_alpha():
    params = enn.EnnParameters.from_constrained(
        prototypes=np.array([[1.0, -2.0]]),
        alpha=np.array([0.5]),
        gamma=np.array([0.7]),
        memberships=np.array([[0.5, 0.5]]),
    )
    s = enn.prototype_activation(np.array([1.0, -2.0]), params)
    assert s[0] == pytest.approx(0.5, abs=1e-12)


def test_activation_vanishes_far_away():
    params = enn.EnnParameters.from_constrained(
        prototypes=np.zeros((1, 2)),
        alpha=np.array([0.9]),
        gamma=np.array([1.0]),
        memberships=np.array([[1.0, 0.0]]),
    )
    s = enn.prototype_activation(np.array([100.0, 100.0]), params)
    assert s[0] == pytest.approx(0.0, abs=1e-300)


def test_activation_formula_direct():
    s = enn.activations(
        np.array([[1.0, 0.0]]),
        np.zeros((1, 2)),
        np.array([1.0]),
        np.array([0.01]),
    )
    assert s[0, 0] == pytest.approx(math.exp(-0.01), rel=1e-15)


def test_activation_dimension_mismatch():
    with pytest.raises(ValueError):
        enn.activations(np.zeros((1, 3)), np.zeros((2, 2)), np.ones(2), np.ones(2))


# -- per-prototype masses ---------------------------------------------------------


def test_prototype_mass_certain_membership():
    m = enn.prototype_mass(0.5, np.array([1.0, 0.0]))
    np.testing.assert_allclose(m.singleton_masses, [0.5, 0.0])
    assert m.theta_mass == pytest.approx(0.5)


def test_prototype_mass_zero_similarity_is_vacuous():
    m = enn.prototype_mass(0.0, np.array([0.3, 0.7]))
    np.testing.assert_allclose(m.singleton_masses, 0.0)
    assert m.theta_mass == 1.0


def test_prototype_mass_hand_case():
    m = enn.prototype_mass(0.8, np.array([0.25, 0.75]))
    np.testing.assert_allclose(m.singleton_masses, [0.2, 0.6])
    assert m.theta_mass == pytest.approx(0.2)


# -- layer forward ----------------------------------------------------------------


def test_forward_single_prototype_equals_prototype_mass():
    rng = np.random.default_rng(0)
    prototypes, alpha, gamma, memberships = random_constrained(rng, 1, 3, 2)
    params = enn.EnnParameters.from_constrained(prototypes, alpha, gamma, memberships)
    x = rng.standard_normal(2)
    out = enn.enn_forward(x, params)
    s = enn.prototype_activation(x, params)
    expected = enn.prototype_mass(float(s[0]), params.memberships[0])
    np.testing.assert_allclose(out.singleton_masses, expected.singleton_masses, atol=1e-12)
    assert out.theta_mass == pytest.approx(expected.theta_mass, abs=1e-12)


def test_forward_all_zero_similarity_is_vacuous():
    params = enn.EnnParameters.from_constrained(
        prototypes=np.zeros((3, 2)),
        alpha=np.full(3, 1e-12),
        gamma=np.ones(3),
        memberships=np.full((3, 2), 0.5),
    )
    params.alpha_raw = np.full(3, -800.0)  # squash underflows to exactly 0
    out = enn.enn_forward(np.array([5.0, 5.0]), params)
    np.testing.assert_allclose(out.singleton_masses, 0.0)
    assert out.theta_mass == 1.0


def test_forward_matches_general_dempster_path():
    rng = np.random.default_rng(1)
    frame = Frame.indexed(2)
    for _ in range(50):
        prototypes, alpha, gamma, memberships = random_constrained(rng, 2, 2, 2)
        x = rng.standard_normal(2)
        s = enn.activations(x[None, :], prototypes, alpha, gamma)[0]
        lifted = [
            enn.prototype_mass(float(s[i]), memberships[i], frame).to_mass_function()
            for i in range(2)
        ]
        expected, _ = lifted[0].combine(lifted[1])
        expected = SimpleMassFunction.from_mass_function(expected)
        params = enn.EnnParameters.from_constrained(prototypes, alpha, gamma, memberships)
        out = enn.enn_forward(x, params, frame)
        np.testing.assert_allclose(
            out.singleton_masses, expected.singleton_masses, atol=1e-9
        )
        assert out.theta_mass == pytest.approx(expected.theta_mass, abs=1e-9)


def test_forward_output_is_valid_simple_mass():
    rng = np.random.default_rng(2)
    prototypes, alpha, gamma, memberships = random_constrained(rng, 7, 4, 3)
    feats = rng.standard_normal((40, 3))
    masses, theta, _ = enn.forward_masses(feats, prototypes, alpha, gamma, memberships)
    assert np.all(masses >= 0) and np.all(theta >= 0)
    np.testing.assert_allclose(masses.sum(axis=1) + theta, 1.0, atol=1e-12)


def test_forward_theta_positive_when_similarities_below_one():
    rng = np.random.default_rng(3)
    prototypes, alpha, gamma, memberships = random_constrained(rng, 5, 3, 2)
    feats = rng.standard_normal((30, 2))
    _, theta, _ = enn.forward_masses(feats, prototypes, alpha, gamma, memberships)
    assert np.all(theta > 0)


def test_forward_permutation_equivariant_in_prototypes():
    rng = np.random.default_rng(4)
    prototypes, alpha, gamma, memberships = random_constrained(rng, 6, 3, 2)
    feats = rng.standard_normal((20, 2))
    base, base_theta, _ = enn.forward_masses(feats, prototypes, alpha, gamma, memberships)
    perm = rng.permutation(6)
    shuffled, shuffled_theta, _ = enn.forward_masses(
        feats, prototypes[perm], alpha[perm], gamma[perm], memberships[perm]
    )
    np.testing.assert_allclose(shuffled, base, atol=1e-12)
    np.testing.assert_allclose(shuffled_theta, base_theta, atol=1e-12)


# -- backward ----------------------------------------------------------------------


def weighted_output(feats, prototypes, alpha, gamma, memberships, w_mass, w_theta):
    masses, theta, _ = enn.forward_masses(feats, prototypes, alpha, gamma, memberships)
    return float((w_mass * masses).sum() + (w_theta * theta).sum())


def test_backward_zero_upstream_gives_zero_grads():
    rng = np.random.default_rng(5)
    prototypes, alpha, gamma, memberships = random_constrained(rng, 3, 2, 2)
    feats = rng.standard_normal((4, 2))
    _, _, cache = enn.forward_masses(feats, prototypes, alpha, gamma, memberships)
    grads = enn.backward(cache, np.zeros((4, 2)), np.zeros(4))
    for arr in (grads.feats, grads.prototypes, grads.alpha, grads.gamma, grads.memberships):
        np.testing.assert_allclose(arr, 0.0)


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(6)
    prototypes, alpha, gamma, memberships = random_constrained(rng, 3, 2, 2)
    feats = rng.standard_normal((5, 2))
    w_mass = rng.standard_normal((5, 2))
    w_theta = rng.standard_normal(5)
    _, _, cache = enn.forward_masses(feats, prototypes, alpha, gamma, memberships)
    grads = enn.backward(cache, w_mass, w_theta)

    check_gradient(
        lambda p: weighted_output(feats, p.reshape(3, 2), alpha, gamma, memberships, w_mass, w_theta),
        prototypes.ravel(),
        grads.prototypes.ravel(),
    )
    check_gradient(
        lambda a: weighted_output(feats, prototypes, a, gamma, memberships, w_mass, w_theta),
        alpha,
        grads.alpha,
    )
    check_gradient(
        lambda g: weighted_output(feats, prototypes, alpha, g, memberships, w_mass, w_theta),
        gamma,
        grads.gamma,
    )
    check_gradient(
        lambda u: weighted_output(feats, prototypes, alpha, gamma, u.reshape(3, 2), w_mass, w_theta),
        memberships.ravel(),
        grads.memberships.ravel(),
    )
    check_gradient(
        lambda f: weighted_output(f.reshape(5, 2), prototypes, alpha, gamma, memberships, w_mass, w_theta),
        feats.ravel(),
        grads.feats.ravel(),
    )


def test_backward_raw_space_matches_finite_differences():
    rng = np.random.default_rng(7)
    params = enn.init_enn(3, 2, 2, seed=11)
    params.alpha_raw = rng.standard_normal(3)
    params.gamma_raw = rng.standard_normal(3)
    feats = rng.standard_normal((4, 2))
    w_mass = rng.standard_normal((4, 2))
    w_theta = rng.standard_normal(4)

    def run(p: enn.EnnParameters) -> float:
        return weighted_output(
            feats, p.prototypes, p.alpha, p.gamma, p.memberships, w_mass, w_theta
        )

    _, _, cache = enn.forward_masses(
        feats, params.prototypes, params.alpha, params.gamma, params.memberships
    )
    raw = enn.raw_gradients(params, enn.backward(cache, w_mass, w_theta))

    for name in ("alpha_raw", "gamma_raw", "membership_logits"):
        def f(vec, name=name):
            probe = params.copy()
            setattr(probe, name, vec.reshape(getattr(params, name).shape))
            return run(probe)

        numeric = finite_difference_gradient(f, getattr(params, name).ravel())
        assert max_relative_error(raw[name].ravel(), numeric) < 1e-4


def test_gamma_gradient_zero_when_similarity_zero():
    prototypes = np.zeros((1, 2))
    alpha = np.array([0.0])
    gamma = np.array([0.3])
    memberships = np.array([[0.6, 0.4]])
    feats = np.array([[1.0, 2.0]])
    _, _, cache = enn.forward_masses(feats, prototypes, alpha, gamma, memberships)
    grads = enn.backward(cache, np.ones((1, 2)), np.ones(1))
    assert grads.gamma[0] == 0.0


def test_membership_tangent_projection_rows_sum_zero():
    rng = np.random.default_rng(8)
    prototypes, alpha, gamma, memberships = random_constrained(rng, 3, 3, 2)
    feats = rng.standard_normal((4, 2))
    _, _, cache = enn.forward_masses(feats, prototypes, alpha, gamma, memberships)
    grads = enn.backward(cache, rng.standard_normal((4, 3)), rng.standard_normal(4))
    np.testing.assert_allclose(grads.memberships_tangent.sum(axis=1), 0.0, atol=1e-12)


# -- initialization ----------------------------------------------------------------


def test_init_constants_exact():
    params = enn.init_enn(10, 3, 2, seed=42)
    assert np.all(params.alpha == 0.5)
    assert np.all(params.gamma == 0.01)


def test_init_membership_rows_sum_to_one():
    params = enn.init_enn(8, 4, 3, seed=0)
    np.testing.assert_allclose(params.memberships.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(params.memberships >= 0)


def test_init_deterministic_per_seed():
    a = enn.init_enn(5, 3, 2, seed=7)
    b = enn.init_enn(5, 3, 2, seed=7)
    assert np.array_equal(a.prototypes, b.prototypes)
    assert np.array_equal(a.membership_logits, b.membership_logits)
    c = enn.init_enn(5, 3, 2, seed=8)
    assert not np.array_equal(a.prototypes, c.prototypes)


# -- complexity harness --------------------------------------------------------------


def counted_scalar_forward(x, prototypes, alpha, gamma, memberships):
    """Plain-Python reimplementation counting scalar arithmetic operations."""
    n_proto, n_feat = prototypes.shape
    n_classes = memberships.shape[1]
    ops = 0
    similarities = []
    for i in range(n_proto):
        dist2 = 0.0
        for h in range(n_feat):
            diff = x[h] - prototypes[i, h]
            dist2 += diff * diff
            ops += 3
        similarities.append(alpha[i] * math.exp(-gamma[i] * dist2))
        ops += 3
    mass = [0.0] * n_classes
    theta = 1.0
    for i in range(n_proto):
        s_i = similarities[i]
        w_i = 1.0 - s_i
        ops += 1
        prod = []
        total = 0.0
        for k in range(n_classes):
            m_ik = memberships[i, k] * s_i
            value = mass[k] * m_ik + mass[k] * w_i + theta * m_ik
            total += value
            prod.append(value)
            ops += 7
        prod_theta = theta * w_i
        total += prod_theta
        ops += 2
        for k in range(n_classes):
            mass[k] = prod[k] / total
            ops += 1
        theta = prod_theta / total
        ops += 1
    return np.array(mass), theta, ops


def test_counted_forward_agrees_with_vectorized():
    rng = np.random.default_rng(9)
    prototypes, alpha, gamma, memberships = random_constrained(rng, 4, 3, 2)
    x = rng.standard_normal(2)
    mass, theta, _ = counted_scalar_forward(x, prototypes, alpha, gamma, memberships)
    vec_mass, vec_theta, _ = enn.forward_masses(
        x[None, :], prototypes, alpha, gamma, memberships
    )
    np.testing.assert_allclose(mass, vec_mass[0], atol=1e-12)
    assert theta == pytest.approx(vec_theta[0], abs=1e-12)


def test_per_example_cost_linear_in_prototypes_times_width():
    # the exact count must be I*(a + b*H + c*K): solve the coefficients from
    # three probe sizes, then confirm the formula at three independent sizes
    rng = np.random.default_rng(10)

    def ops_at(n_proto, n_feat, n_classes):
        prototypes, alpha, gamma, memberships = random_constrained(
            rng, n_proto, n_classes, n_feat
        )
        x = rng.standard_normal(n_feat)
        return counted_scalar_forward(x, prototypes, alpha, gamma, memberships)[2]

    base = ops_at(2, 1, 2) / 2
    slope_h = ops_at(2, 2, 2) / 2 - base
    slope_k = ops_at(2, 1, 3) / 2 - base

    for n_proto, n_feat, n_classes in ((5, 3, 4), (10, 2, 3), (20, 6, 2)):
        predicted = n_proto * (
            base + slope_h * (n_feat - 1) + slope_k * (n_classes - 2)
        )
        assert ops_at(n_proto, n_feat, n_classes) == predicted
