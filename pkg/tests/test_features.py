"""Patch extractor: reference-oracle equality, gradients, covariance."""

import numpy as np
import pytest

from evifuse import features
from evifuse.verification import finite_difference_gradient, max_relative_error


def test_zero_image_zero_bias_gives_zero_features():
    params = features.init_extractor(channels=1, n_features=2, radius=1, hidden=4, seed=0)
    out = features.extract(np.zeros((1, 5, 6)), params)
    np.testing.assert_allclose(out, 0.0)


def test_identity_single_layer_passes_channels_through():
    img = np.random.default_rng(0).standard_normal((3, 4, 5))
    params = features.ExtractorParams(radius=0, layers=[(np.eye(3), np.zeros(3))])
    np.testing.assert_allclose(features.extract(img, params), img)


def naive_extract(img, params):
    """Per-voxel double loop with explicit edge clamping."""
    c, h, w = img.shape
    r = params.radius
    out = np.zeros((params.n_features, h, w))
    for y in range(h):
        for x in range(w):
            patch = []
            for ch in range(c):
                for dy in range(-r, r + 1):
                    for dx in range(-r, r + 1):
                        yy = min(max(y + dy, 0), h - 1)
                        xx = min(max(x + dx, 0), w - 1)
                        patch.append(img[ch, yy, xx])
            v = np.array(patch)
            last = len(params.layers) - 1
            for j, (weight, bias) in enumerate(params.layers):
                v = weight @ v + bias
                if j != last:
                    v = np.tanh(v)
            out[:, y, x] = v
    return out


def test_extract_matches_naive_reference():
    rng = np.random.default_rng(1)
    img = rng.standard_normal((2, 6, 7))
    params = features.init_extractor(channels=2, n_features=3, radius=1, hidden=5, seed=2)
    np.testing.assert_allclose(
        features.extract(img, params), naive_extract(img, params), atol=1e-12
    )


def test_backward_zero_upstream():
    params = features.init_extractor(1, 2, 1, 4, seed=3)
    img = np.random.default_rng(2).standard_normal((1, 4, 4))
    grads = features.extract_backward(img, params, np.zeros((2, 4, 4)))
    for gw, gb in grads:
        np.testing.assert_allclose(gw, 0.0)
        np.testing.assert_allclose(gb, 0.0)


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(3)
    img = rng.standard_normal((1, 4, 5))
    params = features.init_extractor(1, 2, 1, 3, seed=4)
    upstream = rng.standard_normal((2, 4, 5))
    grads = features.extract_backward(img, params, upstream)

    for j in range(len(params.layers)):
        for part in (0, 1):  # weight, bias
            def f(vec, j=j, part=part):
                probe = params.copy()
                layer = list(probe.layers[j])
                layer[part] = vec.reshape(params.layers[j][part].shape)
                probe.layers[j] = tuple(layer)
                return float((features.extract(img, probe) * upstream).sum())

            numeric = finite_difference_gradient(f, params.layers[j][part].ravel())
            assert max_relative_error(grads[j][part].ravel(), numeric) < 1e-4


def test_last_layer_bias_gradient_is_upstream_sum():
    rng = np.random.default_rng(4)
    img = rng.standard_normal((1, 5, 5))
    params = features.init_extractor(1, 2, 1, 3, seed=5)
    upstream = rng.standard_normal((2, 5, 5))
    grads = features.extract_backward(img, params, upstream)
    np.testing.assert_allclose(grads[-1][1], upstream.reshape(2, -1).sum(axis=1), atol=1e-12)


def test_init_deterministic_and_zero_biases():
    a = features.init_extractor(2, 3, 1, 8, seed=6)
    b = features.init_extractor(2, 3, 1, 8, seed=6)
    for (wa, ba), (wb, bb) in zip(a.layers, b.layers):
        assert np.array_equal(wa, wb)
        np.testing.assert_allclose(ba, 0.0)
        np.testing.assert_allclose(bb, 0.0)


def test_init_weight_variance_near_inverse_fan_in():
    params = features.init_extractor(channels=4, n_features=2, radius=2, hidden=400, seed=7)
    weight = params.layers[0][0]  # (400, 100): plenty of samples
    fan_in = weight.shape[1]
    assert weight.var() == pytest.approx(1.0 / fan_in, rel=0.1)


def test_translation_covariance_in_interior():
    rng = np.random.default_rng(5)
    img = rng.standard_normal((1, 10, 10))
    params = features.init_extractor(1, 2, 1, 4, seed=8)
    shifted = np.roll(img, shift=2, axis=2)
    base = features.extract(img, params)
    moved = features.extract(shifted, params)
    # interior columns unaffected by either image's padding
    np.testing.assert_allclose(moved[:, :, 3:9], base[:, :, 1:7], atol=1e-12)


def test_determinism_bitwise():
    rng = np.random.default_rng(6)
    img = rng.standard_normal((2, 6, 6))
    params = features.init_extractor(2, 2, 1, 4, seed=9)
    assert np.array_equal(features.extract(img, params), features.extract(img, params))
