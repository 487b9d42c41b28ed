"""Per-modality feature extraction at desk scale.

The extractor contract is: image in, one H-vector of features per voxel out,
with exact gradients for training.  The reference extractor is a small patch
network: each voxel's (2r+1)^2 neighborhood (edge-replicated at borders, all
channels) is flattened and pushed through affine layers with tanh between
them, no activation after the last.  Any extractor honoring the same
contract (forward / backward / init / serialize) can replace it without
touching the evidence-mapping or fusion stages.

Array conventions: images are (C, height, width) float arrays, feature maps
are (H, height, width).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ExtractorParams:
    """Window radius and the (weight, bias) pair of each affine layer.

    Weights are (fan_out, fan_in); the first fan_in is C*(2r+1)^2.
    """

    radius: int
    layers: list[tuple[np.ndarray, np.ndarray]]

    @property
    def n_features(self) -> int:
        return self.layers[-1][0].shape[0]

    @property
    def patch_size(self) -> int:
        return self.layers[0][0].shape[1]

    def copy(self) -> "ExtractorParams":
        return ExtractorParams(
            self.radius, [(w.copy(), b.copy()) for w, b in self.layers]
        )


def init_extractor(
    channels: int, n_features: int, radius: int = 1, hidden: int = 16, seed: int = 0
) -> ExtractorParams:
    """Two affine layers, weights normal with variance 1/fan-in, zero biases."""
    if min(channels, n_features, hidden) < 1 or radius < 0:
        raise ValueError("extractor sizes must be positive and radius nonnegative")
    rng = np.random.default_rng(seed)
    patch = channels * (2 * radius + 1) ** 2
    layers = []
    fan_in = patch
    for fan_out in (hidden, n_features):
        weight = rng.standard_normal((fan_out, fan_in)) / np.sqrt(fan_in)
        layers.append((weight, np.zeros(fan_out)))
        fan_in = fan_out
    return ExtractorParams(radius, layers)


def extract_patches(img: np.ndarray, radius: int) -> np.ndarray:
    """Flattened per-voxel neighborhoods, shape (h*w, C*(2r+1)^2).

    Border neighborhoods are completed by edge replication.  The patch
    vector is channel-major, window row-major.
    """
    img = np.asarray(img, dtype=float)
    if img.ndim != 3:
        raise ValueError("image must be (channels, height, width)")
    c, h, w = img.shape
    if radius == 0:
        return img.reshape(c, h * w).T.copy()
    padded = np.pad(img, ((0, 0), (radius, radius), (radius, radius)), mode="edge")
    side = 2 * radius + 1
    windows = np.lib.stride_tricks.sliding_window_view(padded, (side, side), axis=(1, 2))
    # (c, h, w, side, side) -> (h, w, c, side, side) -> (h*w, c*side*side)
    return windows.transpose(1, 2, 0, 3, 4).reshape(h * w, c * side * side)


def forward_flat(
    patches: np.ndarray, params: ExtractorParams
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Run the layer stack on flattened patches.

    Returns the (N, H) features and the list of layer inputs (the cache the
    backward pass consumes).
    """
    inputs = [patches]
    x = patches
    last = len(params.layers) - 1
    for j, (weight, bias) in enumerate(params.layers):
        x = x @ weight.T + bias
        if j != last:
            x = np.tanh(x)
        inputs.append(x)
    return x, inputs


def extract(img: np.ndarray, params: ExtractorParams) -> np.ndarray:
    """Feature planes (H, height, width) for one image."""
    img = np.asarray(img, dtype=float)
    _, h, w = img.shape
    feats, _ = forward_flat(extract_patches(img, params.radius), params)
    return feats.T.reshape(params.n_features, h, w)


def backward_flat(
    params: ExtractorParams, inputs: list[np.ndarray], grad_out: np.ndarray
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Gradients of a scalar loss with respect to every weight and bias.

    ``inputs`` is the cache from :func:`forward_flat`; ``grad_out`` is the
    upstream gradient with respect to the (N, H) features.
    """
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(params.layers)
    g = np.asarray(grad_out, dtype=float)
    last = len(params.layers) - 1
    for j in range(last, -1, -1):
        weight, _ = params.layers[j]
        if j != last:
            g = g * (1.0 - inputs[j + 1] ** 2)  # through tanh, using its output
        grads[j] = (g.T @ inputs[j], g.sum(axis=0))
        if j > 0:
            g = g @ weight
    return grads


def extract_backward(
    img: np.ndarray, params: ExtractorParams, grad_features: np.ndarray
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Parameter gradients for one image given (H, height, width) upstream."""
    patches = extract_patches(img, params.radius)
    _, inputs = forward_flat(patches, params)
    n = patches.shape[0]
    grad_flat = np.asarray(grad_features, dtype=float).reshape(params.n_features, n).T
    return backward_flat(params, inputs, grad_flat)
