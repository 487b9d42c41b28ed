"""End-to-end fusion pipeline: extractors, evidence mapping, fused decision.

One model holds, per modality, a feature extractor and an evidence-mapping
layer, plus the shared reliability coefficients.  The forward pass maps T
images of one example to per-modality simple masses and a fused per-voxel
probability grid; ``loss_and_grads`` additionally back-propagates the
two-part loss to every trainable array.

Trainable arrays are exposed by name through :meth:`FusionModel.parameters`
and updated in place by the optimizer, so snapshots and restores go through
plain array copies.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import enn, features, fusion, losses
from .dst import Frame


@dataclass
class ExampleOutput:
    """Forward results for one example, flattened to N = h*w voxels."""

    grid_shape: tuple[int, int]
    masses: np.ndarray  # (T, N, K) singleton masses
    thetas: np.ndarray  # (T, N) ignorance masses
    contours: np.ndarray  # (T, N, K)
    fused_probs: np.ndarray  # (N, K)

    def fused_grid(self) -> np.ndarray:
        h, w = self.grid_shape
        return self.fused_probs.T.reshape(-1, h, w)

    def modality_probs(self, t: int) -> np.ndarray:
        """Single-modality decision probabilities: the modality's own
        (undiscounted) contour, normalized."""
        pl = self.contours[t]
        return pl / pl.sum(axis=1, keepdims=True)

    def modality_grid(self, t: int) -> np.ndarray:
        h, w = self.grid_shape
        return self.modality_probs(t).T.reshape(-1, h, w)


@dataclass
class FusionModel:
    frame: Frame
    modalities: tuple[str, ...]
    extractors: list[features.ExtractorParams]
    enn_params: list[enn.EnnParameters]
    reliability: fusion.ReliabilityMatrix

    @property
    def n_modalities(self) -> int:
        return len(self.modalities)

    @classmethod
    def create(
        cls,
        frame: Frame,
        modalities: Sequence[str],
        channels: Sequence[int],
        n_features: int = 2,
        radius: int = 1,
        hidden: int = 16,
        n_prototypes: int = 10,
        seed: int = 0,
    ) -> "FusionModel":
        """Fresh model with per-modality sub-seeds derived from ``seed``."""
        modalities = tuple(modalities)
        extractors = []
        enns = []
        for t, c in enumerate(channels):
            fe_seed = np.random.SeedSequence([seed, 1, t]).generate_state(1)[0]
            em_seed = np.random.SeedSequence([seed, 2, t]).generate_state(1)[0]
            extractors.append(
                features.init_extractor(c, n_features, radius, hidden, int(fe_seed))
            )
            enns.append(enn.init_enn(n_prototypes, frame.k, n_features, int(em_seed)))
        reliability = fusion.init_reliability(
            len(modalities), frame.k, frame, modalities
        )
        return cls(frame, modalities, extractors, enns, reliability)

    # -- parameter plumbing -------------------------------------------------

    def parameters(
        self, include_fe: bool = True, include_em: bool = True, include_beta: bool = True
    ) -> dict[str, np.ndarray]:
        """Name -> live array views, in a fixed deterministic order."""
        params: dict[str, np.ndarray] = {}
        if include_fe:
            for t, ext in enumerate(self.extractors):
                for j, (weight, bias) in enumerate(ext.layers):
                    params[f"fe{t}.w{j}"] = weight
                    params[f"fe{t}.b{j}"] = bias
        if include_em:
            for t, em in enumerate(self.enn_params):
                params[f"em{t}.prototypes"] = em.prototypes
                params[f"em{t}.alpha_raw"] = em.alpha_raw
                params[f"em{t}.gamma_raw"] = em.gamma_raw
                params[f"em{t}.membership_logits"] = em.membership_logits
        if include_beta:
            params["beta_raw"] = self.reliability.raw
        return params

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: arr.copy() for name, arr in self.parameters().items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for name, arr in self.parameters().items():
            np.copyto(arr, snap[name])

    # -- forward ------------------------------------------------------------

    def forward_example(self, images: Sequence[np.ndarray]) -> ExampleOutput:
        out, _ = self._forward_with_caches(images)
        return out

    def _forward_with_caches(self, images: Sequence[np.ndarray]):
        if len(images) != self.n_modalities:
            raise ValueError(f"expected {self.n_modalities} modality images")
        grid_shape = images[0].shape[1:]
        n = grid_shape[0] * grid_shape[1]
        k = self.frame.k
        t_count = self.n_modalities
        masses = np.empty((t_count, n, k))
        thetas = np.empty((t_count, n))
        fe_caches = []
        em_caches = []
        for t, img in enumerate(images):
            if img.shape[1:] != grid_shape:
                raise ValueError("modality images differ in grid shape")
            patches = features.extract_patches(img, self.extractors[t].radius)
            feats, fe_inputs = features.forward_flat(patches, self.extractors[t])
            em = self.enn_params[t]
            m, theta, em_cache = enn.forward_masses(
                feats, em.prototypes, em.alpha, em.gamma, em.memberships
            )
            masses[t] = m
            thetas[t] = theta
            fe_caches.append(fe_inputs)
            em_caches.append(em_cache)
        contours = masses + thetas[:, :, None]
        probs, _, _, fuse_cache = fusion.fuse_batch(contours, self.reliability.beta)
        out = ExampleOutput(grid_shape, masses, thetas, contours, probs)
        return out, (fe_caches, em_caches, fuse_cache)

    # -- loss and gradients ---------------------------------------------------

    def loss_and_grads(
        self,
        images: Sequence[np.ndarray],
        one_hot_flat: np.ndarray,
        train_fe: bool = True,
    ) -> tuple[float, dict[str, np.ndarray], dict[str, float]]:
        """Total loss, gradients for every trainable array, and the two
        loss terms.  With ``train_fe`` false the extractor stages are left
        out of the backward pass entirely and get no gradient entries.
        """
        out, (fe_caches, em_caches, fuse_cache) = self._forward_with_caches(images)
        loss_s, grad_masses_s = losses.loss_source_with_grad(out.masses, one_hot_flat)
        loss_f, grad_probs = losses.loss_fused_with_grad(out.fused_probs, one_hot_flat)

        grad_contours, grad_beta = fusion.fuse_batch_backward(fuse_cache, grad_probs)
        grads: dict[str, np.ndarray] = {}
        for t in range(self.n_modalities):
            grad_mass = grad_masses_s[t] + grad_contours[t]
            grad_theta = grad_contours[t].sum(axis=1)
            em_grads = enn.backward(em_caches[t], grad_mass, grad_theta)
            raw = enn.raw_gradients(self.enn_params[t], em_grads)
            grads[f"em{t}.prototypes"] = raw["prototypes"]
            grads[f"em{t}.alpha_raw"] = raw["alpha_raw"]
            grads[f"em{t}.gamma_raw"] = raw["gamma_raw"]
            grads[f"em{t}.membership_logits"] = raw["membership_logits"]
            if train_fe:
                layer_grads = features.backward_flat(
                    self.extractors[t], fe_caches[t], em_grads.feats
                )
                for j, (gw, gb) in enumerate(layer_grads):
                    grads[f"fe{t}.w{j}"] = gw
                    grads[f"fe{t}.b{j}"] = gb
        grads["beta_raw"] = fusion.raw_beta_gradients(self.reliability, grad_beta)
        parts = {"loss_source": loss_s, "loss_fused": loss_f}
        return loss_s + loss_f, grads, parts
