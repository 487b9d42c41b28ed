"""Optimization: Adam, extractor pretraining, three-stage protocol.

The protocol: (1) each extractor is pretrained on its own modality through a
temporary per-voxel softmax head with cross-entropy, which is discarded
afterwards; (2) the extractors are frozen and the evidence-mapping and
reliability parameters are optimized with the two-part loss; (3) everything
is fine-tuned together.  Stages 2 and 3 stop early when the fused Dice on
the validation split has not improved for ``patience`` epochs, and the best
validation snapshot is what survives each stage.

A non-finite loss or gradient aborts training, restoring the best snapshot
seen so far.  With a fixed seed the whole procedure is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dst import Frame
from .features import backward_flat, extract_patches, forward_flat
from .metrics import dice_score
from .model import FusionModel
from .reparam import softmax_rows


class NonFiniteError(RuntimeError):
    """A loss or gradient stopped being finite."""


@dataclass
class TrainingConfig:
    learning_rate: float = 0.01
    batch_size: int = 4
    patience: int = 10
    pretrain_epochs: int = 50
    stage2_max_epochs: int = 100
    stage3_max_epochs: int = 20
    stage1: bool = True
    stage2: bool = True
    stage3: bool = True
    seed: int = 0

    def validate(self) -> list[str]:
        problems = []
        for name in ("learning_rate", "batch_size"):
            if getattr(self, name) <= 0:
                problems.append(f"{name} must be positive")
        for name in ("patience", "pretrain_epochs", "stage2_max_epochs", "stage3_max_epochs"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be nonnegative")
        return problems


class Adam:
    """Bias-corrected adaptive-moment update over a dict of named arrays."""

    def __init__(
        self,
        learning_rate: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """Update every parameter in place; gradients must cover all of them."""
        self.step_count += 1
        bc1 = 1.0 - self.beta1**self.step_count
        bc2 = 1.0 - self.beta2**self.step_count
        for name, value in params.items():
            grad = grads[name]
            if not np.all(np.isfinite(grad)):
                raise NonFiniteError(f"non-finite gradient for {name}")
            if name not in self.m:
                self.m[name] = np.zeros_like(value)
                self.v[name] = np.zeros_like(value)
            self.m[name] *= self.beta1
            self.m[name] += (1.0 - self.beta1) * grad
            self.v[name] *= self.beta2
            self.v[name] += (1.0 - self.beta2) * grad * grad
            update = (self.m[name] / bc1) / (np.sqrt(self.v[name] / bc2) + self.eps)
            value -= self.learning_rate * update

    def state_dict(self) -> dict:
        return {
            "step": self.step_count,
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
        }


@dataclass
class EpochRecord:
    epoch: int
    stage: int
    train_loss: float
    val_loss: float
    val_dice_fused: float
    val_dice_modalities: tuple[float, ...]
    best_val_loss: float  # running minimum, bookkeeping
    best_val_dice: float  # running maximum, drives early stopping


@dataclass
class TrainingResult:
    records: list[EpochRecord] = field(default_factory=list)
    best: dict = field(default_factory=dict)
    diverged: bool = False

    def log_csv(self, modalities: tuple[str, ...]) -> str:
        header = "epoch,stage,train_loss,val_loss,val_dice_fused," + ",".join(
            f"val_dice_{name}" for name in modalities
        )
        lines = [header]
        for r in self.records:
            per_mod = ",".join(f"{d:.17g}" for d in r.val_dice_modalities)
            lines.append(
                f"{r.epoch},{r.stage},{r.train_loss:.17g},{r.val_loss:.17g},"
                f"{r.val_dice_fused:.17g},{per_mod}"
            )
        return "\n".join(lines) + "\n"


def foreground_dice(pred_labels: np.ndarray, true_labels: np.ndarray, k: int) -> float:
    """Mean Dice over the non-background classes 1..K-1."""
    return float(
        np.mean([dice_score(pred_labels, true_labels, c) for c in range(1, k)])
    )


def evaluate_split(model: FusionModel, examples) -> tuple[float, float, tuple[float, ...]]:
    """Mean total loss, mean fused foreground Dice, per-modality Dice."""
    k = model.frame.k
    losses_, fused, per_mod = [], [], []
    for ex in examples:
        out = model.forward_example(ex.images)
        one_hot = ex.one_hot_flat(k)
        from .losses import total_loss  # local to avoid cycle at import time

        losses_.append(total_loss(out.masses, out.fused_probs, one_hot))
        fused_pred = out.fused_grid().argmax(axis=0)
        fused.append(foreground_dice(fused_pred, ex.labels, k))
        per_mod.append(
            [
                foreground_dice(out.modality_grid(t).argmax(axis=0), ex.labels, k)
                for t in range(model.n_modalities)
            ]
        )
    return (
        float(np.mean(losses_)),
        float(np.mean(fused)),
        tuple(float(x) for x in np.mean(per_mod, axis=0)),
    )


# ---------------------------------------------------------------------------
# stage 1: per-modality extractor pretraining
# ---------------------------------------------------------------------------


def pretrain_extractor(
    model: FusionModel, modality: int, examples, config: TrainingConfig
) -> None:
    """Cross-entropy pretraining of one extractor through a throwaway
    softmax head, for a fixed number of epochs."""
    ext = model.extractors[modality]
    k = model.frame.k
    head_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 3, modality]))
    head_w = head_rng.standard_normal((k, ext.n_features)) / np.sqrt(ext.n_features)
    head_b = np.zeros(k)

    params = {}
    for j, (weight, bias) in enumerate(ext.layers):
        params[f"w{j}"] = weight
        params[f"b{j}"] = bias
    params["head_w"] = head_w
    params["head_b"] = head_b
    adam = Adam(config.learning_rate)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 4, modality]))

    cached_patches = [extract_patches(ex.images[modality], ext.radius) for ex in examples]
    labels_flat = [ex.labels.ravel() for ex in examples]

    for _ in range(config.pretrain_epochs):
        order = shuffle_rng.permutation(len(examples))
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            grads = {name: np.zeros_like(arr) for name, arr in params.items()}
            for idx in batch:
                feats, inputs = forward_flat(cached_patches[idx], ext)
                logits = feats @ head_w.T + head_b
                probs = softmax_rows(logits)
                y = labels_flat[idx]
                n = y.size
                if not np.all(np.isfinite(probs)):
                    raise NonFiniteError("non-finite pretraining probabilities")
                grad_logits = probs.copy()
                grad_logits[np.arange(n), y] -= 1.0
                grad_logits /= n
                grads["head_w"] += grad_logits.T @ feats
                grads["head_b"] += grad_logits.sum(axis=0)
                grad_feats = grad_logits @ head_w
                for j, (gw, gb) in enumerate(backward_flat(ext, inputs, grad_feats)):
                    grads[f"w{j}"] += gw
                    grads[f"b{j}"] += gb
            for name in grads:
                grads[name] /= len(batch)
            adam.step(params, grads)


# ---------------------------------------------------------------------------
# stages 2 and 3: evidence and fusion training with early stopping
# ---------------------------------------------------------------------------


def _run_stage(
    model: FusionModel,
    train_examples,
    val_examples,
    config: TrainingConfig,
    stage: int,
    max_epochs: int,
    train_fe: bool,
    result: TrainingResult,
    best: dict,
    epoch_offset: int,
) -> int:
    """One early-stopped optimization stage; returns the new epoch offset."""
    params = model.parameters(include_fe=train_fe)
    adam = Adam(config.learning_rate)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 4 + stage]))
    k = model.frame.k
    one_hots = [ex.one_hot_flat(k) for ex in train_examples]
    epochs_since_best = 0
    epoch = epoch_offset

    for _ in range(max_epochs):
        epoch += 1
        order = shuffle_rng.permutation(len(train_examples))
        example_losses = []
        try:
            for start in range(0, len(order), config.batch_size):
                batch = order[start : start + config.batch_size]
                grads = {name: np.zeros_like(arr) for name, arr in params.items()}
                for idx in batch:
                    loss, g, _ = model.loss_and_grads(
                        train_examples[idx].images, one_hots[idx], train_fe=train_fe
                    )
                    if not np.isfinite(loss):
                        raise NonFiniteError(f"non-finite loss at epoch {epoch}")
                    example_losses.append(loss)
                    for name in grads:
                        grads[name] += g[name]
                for name in grads:
                    grads[name] /= len(batch)
                adam.step(params, grads)
        except NonFiniteError:
            model.restore(best["snapshot"])
            result.diverged = True
            return epoch

        val_loss, val_dice, val_dice_mod = evaluate_split(model, val_examples)
        improved = val_dice > best["val_dice"]
        if improved:
            best.update(
                snapshot=model.snapshot(),
                val_dice=val_dice,
                val_loss=val_loss,
                stage=stage,
                epoch=epoch,
            )
            epochs_since_best = 0
        else:
            epochs_since_best += 1
        result.records.append(
            EpochRecord(
                epoch=epoch,
                stage=stage,
                train_loss=float(np.mean(example_losses)),
                val_loss=val_loss,
                val_dice_fused=val_dice,
                val_dice_modalities=val_dice_mod,
                best_val_loss=min(val_loss, result.records[-1].best_val_loss)
                if result.records
                else val_loss,
                best_val_dice=best["val_dice"],
            )
        )
        # patience 0 still tolerates nothing: stop on the first miss
        if epochs_since_best >= max(config.patience, 1):
            break
    model.restore(best["snapshot"])
    return epoch


def train(
    model: FusionModel, train_examples, val_examples, config: TrainingConfig
) -> TrainingResult:
    """Run the enabled stages; the model ends at the best validation state."""
    problems = config.validate()
    if problems:
        raise ValueError("; ".join(problems))
    if not train_examples or not val_examples:
        raise ValueError("training and validation splits must be nonempty")

    result = TrainingResult()
    if config.stage1:
        for t in range(model.n_modalities):
            pretrain_extractor(model, t, train_examples, config)

    val_loss, val_dice, _ = evaluate_split(model, val_examples)
    best = {
        "snapshot": model.snapshot(),
        "val_dice": val_dice,
        "val_loss": val_loss,
        "stage": 1 if config.stage1 else 0,
        "epoch": 0,
    }
    epoch = 0
    if config.stage2 and not result.diverged:
        epoch = _run_stage(
            model, train_examples, val_examples, config, 2,
            config.stage2_max_epochs, False, result, best, epoch,
        )
    if config.stage3 and not result.diverged:
        epoch = _run_stage(
            model, train_examples, val_examples, config, 3,
            config.stage3_max_epochs, True, result, best, epoch,
        )
    result.best = {k: v for k, v in best.items() if k != "snapshot"}
    return result
