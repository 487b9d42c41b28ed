"""Segmentation accuracy and uncertainty-calibration metrics.

Probability grids are (K, height, width); label grids are integer (height,
width) with background = 0.  The calibration metrics (Brier, NLL, ECE) are
restricted to a per-example bounding box around the foreground, mirroring
evaluation on heavily class-imbalanced images; the Dice score is computed on
the full grid.  Dataset-level numbers are the unweighted mean of per-example
values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

#: Probabilities are floored at this value inside logarithms.
LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class EvaluationRegion:
    """Inclusive bounding box in (row, column) voxel coordinates."""

    row_min: int
    row_max: int
    col_min: int
    col_max: int

    @property
    def slices(self) -> tuple[slice, slice]:
        return slice(self.row_min, self.row_max + 1), slice(self.col_min, self.col_max + 1)

    def crop(self, arr: np.ndarray) -> np.ndarray:
        rows, cols = self.slices
        return arr[..., rows, cols]


def foreground_box(labels: np.ndarray, background: int = 0) -> EvaluationRegion:
    """Tightest axis-aligned box containing every non-background voxel.

    Raises ValueError on an all-background grid; callers evaluating whole
    datasets should skip such examples with a warning.
    """
    fg_rows, fg_cols = np.nonzero(np.asarray(labels) != background)
    if fg_rows.size == 0:
        raise ValueError("all-background example: no foreground to evaluate")
    return EvaluationRegion(
        int(fg_rows.min()), int(fg_rows.max()), int(fg_cols.min()), int(fg_cols.max())
    )


def dice_score(
    pred_labels: np.ndarray, true_labels: np.ndarray, selector: int | Iterable[int]
) -> float:
    """Overlap score 2*TP / (FP + 2*TP + FN) for one class or a merged region.

    When both prediction and truth are empty for the selected class the
    score is defined as 1 (vacuously perfect overlap).
    """
    pred_labels = np.asarray(pred_labels)
    true_labels = np.asarray(true_labels)
    if pred_labels.shape != true_labels.shape:
        raise ValueError("prediction and truth grids differ in shape")
    if isinstance(selector, (int, np.integer)):
        selector = (int(selector),)
    classes = np.array(sorted(set(int(c) for c in selector)))
    pred = np.isin(pred_labels, classes)
    true = np.isin(true_labels, classes)
    tp = int(np.count_nonzero(pred & true))
    fp = int(np.count_nonzero(pred & ~true))
    fn = int(np.count_nonzero(~pred & true))
    denom = fp + 2 * tp + fn
    if denom == 0:
        return 1.0
    return 2.0 * tp / denom


def brier(probs: np.ndarray, one_hot: np.ndarray, region: EvaluationRegion) -> float:
    """Mean over region voxels of the squared distance between the predicted
    probability vector and the one-hot truth, summed over classes."""
    p = region.crop(np.asarray(probs, dtype=float))
    g = region.crop(np.asarray(one_hot, dtype=float))
    if p.size == 0:
        raise ValueError("empty evaluation region")
    return float(((p - g) ** 2).sum(axis=0).mean())


def nll(
    probs: np.ndarray,
    labels: np.ndarray,
    region: EvaluationRegion,
    one_vs_rest: bool = False,
) -> float:
    """Negative log-likelihood summed over the region voxels.

    The default scores the probability assigned to the true class.  With
    ``one_vs_rest`` every class contributes a binary cross-entropy term.
    Probabilities are floored at ``LOG_FLOOR`` inside the logarithms.
    """
    p = region.crop(np.asarray(probs, dtype=float))
    y = region.crop(np.asarray(labels))
    if y.size == 0:
        raise ValueError("empty evaluation region")
    k = p.shape[0]
    flat_p = p.reshape(k, -1)
    flat_y = y.ravel()
    true_p = flat_p[flat_y, np.arange(flat_y.size)]
    if not one_vs_rest:
        return float(-np.log(np.maximum(true_p, LOG_FLOOR)).sum())
    one_hot = np.zeros_like(flat_p)
    one_hot[flat_y, np.arange(flat_y.size)] = 1.0
    pos = one_hot * np.log(np.maximum(flat_p, LOG_FLOOR))
    neg = (1.0 - one_hot) * np.log(np.maximum(1.0 - flat_p, LOG_FLOOR))
    return float(-(pos + neg).sum())


@dataclass(frozen=True)
class CalibrationBins:
    """Equal-width confidence bins with per-bin occupancy statistics.

    Bins partition [0, 1] into ``counts.size`` half-open intervals, the last
    one closed.  Empty bins report zero accuracy and confidence.
    """

    counts: np.ndarray  # (B,)
    accuracy: np.ndarray  # (B,)
    confidence: np.ndarray  # (B,)

    @property
    def n_bins(self) -> int:
        return int(self.counts.size)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def expected_calibration_error(self) -> float:
        weights = self.counts / max(self.total, 1)
        return float((weights * np.abs(self.accuracy - self.confidence)).sum())

    def to_csv(self) -> str:
        lines = ["bin,count,accuracy,confidence"]
        for b in range(self.n_bins):
            lines.append(
                f"{b},{int(self.counts[b])},{self.accuracy[b]:.17g},{self.confidence[b]:.17g}"
            )
        return "\n".join(lines) + "\n"


def bin_confidences(
    confidences: np.ndarray, correct: np.ndarray, n_bins: int = 10
) -> CalibrationBins:
    """Bin flat confidence/correctness arrays into equal-width bins."""
    confidences = np.asarray(confidences, dtype=float)
    correct = np.asarray(correct, dtype=float)
    idx = np.minimum((confidences * n_bins).astype(int), n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins).astype(float)
    acc_sum = np.bincount(idx, weights=correct, minlength=n_bins)
    conf_sum = np.bincount(idx, weights=confidences, minlength=n_bins)
    nonzero = counts > 0
    accuracy = np.zeros(n_bins)
    confidence = np.zeros(n_bins)
    accuracy[nonzero] = acc_sum[nonzero] / counts[nonzero]
    confidence[nonzero] = conf_sum[nonzero] / counts[nonzero]
    return CalibrationBins(counts, accuracy, confidence)


def region_confidences(
    probs: np.ndarray, labels: np.ndarray, region: EvaluationRegion
) -> tuple[np.ndarray, np.ndarray]:
    """Per-voxel max-probability confidence and argmax correctness flags."""
    p = region.crop(np.asarray(probs, dtype=float))
    y = region.crop(np.asarray(labels))
    if y.size == 0:
        raise ValueError("empty evaluation region")
    flat_p = p.reshape(p.shape[0], -1)
    predicted = flat_p.argmax(axis=0)
    confidences = flat_p.max(axis=0)
    return confidences, (predicted == y.ravel()).astype(float)


def calibration_bins(
    probs: np.ndarray, labels: np.ndarray, region: EvaluationRegion, n_bins: int = 10
) -> CalibrationBins:
    confidences, correct = region_confidences(probs, labels, region)
    return bin_confidences(confidences, correct, n_bins)


def ece(
    probs: np.ndarray, labels: np.ndarray, region: EvaluationRegion, n_bins: int = 10
) -> float:
    """Expected calibration error: the occupancy-weighted mean absolute gap
    between per-bin accuracy and per-bin confidence."""
    return calibration_bins(probs, labels, region, n_bins).expected_calibration_error()
