"""Dataset container format and synthetic multimodal scene generation.

The container is a little-endian binary file: an 8-byte magic, a version,
counts and grid dimensions, length-prefixed frame labels and modality
names, then per example the modality planes as float64 and the label grid
as uint16.

The synthetic generator plants per-modality, per-class signal fidelities:
every voxel of true class k renders its class intensity in modality t with
probability ``fidelity[t, k]`` and a confusable intensity (another class's,
chosen uniformly) otherwise, plus Gaussian noise.  Low fidelity for a class
makes that modality an unreliable witness for it, which is what the learned
reliability coefficients are expected to discover.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dst import Frame

MAGIC = b"EVIFDSET"
VERSION = 1


@dataclass
class LabeledExample:
    images: list[np.ndarray]  # per modality, (C_t, h, w)
    labels: np.ndarray  # (h, w) int

    def one_hot(self, k: int) -> np.ndarray:
        grid = np.zeros((k, *self.labels.shape))
        rows, cols = np.indices(self.labels.shape)
        grid[self.labels, rows, cols] = 1.0
        return grid

    def one_hot_flat(self, k: int) -> np.ndarray:
        flat = self.labels.ravel()
        out = np.zeros((flat.size, k))
        out[np.arange(flat.size), flat] = 1.0
        return out


@dataclass
class Dataset:
    frame: Frame
    modalities: tuple[str, ...]
    examples: list[LabeledExample]

    @property
    def channels(self) -> tuple[int, ...]:
        return tuple(img.shape[0] for img in self.examples[0].images)

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.examples[0].labels.shape


@dataclass
class SyntheticSpec:
    height: int = 32
    width: int = 32
    n_classes: int = 3
    n_modalities: int = 2
    fidelity: np.ndarray | None = None  # (T, K) in [0.5, 1]; default all ones
    noise: float = 0.05
    shapes: tuple[str, ...] = ("blob", "stripe")
    seed: int = 0
    blob_radius: tuple[float, float] = (3.0, 6.0)
    stripe_width: tuple[int, int] = (2, 4)
    max_shapes_per_class: int = 2

    def __post_init__(self) -> None:
        if self.fidelity is None:
            self.fidelity = np.ones((self.n_modalities, self.n_classes))
        self.fidelity = np.asarray(self.fidelity, dtype=float)
        expected = (self.n_modalities, self.n_classes)
        if self.fidelity.shape != expected:
            raise ValueError(f"fidelity shape {self.fidelity.shape} != {expected}")
        if np.any(self.fidelity < 0.5) or np.any(self.fidelity > 1.0):
            raise ValueError("fidelity values must lie in [0.5, 1]")
        for shape in self.shapes:
            if shape not in ("blob", "stripe"):
                raise ValueError(f"unknown shape kind {shape!r}")

    def class_intensities(self) -> np.ndarray:
        """Evenly spaced canonical intensity per class."""
        return np.linspace(0.0, 1.0, self.n_classes)


def _paint_blob(labels: np.ndarray, cls: int, rng: np.random.Generator, spec: SyntheticSpec):
    h, w = labels.shape
    ry = rng.uniform(*spec.blob_radius)
    rx = rng.uniform(*spec.blob_radius)
    cy = rng.uniform(ry, h - 1 - ry)
    cx = rng.uniform(rx, w - 1 - rx)
    rows, cols = np.indices((h, w))
    mask = ((rows - cy) / ry) ** 2 + ((cols - cx) / rx) ** 2 <= 1.0
    labels[mask] = cls


def _paint_stripe(labels: np.ndarray, cls: int, rng: np.random.Generator, spec: SyntheticSpec):
    h, w = labels.shape
    width = int(rng.integers(spec.stripe_width[0], spec.stripe_width[1] + 1))
    orientation = int(rng.integers(4))  # horizontal, vertical, two diagonals
    rows, cols = np.indices((h, w))
    if orientation == 0:
        axis = rows
        offset = rng.integers(0, h - width + 1)
    elif orientation == 1:
        axis = cols
        offset = rng.integers(0, w - width + 1)
    elif orientation == 2:
        axis = rows + cols
        offset = rng.integers(0, h + w - width)
    else:
        axis = rows - cols + (w - 1)
        offset = rng.integers(0, h + w - width)
    labels[(axis >= offset) & (axis < offset + width)] = cls


def generate(spec: SyntheticSpec, count: int) -> Dataset:
    """Deterministically generate ``count`` examples from the spec's seed."""
    rng = np.random.default_rng(spec.seed)
    intensities = spec.class_intensities()
    k = spec.n_classes
    examples = []
    for _ in range(count):
        labels = np.zeros((spec.height, spec.width), dtype=np.int64)
        for cls in range(1, k):
            for _ in range(int(rng.integers(1, spec.max_shapes_per_class + 1))):
                kind = spec.shapes[int(rng.integers(len(spec.shapes)))]
                if kind == "blob":
                    _paint_blob(labels, cls, rng, spec)
                else:
                    _paint_stripe(labels, cls, rng, spec)
        images = []
        for t in range(spec.n_modalities):
            rendered = intensities[labels]
            flip = rng.random(labels.shape) >= spec.fidelity[t][labels]
            # confusable intensity: a uniformly chosen *other* class
            other = (labels + rng.integers(1, k, labels.shape)) % k
            rendered = np.where(flip, intensities[other], rendered)
            rendered = rendered + rng.normal(0.0, spec.noise, labels.shape)
            images.append(rendered[None, :, :])
        examples.append(LabeledExample(images, labels))
    frame = Frame(("background",) + tuple(f"class{c + 1}" for c in range(1, k)))
    modalities = tuple(chr(ord("A") + t) for t in range(spec.n_modalities))
    return Dataset(frame, modalities, examples)


# ---------------------------------------------------------------------------
# container serialization
# ---------------------------------------------------------------------------


def _pack_string(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise ValueError("unexpected end of payload")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (length,) = self.unpack("<H")
        return self.take(length).decode("utf-8")


def save_dataset(dataset: Dataset, path) -> None:
    h, w = dataset.grid_shape
    channels = dataset.channels
    parts = [MAGIC, struct.pack("<IIIIII", VERSION, len(dataset.modalities),
                                dataset.frame.k, len(dataset.examples), h, w)]
    parts.append(struct.pack(f"<{len(channels)}I", *channels))
    for label in dataset.frame.labels:
        parts.append(_pack_string(label))
    for name in dataset.modalities:
        parts.append(_pack_string(name))
    for ex in dataset.examples:
        if ex.labels.shape != (h, w):
            raise ValueError("examples differ in grid shape")
        for t, img in enumerate(ex.images):
            if img.shape != (channels[t], h, w):
                raise ValueError("modality image shape inconsistent with header")
            parts.append(np.ascontiguousarray(img, dtype="<f8").tobytes())
        if ex.labels.min() < 0 or ex.labels.max() >= dataset.frame.k:
            raise ValueError("label outside 0..K-1")
        parts.append(np.ascontiguousarray(ex.labels, dtype="<u2").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    reader = _Reader(blob)
    if reader.take(len(MAGIC)) != MAGIC:
        raise ValueError("not a dataset container")
    version, t_count, k, n_examples, h, w = reader.unpack("<IIIIII")
    if version != VERSION:
        raise ValueError(f"unsupported dataset version {version} (expected {VERSION})")
    channels = reader.unpack(f"<{t_count}I")
    labels = tuple(reader.string() for _ in range(k))
    modalities = tuple(reader.string() for _ in range(t_count))
    examples = []
    for _ in range(n_examples):
        images = []
        for t in range(t_count):
            count = channels[t] * h * w
            arr = np.frombuffer(reader.take(count * 8), dtype="<f8")
            images.append(arr.reshape(channels[t], h, w).astype(float))
        lab = np.frombuffer(reader.take(h * w * 2), dtype="<u2")
        lab = lab.reshape(h, w).astype(np.int64)
        if lab.max(initial=0) >= k:
            raise ValueError("label outside 0..K-1 in payload")
        examples.append(LabeledExample(images, lab))
    if reader.pos != len(blob):
        raise ValueError("trailing bytes after payload")
    return Dataset(Frame(labels), modalities, examples)
