"""Dataset ingestion: IDX image/label files and a deterministic synthetic task.

The synthetic generator is a pure function of (spec, split, index): each class
has a fixed base pattern, each sample adds seeded gaussian noise and clamps to
[0, 1], so two processes with the same spec build identical datasets.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .slicing import ValidationError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

_SPLIT_CODES = {"train": 0, "eval": 1, "test": 2}


@dataclass
class ArrayDataset:
    images: np.ndarray  # (M, C, H, W) float32 in [0, 1]
    labels: np.ndarray  # (M,) int64

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class SyntheticSpec:
    classes: int
    image_size: int
    channels: int
    pattern_seed: int
    noise_sigma: float
    train_count: int
    eval_count: int

    def __post_init__(self):
        if self.classes < 2:
            raise ValidationError(f"synthetic classes must be >= 2, got {self.classes}")
        if self.noise_sigma < 0:
            raise ValidationError(f"noise_sigma must be >= 0, got {self.noise_sigma}")

    def count(self, split: str) -> int:
        return self.train_count if split == "train" else self.eval_count


def base_pattern(spec: SyntheticSpec, label: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([spec.pattern_seed, 0, label]))
    return rng.random((spec.channels, spec.image_size, spec.image_size))


def gen_synthetic(spec: SyntheticSpec, split: str, index: int) -> tuple[np.ndarray, int]:
    """One sample: label = index mod K, image = clamp(base + noise, 0, 1)."""
    if split not in _SPLIT_CODES:
        raise ValidationError(f"unknown split {split!r}")
    if index >= spec.count(split):
        raise ValidationError(f"index {index} outside split {split!r} of {spec.count(split)}")
    label = index % spec.classes
    rng = np.random.default_rng(
        np.random.SeedSequence([spec.pattern_seed, 1, _SPLIT_CODES[split], index]))
    noise = spec.noise_sigma * rng.standard_normal(
        (spec.channels, spec.image_size, spec.image_size))
    image = np.clip(base_pattern(spec, label) + noise, 0.0, 1.0)
    return image.astype(np.float32), label


def build_synthetic(spec: SyntheticSpec, split: str) -> ArrayDataset:
    count = spec.count(split)
    images = np.empty((count, spec.channels, spec.image_size, spec.image_size), dtype=np.float32)
    labels = np.empty(count, dtype=np.int64)
    for i in range(count):
        images[i], labels[i] = gen_synthetic(spec, split, i)
    return ArrayDataset(images=images, labels=labels)


def _read_be_u32(f, path: str) -> int:
    raw = f.read(4)
    if len(raw) != 4:
        raise ValidationError(f"{path}: truncated header")
    return struct.unpack(">I", raw)[0]


def load_idx(images_path: str, labels_path: str) -> ArrayDataset:
    """Read an IDX image/label file pair; pixels are normalized to [0, 1]."""
    with open(images_path, "rb") as f:
        magic = _read_be_u32(f, images_path)
        if magic != IDX_IMAGE_MAGIC:
            raise ValidationError(
                f"{images_path}: bad magic 0x{magic:08x}, expected 0x{IDX_IMAGE_MAGIC:08x}")
        count = _read_be_u32(f, images_path)
        rows = _read_be_u32(f, images_path)
        cols = _read_be_u32(f, images_path)
        raw = f.read(count * rows * cols)
        if len(raw) != count * rows * cols:
            raise ValidationError(f"{images_path}: truncated pixel data "
                                  f"({len(raw)} of {count * rows * cols} bytes)")
        images = np.frombuffer(raw, dtype=np.uint8).reshape(count, 1, rows, cols)

    with open(labels_path, "rb") as f:
        magic = _read_be_u32(f, labels_path)
        if magic != IDX_LABEL_MAGIC:
            raise ValidationError(
                f"{labels_path}: bad magic 0x{magic:08x}, expected 0x{IDX_LABEL_MAGIC:08x}")
        label_count = _read_be_u32(f, labels_path)
        raw = f.read(label_count)
        if len(raw) != label_count:
            raise ValidationError(f"{labels_path}: truncated label data")
        labels = np.frombuffer(raw, dtype=np.uint8)

    if label_count != count:
        raise ValidationError(
            f"image count {count} ({images_path}) != label count {label_count} ({labels_path})")
    return ArrayDataset(
        images=images.astype(np.float32) / 255.0,
        labels=labels.astype(np.int64),
    )
