"""Evaluation sweeps, unseen-ratio probes, cost model, re-granularization.

FLOPs are counted as multiply-accumulates over the matmul work only
(softmax/LN/GELU element-wise costs excluded), which is the convention that
puts the standard small ViT at roughly 4.6e9 for a 224px/patch-16 config.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .coordination import ce_loss
from .model import ModelConfig, ParamStore, forward, predict
from .slicing import RatioGrid, SliceMode, ValidationError, as_ratio


@dataclass
class SweepRow:
    ratio: Fraction
    accuracy: float
    ce: float
    params: int
    flops: int


@dataclass
class SweepReport:
    rows: list[SweepRow]
    epoch: int
    seed: int
    config_hash: str


@dataclass
class ProbeRow:
    ratio: Fraction
    inbound: bool  # within [smallest, largest]; False means extrapolation below
    accuracy: float
    ce: float
    nearest_trained: Fraction
    nearest_accuracy: float
    gap: float


def evaluate(store: ParamStore, config: ModelConfig, r, images: np.ndarray,
             labels: np.ndarray, batch_size: int = 64,
             require_on_grid: bool = False) -> tuple[float, float]:
    """Top-1 accuracy and mean CE of the width-r subnet on a dataset split.

    r need not be on the grid (probes evaluate unseen ratios); it must still
    give an integral width divisible by the head count.
    """
    config.validate_ratio(r)
    correct = 0
    ce_total = 0.0
    n = len(labels)
    for start in range(0, n, batch_size):
        imgs = images[start:start + batch_size]
        labs = labels[start:start + batch_size]
        out = forward(store, config, imgs, r, require_on_grid=require_on_grid)
        correct += int((predict(out) == labs).sum())
        ce_total += float(ce_loss(out.p_cls, labs).data) * len(labs)
    return correct / n, ce_total / n


def params_count(config: ModelConfig, r=Fraction(1)) -> int:
    """Closed-form parameter count of the width-r slice (fixed axes full)."""
    r = config.validate_ratio(r)
    d = config.width_at(r)
    hidden = config.mlp_ratio * d
    k = config.num_classes
    tok = config.num_tokens
    p = config.patch_dim
    per_block = (
        2 * 2 * d                      # two LN gamma/beta pairs
        + 4 * (d * d + d)              # q, k, v, proj
        + hidden * d + hidden          # fc1
        + d * hidden + d               # fc2
    )
    return (
        2 * d                          # cls + dist tokens
        + tok * d                      # positional embedding
        + d * p + d                    # patch embedding
        + config.depth * per_block
        + 2 * d                        # final LN
        + 2 * (k * d + k)              # both heads
    )


def flops(config: ModelConfig, r=Fraction(1)) -> int:
    """Multiply-accumulate count of one width-r forward pass on one image."""
    r = config.validate_ratio(r)
    d = config.width_at(r)
    n = config.num_patches
    tok = config.num_tokens
    k = config.num_classes
    per_block = (
        4 * tok * d * d                # q, k, v, proj projections
        + 2 * tok * tok * d            # attention scores + apply
        + 2 * config.mlp_ratio * tok * d * d  # fc1 + fc2
    )
    return (
        n * config.patch_dim * d       # patch embedding
        + config.depth * per_block
        + 2 * k * d                    # both heads
    )


def sweep(store: ParamStore, config: ModelConfig, ratios, images: np.ndarray,
          labels: np.ndarray, epoch: int = 0, seed: int = 0,
          config_hash: str = "", batch_size: int = 64) -> SweepReport:
    """Evaluate every requested ratio; rows come back sorted ascending."""
    rows = []
    for r in sorted(as_ratio(x) for x in ratios):
        acc, ce = evaluate(store, config, r, images, labels, batch_size=batch_size)
        rows.append(SweepRow(
            ratio=r,
            accuracy=acc,
            ce=ce,
            params=params_count(config, r),
            flops=flops(config, r),
        ))
    return SweepReport(rows=rows, epoch=epoch, seed=seed, config_hash=config_hash)


def nearest_trained(r: Fraction, grid: RatioGrid) -> Fraction:
    """Closest grid ratio (ties resolve to the smaller ratio)."""
    return min(grid.ratios(), key=lambda g: (abs(g - r), g))


def probe_unseen(store: ParamStore, config: ModelConfig, probe_ratios,
                 images: np.ndarray, labels: np.ndarray,
                 batch_size: int = 64) -> list[ProbeRow]:
    """Interpolation/extrapolation diagnostic at ratios off the trained grid.

    Reports accuracy plus the gap to the nearest trained ratio; no pass/fail
    judgment is applied — collapse at unseen widths is an empirical claim,
    not an invariant. Ratios that violate the divisibility precondition are
    rejected with an error naming the ratio.
    """
    rows = []
    for r in sorted(as_ratio(x) for x in probe_ratios):
        config.validate_ratio(r)  # raises for non-integral width / head mismatch
        if r > config.grid.largest:
            raise ValidationError(f"probe ratio {r} exceeds the largest trained ratio")
        acc, ce = evaluate(store, config, r, images, labels, batch_size=batch_size)
        near = nearest_trained(r, config.grid)
        near_acc, _ = evaluate(store, config, near, images, labels, batch_size=batch_size)
        rows.append(ProbeRow(
            ratio=r,
            inbound=r >= config.grid.smallest,
            accuracy=acc,
            ce=ce,
            nearest_trained=near,
            nearest_accuracy=near_acc,
            gap=near_acc - acc,
        ))
    return rows


def regranularize_config(config: ModelConfig, new_step) -> ModelConfig:
    """Same model and slicing bound on a finer or coarser grid.

    The new grid must share the bound endpoints and pass every width
    validation; training afterwards resumes against the new grid.
    """
    new_grid = RatioGrid(config.grid.smallest, config.grid.largest, as_ratio(new_step))
    return ModelConfig(
        image_size=config.image_size,
        patch_size=config.patch_size,
        in_channels=config.in_channels,
        embed_dim=config.embed_dim,
        heads=config.heads,
        depth=config.depth,
        num_classes=config.num_classes,
        mlp_ratio=config.mlp_ratio,
        isolated_activation=config.isolated_activation,
        grid=new_grid,
    )
