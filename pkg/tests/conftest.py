"""Shared fixtures: toy configs and an independent standalone-copy builder."""

from fractions import Fraction

import numpy as np
import pytest

from slimvit.model import ModelConfig, ParamStore, init_params
from slimvit.slicing import RatioGrid


def toy_config(embed_dim=64, heads=4, depth=4, image_size=16, patch_size=4,
               num_classes=10, step="1/4", smallest="1/4",
               isolated_activation=True) -> ModelConfig:
    return ModelConfig(
        image_size=image_size,
        patch_size=patch_size,
        in_channels=3,
        embed_dim=embed_dim,
        heads=heads,
        depth=depth,
        num_classes=num_classes,
        isolated_activation=isolated_activation,
        grid=RatioGrid.parse(smallest, "1", step),
    )


def tiny_config(**kw) -> ModelConfig:
    defaults = dict(embed_dim=16, heads=2, depth=2, image_size=8, patch_size=4,
                    num_classes=4, step="1/4")
    defaults.update(kw)
    return toy_config(**defaults)


def deit_s_config() -> ModelConfig:
    return ModelConfig(
        image_size=224,
        patch_size=16,
        in_channels=3,
        embed_dim=384,
        heads=6,
        depth=12,
        num_classes=1000,
        grid=RatioGrid.parse("1/4", "1", "1/16"),
    )


def _axis_kinds(name: str) -> tuple[str, ...]:
    """Independent role map: which axes of each parameter follow the width."""
    if name in ("cls_token", "dist_token", "pos_embed"):
        return ("f", "s")
    if name == "patch_embed.weight":
        return ("s", "f")
    if name.startswith("head_"):
        return ("f", "s") if name.endswith("weight") else ("f",)
    if name.endswith("weight"):
        return ("s", "s")
    return ("s",)  # biases, LN gamma/beta


def copy_standalone(store: ParamStore, config: ModelConfig, r: Fraction,
                    trailing: bool) -> tuple[ParamStore, ModelConfig]:
    """Hand-built standalone model of width r*D with weights copied out of the
    full store by literal leading/trailing numpy slicing (the oracle side)."""
    sub_cfg = ModelConfig(
        image_size=config.image_size,
        patch_size=config.patch_size,
        in_channels=config.in_channels,
        embed_dim=int(r * config.embed_dim),
        heads=config.heads,
        depth=config.depth,
        num_classes=config.num_classes,
        mlp_ratio=config.mlp_ratio,
        isolated_activation=False,
        grid=RatioGrid.parse(1, 1, 1),
    )
    sub = init_params(sub_cfg, seed=0, dtype=store.dtype)
    for name, p in sub.items():
        full = store[name].tensor.data
        sel = []
        for ax, kind in enumerate(_axis_kinds(name)):
            if kind == "f":
                sel.append(slice(None))
            else:
                k = int(r * full.shape[ax])
                sel.append(slice(full.shape[ax] - k, None) if trailing else slice(0, k))
        p.tensor.data = full[tuple(sel)].copy()
    return sub, sub_cfg


def run_config_dict(out_dir, *, epochs=2, step="1/4", seed=0, teacher=None,
                    train_count=96, eval_count=48, batch_size=16, lr=2e-3,
                    checkpoint="model.sclc", metrics="metrics.csv", **train_flags):
    """A small, valid synthetic-data run config (toy ViT, X=4 grid)."""
    train = {
        "epochs": epochs,
        "batch_size": batch_size,
        "lr": lr,
        "weight_decay": 0.01,
        "seed": seed,
        "lambda": 1.0,
    }
    if teacher is not None:
        train["teacher"] = teacher
    train.update(train_flags)
    return {
        "model": {
            "image_size": 16,
            "patch_size": 4,
            "in_channels": 3,
            "embed_dim": 64,
            "heads": 4,
            "depth": 4,
            "num_classes": 10,
        },
        "grid": {"smallest": "1/4", "largest": "1", "step": step},
        "train": train,
        "data": {
            "kind": "synthetic",
            "classes": 10,
            "image_size": 16,
            "channels": 3,
            "pattern_seed": 7,
            "noise_sigma": 0.3,
            "train_count": train_count,
            "eval_count": eval_count,
        },
        "out": {"dir": str(out_dir), "checkpoint": checkpoint, "metrics": metrics},
    }


@pytest.fixture
def rng():
    return np.random.default_rng(0)
