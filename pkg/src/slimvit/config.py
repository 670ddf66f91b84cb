"""Run configuration: a JSON document validated completely at load time.

Grid ratios travel as exact rational strings ("1/4", "1/16") so grid
semantics survive serialization. Every invalid field produces a diagnostic
naming the field; no partially-validated run starts.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

from .coordination import TrainConfig
from .dataset import ArrayDataset, SyntheticSpec, build_synthetic, load_idx
from .model import ModelConfig
from .slicing import RatioGrid, ValidationError

OUT_DIR_ENV = "SLIMVIT_OUT_DIR"


class ConfigError(ValidationError):
    pass


def _require(block: dict, key: str, kind, where: str):
    if key not in block:
        raise ConfigError(f"{where}.{key}: missing required field")
    value = block[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is not None and not isinstance(value, kind):
        raise ConfigError(f"{where}.{key}: expected {kind.__name__}, got {type(value).__name__}")
    return value


@dataclass
class DataConfig:
    kind: str  # "synthetic" | "idx"
    synthetic: SyntheticSpec | None = None
    idx_paths: dict[str, str] | None = None

    def load_split(self, split: str) -> ArrayDataset:
        if self.kind == "synthetic":
            return build_synthetic(self.synthetic, split)
        images = self.idx_paths[f"{split}_images"]
        labels = self.idx_paths[f"{split}_labels"]
        return load_idx(images, labels)


@dataclass
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    data: DataConfig
    out_dir: str
    checkpoint_name: str = "model.sclc"
    metrics_name: str = "metrics.csv"

    def checkpoint_path(self) -> str:
        return os.path.join(self.out_dir, self.checkpoint_name)

    def metrics_path(self) -> str:
        return os.path.join(self.out_dir, self.metrics_name)


def _parse_model(raw: dict, isolated_activation: bool) -> ModelConfig:
    model_raw = _require(raw, "model", dict, "config")
    grid_raw = _require(raw, "grid", dict, "config")
    try:
        grid = RatioGrid.parse(
            _require(grid_raw, "smallest", str, "config.grid"),
            _require(grid_raw, "largest", str, "config.grid"),
            _require(grid_raw, "step", str, "config.grid"),
        )
    except ValidationError as exc:
        raise ConfigError(f"config.grid: {exc}") from None
    try:
        return ModelConfig(
            image_size=_require(model_raw, "image_size", int, "config.model"),
            patch_size=_require(model_raw, "patch_size", int, "config.model"),
            in_channels=_require(model_raw, "in_channels", int, "config.model"),
            embed_dim=_require(model_raw, "embed_dim", int, "config.model"),
            heads=_require(model_raw, "heads", int, "config.model"),
            depth=_require(model_raw, "depth", int, "config.model"),
            num_classes=_require(model_raw, "num_classes", int, "config.model"),
            mlp_ratio=model_raw.get("mlp_ratio", 4),
            isolated_activation=isolated_activation,
            grid=grid,
        )
    except ValidationError as exc:
        raise ConfigError(f"config.model: {exc}") from None


def _parse_train(raw: dict) -> TrainConfig:
    block = _require(raw, "train", dict, "config")
    try:
        return TrainConfig(
            epochs=_require(block, "epochs", int, "config.train"),
            batch_size=_require(block, "batch_size", int, "config.train"),
            lr=_require(block, "lr", float, "config.train"),
            weight_decay=block.get("weight_decay", 0.01),
            beta1=block.get("beta1", 0.9),
            beta2=block.get("beta2", 0.999),
            lam=block.get("lambda", 1.0),
            seed=_require(block, "seed", int, "config.train"),
            teacher_path=block.get("teacher"),
            isolated_activation=block.get("isolated_activation", True),
            pkt=block.get("pkt", True),
            stable_sampling=block.get("stable_sampling", True),
            noise_calibration=block.get("noise_calibration", True),
            constant_smallest=block.get("constant_smallest", True),
        )
    except ValidationError as exc:
        raise ConfigError(f"config.train: {exc}") from None


def _parse_data(raw: dict) -> DataConfig:
    block = _require(raw, "data", dict, "config")
    kind = _require(block, "kind", str, "config.data")
    if kind == "synthetic":
        try:
            spec = SyntheticSpec(
                classes=_require(block, "classes", int, "config.data"),
                image_size=_require(block, "image_size", int, "config.data"),
                channels=_require(block, "channels", int, "config.data"),
                pattern_seed=_require(block, "pattern_seed", int, "config.data"),
                noise_sigma=_require(block, "noise_sigma", float, "config.data"),
                train_count=_require(block, "train_count", int, "config.data"),
                eval_count=_require(block, "eval_count", int, "config.data"),
            )
        except ValidationError as exc:
            raise ConfigError(f"config.data: {exc}") from None
        return DataConfig(kind="synthetic", synthetic=spec)
    if kind == "idx":
        paths = {}
        for key in ("train_images", "train_labels", "eval_images", "eval_labels"):
            paths[key] = _require(block, key, str, "config.data")
        return DataConfig(kind="idx", idx_paths=paths)
    raise ConfigError(f"config.data.kind: expected 'synthetic' or 'idx', got {kind!r}")


def parse_run_config(raw: dict) -> RunConfig:
    train = _parse_train(raw)
    model = _parse_model(raw, isolated_activation=train.isolated_activation)
    data = _parse_data(raw)
    if data.kind == "synthetic":
        spec = data.synthetic
        if spec.image_size != model.image_size or spec.channels != model.in_channels:
            raise ConfigError(
                "config.data: synthetic geometry "
                f"({spec.channels}x{spec.image_size}) does not match the model "
                f"({model.in_channels}x{model.image_size})")
        if spec.classes != model.num_classes:
            raise ConfigError(
                f"config.data.classes: {spec.classes} != config.model.num_classes "
                f"{model.num_classes}")
    out_raw = raw.get("out", {})
    out_dir = os.environ.get(OUT_DIR_ENV) or out_raw.get("dir", ".")
    return RunConfig(
        model=model,
        train=train,
        data=data,
        out_dir=out_dir,
        checkpoint_name=out_raw.get("checkpoint", "model.sclc"),
        metrics_name=out_raw.get("metrics", "metrics.csv"),
    )


def load_run_config(path: str) -> RunConfig:
    with open(path) as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return parse_run_config(raw)
