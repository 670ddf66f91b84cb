"""Slimmable Vision Transformer over a single full-width parameter store.

Patch embedding, class + distillation tokens, positional embedding, pre-LN
transformer blocks (MHSA + MLP), dual heads. A forward pass at width ratio r
builds sliced views of the shared parameters, so backward scatter-adds each
subnet's gradients into the same full-width buffers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import tensor as T
from .slicing import (
    AxisRole,
    RatioGrid,
    SliceMode,
    ValidationError,
    as_ratio,
    mode_for,
    resolve_slice,
    slice_indices,
)

INIT_STD = 0.02
LN_EPS = 1e-6


@dataclass(frozen=True)
class ModelConfig:
    image_size: int
    patch_size: int
    in_channels: int
    embed_dim: int
    heads: int
    depth: int
    num_classes: int
    grid: RatioGrid
    mlp_ratio: int = 4
    isolated_activation: bool = True

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ValidationError(
                f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        if self.num_classes < 2:
            raise ValidationError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.mlp_ratio < 1:
            raise ValidationError(f"mlp_ratio must be a positive integer, got {self.mlp_ratio}")
        for r in self.grid.ratios():
            self.validate_ratio(r)

    @property
    def num_patches(self) -> int:
        side = self.image_size // self.patch_size
        return side * side

    @property
    def num_tokens(self) -> int:
        return self.num_patches + 2

    @property
    def patch_dim(self) -> int:
        return self.in_channels * self.patch_size * self.patch_size

    def validate_ratio(self, r) -> Fraction:
        """Check that width ratio r yields integral sliced dims divisible by
        the head count. Raises naming the offending ratio and axis."""
        r = as_ratio(r)
        d = r * self.embed_dim
        if d.denominator != 1:
            raise ValidationError(
                f"ratio {r}: sliced embedding width {r}*{self.embed_dim} is not an integer")
        if int(d) % self.heads != 0:
            raise ValidationError(
                f"ratio {r}: sliced embedding width {int(d)} is not divisible by {self.heads} heads")
        h = r * self.mlp_ratio * self.embed_dim
        if h.denominator != 1:
            raise ValidationError(
                f"ratio {r}: sliced MLP hidden width {r}*{self.mlp_ratio * self.embed_dim} "
                "is not an integer")
        return r

    def width_at(self, r) -> int:
        return int(as_ratio(r) * self.embed_dim)

    def to_dict(self) -> dict:
        return {
            "image_size": self.image_size,
            "patch_size": self.patch_size,
            "in_channels": self.in_channels,
            "embed_dim": self.embed_dim,
            "heads": self.heads,
            "depth": self.depth,
            "num_classes": self.num_classes,
            "mlp_ratio": self.mlp_ratio,
            "isolated_activation": self.isolated_activation,
            "grid": {"smallest": str(self.grid.smallest),
                     "largest": str(self.grid.largest),
                     "step": str(self.grid.step)},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        g = d["grid"]
        return cls(
            image_size=d["image_size"],
            patch_size=d["patch_size"],
            in_channels=d["in_channels"],
            embed_dim=d["embed_dim"],
            heads=d["heads"],
            depth=d["depth"],
            num_classes=d["num_classes"],
            mlp_ratio=d.get("mlp_ratio", 4),
            isolated_activation=d.get("isolated_activation", True),
            grid=RatioGrid.parse(g["smallest"], g["largest"], g["step"]),
        )


@dataclass
class Param:
    tensor: T.Tensor
    roles: tuple[AxisRole, ...]


class ParamStore:
    """Named full-width tensors in lexicographic order, with axis roles."""

    def __init__(self, params: dict[str, Param], dtype):
        self.params = dict(sorted(params.items()))
        self.dtype = np.dtype(dtype)

    def __getitem__(self, name: str) -> Param:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    def items(self):
        return self.params.items()

    def total_elements(self) -> int:
        return sum(p.tensor.data.size for p in self.params.values())

    def zero_grads(self):
        for p in self.params.values():
            p.tensor.zero_grad()

    def set_requires_grad(self, flag: bool):
        for p in self.params.values():
            p.tensor.requires_grad = flag


S, F = AxisRole.SLICEABLE, AxisRole.FIXED


def parameter_specs(config: ModelConfig) -> dict[str, tuple[tuple[int, ...], tuple[AxisRole, ...], str]]:
    """Name -> (shape, axis roles, init kind) for every model parameter."""
    d = config.embed_dim
    hidden = config.mlp_ratio * d
    k = config.num_classes
    specs: dict[str, tuple] = {
        "cls_token": ((1, d), (F, S), "normal"),
        "dist_token": ((1, d), (F, S), "normal"),
        "pos_embed": ((config.num_tokens, d), (F, S), "normal"),
        "patch_embed.weight": ((d, config.patch_dim), (S, F), "normal"),
        "patch_embed.bias": ((d,), (S,), "zeros"),
        "final_ln.gamma": ((d,), (S,), "ones"),
        "final_ln.beta": ((d,), (S,), "zeros"),
        "head_cls.weight": ((k, d), (F, S), "normal"),
        "head_cls.bias": ((k,), (F,), "zeros"),
        "head_dist.weight": ((k, d), (F, S), "normal"),
        "head_dist.bias": ((k,), (F,), "zeros"),
    }
    for i in range(config.depth):
        b = f"blocks.{i:02d}"
        for ln in ("ln1", "ln2"):
            specs[f"{b}.{ln}.gamma"] = ((d,), (S,), "ones")
            specs[f"{b}.{ln}.beta"] = ((d,), (S,), "zeros")
        for proj in ("q", "k", "v", "proj"):
            specs[f"{b}.attn.{proj}.weight"] = ((d, d), (S, S), "normal")
            specs[f"{b}.attn.{proj}.bias"] = ((d,), (S,), "zeros")
        specs[f"{b}.mlp.fc1.weight"] = ((hidden, d), (S, S), "normal")
        specs[f"{b}.mlp.fc1.bias"] = ((hidden,), (S,), "zeros")
        specs[f"{b}.mlp.fc2.weight"] = ((d, hidden), (S, S), "normal")
        specs[f"{b}.mlp.fc2.bias"] = ((d,), (S,), "zeros")
    return dict(sorted(specs.items()))


def _trunc_normal(rng: np.random.Generator, shape, std: float, dtype) -> np.ndarray:
    # Redraw outside +-2 std; keeps init bounded without biasing the variance much.
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out.astype(dtype)


def init_params(config: ModelConfig, seed: int, dtype=np.float32) -> ParamStore:
    """Fresh full-width store, deterministic in the seed.

    Weights and token/positional embeddings are truncated-normal(std=0.02),
    biases zero, LN gamma one / beta zero. Parameters are initialized in
    lexicographic name order so the draw sequence is reproducible.
    """
    rng = np.random.default_rng(seed)
    dtype = np.dtype(dtype)
    params: dict[str, Param] = {}
    for name, (shape, roles, kind) in parameter_specs(config).items():
        if kind == "normal":
            data = _trunc_normal(rng, shape, INIT_STD, dtype)
        elif kind == "ones":
            data = np.ones(shape, dtype=dtype)
        else:
            data = np.zeros(shape, dtype=dtype)
        params[name] = Param(T.Tensor(data, requires_grad=True), tuple(roles))
    return ParamStore(params, dtype)


@dataclass
class SubnetOutput:
    """Classification and distillation logits, each (batch, num_classes)."""

    p_cls: T.Tensor
    p_dis: T.Tensor


@dataclass
class Batch:
    images: np.ndarray  # (B, C, H, W)
    labels: np.ndarray  # (B,) ints in [0, K)

    def validate(self, config: ModelConfig):
        if self.images.ndim != 4 or self.images.shape[1:] != (
                config.in_channels, config.image_size, config.image_size):
            raise ValidationError(
                f"images shape {self.images.shape} does not match config "
                f"(B, {config.in_channels}, {config.image_size}, {config.image_size})")
        if not np.isfinite(self.images).all():
            raise ValidationError("images contain non-finite pixels")
        if self.labels.shape != (self.images.shape[0],):
            raise ValidationError("labels must be one per image")
        if self.labels.min() < 0 or self.labels.max() >= config.num_classes:
            raise ValidationError(
                f"labels outside [0, {config.num_classes}): "
                f"min={self.labels.min()}, max={self.labels.max()}")


def patchify(images: np.ndarray, patch_size: int) -> np.ndarray:
    """(B, C, H, W) -> (B, N, C*p*p), patches row-major, channel-major inside."""
    b, c, h, w = images.shape
    hp, wp = h // patch_size, w // patch_size
    x = images.reshape(b, c, hp, patch_size, wp, patch_size)
    x = x.transpose(0, 2, 4, 1, 3, 5)
    return x.reshape(b, hp * wp, c * patch_size * patch_size)


def sliced_params(store: ParamStore, r, mode: SliceMode) -> dict[str, T.Tensor]:
    """Slice views of every parameter at ratio r; grads flow to the store."""
    views = {}
    for name, p in store.items():
        ranges = resolve_slice(p.tensor.shape, p.roles, r, mode)
        views[name] = T.slice_view(p.tensor, ranges)
    return views


def forward(store: ParamStore, config: ModelConfig, images: np.ndarray, r,
            mode: SliceMode | None = None, require_on_grid: bool = True) -> SubnetOutput:
    """Run the subnet of width ratio r on a batch of images.

    All trunk features have width r*D; attention uses the configured head
    count with per-head dim (r*D)/heads and scale 1/sqrt((r*D)/heads).
    Pass ``require_on_grid=False`` for interpolation/extrapolation probes.
    """
    r = config.validate_ratio(r)
    if require_on_grid and r not in config.grid:
        raise ValidationError(f"ratio {r} is not on the configured grid")
    if mode is None:
        mode = (mode_for(r, config.grid, config.isolated_activation)
                if r in config.grid else SliceMode.LEADING)

    w = sliced_params(store, r, mode)
    d = config.width_at(r)
    heads = config.heads
    head_dim = d // heads
    scale = 1.0 / np.sqrt(head_dim)

    patches = patchify(images.astype(store.dtype, copy=False), config.patch_size)
    b, n, _ = patches.shape
    tok = config.num_tokens

    def linear(x, name):
        return T.matmul(x, T.permute(w[f"{name}.weight"], (1, 0))) + w[f"{name}.bias"]

    x = T.matmul(T.Tensor(patches), T.permute(w["patch_embed.weight"], (1, 0)))
    x = x + w["patch_embed.bias"]
    cls = T.broadcast_to(T.reshape(w["cls_token"], (1, 1, d)), (b, 1, d))
    dist = T.broadcast_to(T.reshape(w["dist_token"], (1, 1, d)), (b, 1, d))
    x = T.concat([cls, dist, x], axis=1)
    x = x + T.reshape(w["pos_embed"], (1, tok, d))

    for i in range(config.depth):
        blk = f"blocks.{i:02d}"
        h = T.layer_norm(x, w[f"{blk}.ln1.gamma"], w[f"{blk}.ln1.beta"], LN_EPS)
        q = T.permute(T.reshape(linear(h, f"{blk}.attn.q"), (b, tok, heads, head_dim)), (0, 2, 1, 3))
        k = T.permute(T.reshape(linear(h, f"{blk}.attn.k"), (b, tok, heads, head_dim)), (0, 2, 1, 3))
        v = T.permute(T.reshape(linear(h, f"{blk}.attn.v"), (b, tok, heads, head_dim)), (0, 2, 1, 3))
        att = T.softmax(T.matmul(q, T.permute(k, (0, 1, 3, 2))) * scale, axis=-1)
        ctx = T.reshape(T.permute(T.matmul(att, v), (0, 2, 1, 3)), (b, tok, d))
        x = x + linear(ctx, f"{blk}.attn.proj")

        h = T.layer_norm(x, w[f"{blk}.ln2.gamma"], w[f"{blk}.ln2.beta"], LN_EPS)
        h = T.gelu(linear(h, f"{blk}.mlp.fc1"))
        x = x + linear(h, f"{blk}.mlp.fc2")

    x = T.layer_norm(x, w["final_ln.gamma"], w["final_ln.beta"], LN_EPS)
    cls_feat = T.reshape(T.slice_view(x, (None, (0, 1), None)), (b, d))
    dist_feat = T.reshape(T.slice_view(x, (None, (1, 2), None)), (b, d))
    return SubnetOutput(p_cls=linear(cls_feat, "head_cls"),
                        p_dis=linear(dist_feat, "head_dist"))


def _softmax_np(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def predict(out: SubnetOutput) -> np.ndarray:
    """Argmax of the mean of the two heads' softmax; ties go to the lowest index."""
    probs = 0.5 * (_softmax_np(out.p_cls.data) + _softmax_np(out.p_dis.data))
    return probs.argmax(axis=-1)


def export_subnet(store: ParamStore, config: ModelConfig, r,
                  mode: SliceMode | None = None) -> tuple[ParamStore, ModelConfig]:
    """Deep-copy the width-r slice into a standalone model of embed dim r*D.

    The returned config carries the degenerate single-ratio grid {1}; its
    full-width forward reproduces the sliced-view forward bit for bit.
    """
    r = config.validate_ratio(r)
    if r not in config.grid:
        raise ValidationError(f"ratio {r} is not on the configured grid")
    if mode is None:
        mode = mode_for(r, config.grid, config.isolated_activation)
    sub_config = ModelConfig(
        image_size=config.image_size,
        patch_size=config.patch_size,
        in_channels=config.in_channels,
        embed_dim=config.width_at(r),
        heads=config.heads,
        depth=config.depth,
        num_classes=config.num_classes,
        mlp_ratio=config.mlp_ratio,
        isolated_activation=False,
        grid=RatioGrid.parse(1, 1, 1),
    )
    params = {}
    for name, p in store.items():
        ranges = resolve_slice(p.tensor.shape, p.roles, r, mode)
        idx = tuple(slice(a, b_) for a, b_ in ranges)
        params[name] = Param(T.Tensor(p.tensor.data[idx].copy(), requires_grad=True), p.roles)
    return ParamStore(params, store.dtype), sub_config


def sliced_element_count(store: ParamStore, config: ModelConfig, r,
                         mode: SliceMode = SliceMode.LEADING) -> int:
    """Number of parameter elements inside the width-r slice."""
    r = config.validate_ratio(r)
    total = 0
    for _, p in store.items():
        ranges = resolve_slice(p.tensor.shape, p.roles, r, mode)
        count = 1
        for a, b in ranges:
            count *= b - a
        total += count
    return total
