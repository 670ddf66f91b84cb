"""End-to-end run drivers composing model, coordination, harness, and I/O.

Both training drivers checkpoint at every epoch boundary (atomically, with
optimizer moments and RNG state), so an interrupted run resumed from its
checkpoint replays the remaining epochs bit-identically.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import checkpoint as ckpt_io
from .config import RunConfig
from .coordination import (
    AdamW,
    StableSampler,
    Teacher,
    TrainConfig,
    TrainState,
    run_scala_epoch,
    run_teacher_epoch,
)
from .harness import ProbeRow, SweepReport, evaluate, flops, probe_unseen, sweep
from .metrics import MetricsWriter, format_ratio
from .model import ModelConfig, export_subnet, init_params
from .slicing import ValidationError, as_ratio

_ARCH_FIELDS = ("image_size", "patch_size", "in_channels", "embed_dim",
                "heads", "depth", "mlp_ratio", "num_classes")


def load_teacher(path: str, student: ModelConfig) -> Teacher:
    """Load a frozen phase-1 checkpoint; its architecture must match the student."""
    ck = ckpt_io.load(path)
    for name in _ARCH_FIELDS:
        if getattr(ck.model, name) != getattr(student, name):
            raise ValidationError(
                f"teacher checkpoint {path}: {name}={getattr(ck.model, name)} "
                f"does not match the student's {getattr(student, name)}")
    store = ckpt_io.store_from_checkpoint(ck, requires_grad=False)
    return Teacher(store=store, config=ck.model)


def _save_state(path: str, run_cfg: RunConfig, state: TrainState):
    ckpt_io.save(path, ckpt_io.Checkpoint(
        model=run_cfg.model,
        tensors=ckpt_io.tensors_from_state(state.store, state.opt),
        epoch=state.epoch,
        opt_step=state.opt.step_count,
        rng_state=ckpt_io.rng_state(state.rng),
        train=run_cfg.train.to_dict(),
    ))


def _init_state(run_cfg: RunConfig, resume: bool) -> TrainState:
    path = run_cfg.checkpoint_path()
    cfg = run_cfg.train
    if resume:
        if not os.path.exists(path):
            raise ValidationError(f"cannot resume: checkpoint {path} does not exist")
        ck = ckpt_io.load(path)
        if ck.model.to_dict() != run_cfg.model.to_dict():
            raise ValidationError(f"checkpoint {path} was written for a different model config")
        store = ckpt_io.store_from_checkpoint(ck)
        opt = AdamW(store, cfg)
        m, v = ck.moment_arrays()
        if set(m) != set(opt.moments):
            raise ValidationError(f"checkpoint {path} lacks optimizer moments; cannot resume")
        opt.moments = {name: (m[name].copy(), v[name].copy()) for name in opt.moments}
        opt.step_count = ck.opt_step
        rng = ckpt_io.restore_rng(ck.rng_state)
        return TrainState(store=store, opt=opt, rng=rng, epoch=ck.epoch)
    store = init_params(run_cfg.model, cfg.seed)
    opt = AdamW(store, cfg)
    # Separate stream from the init draw so weight init and batch order
    # cannot alias.
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
    return TrainState(store=store, opt=opt, rng=rng, epoch=0)


def pretrain_teacher_run(run_cfg: RunConfig, resume: bool = False,
                         stop_after: int | None = None) -> str:
    """Phase 1: CE-only training of the full-width model. Returns the
    checkpoint path.

    ``stop_after`` caps how many epochs this invocation runs (chunked
    training); the run is finished later with ``resume=True``.
    """
    os.makedirs(run_cfg.out_dir, exist_ok=True)
    cfg = run_cfg.train
    train = run_cfg.data.load_split("train")
    held = run_cfg.data.load_split("eval")
    state = _init_state(run_cfg, resume)
    metrics = MetricsWriter(run_cfg.metrics_path())
    path = run_cfg.checkpoint_path()
    one = Fraction(1)
    budget = cfg.epochs if stop_after is None else min(cfg.epochs, state.epoch + stop_after)
    while state.epoch < budget:
        mean_ce = run_teacher_epoch(state, run_cfg.model, cfg, train.images, train.labels)
        metrics.row(state.epoch, one, "train", ce=mean_ce, lr=cfg.lr)
        acc, ce = evaluate(state.store, run_cfg.model, one, held.images, held.labels)
        metrics.row(state.epoch, one, "eval", ce=ce, acc=acc, lr=cfg.lr)
        _save_state(path, run_cfg, state)
    return path


def train_run(run_cfg: RunConfig, resume: bool = False,
              stop_after: int | None = None) -> str:
    """Joint subnet training over the configured grid. Returns the
    checkpoint path."""
    os.makedirs(run_cfg.out_dir, exist_ok=True)
    cfg = run_cfg.train
    model_cfg = run_cfg.model
    model_cfg.grid.validate_bands()
    train = run_cfg.data.load_split("train")
    held = run_cfg.data.load_split("eval")
    teacher = load_teacher(cfg.teacher_path, model_cfg) if cfg.teacher_path else None
    state = _init_state(run_cfg, resume)
    metrics = MetricsWriter(run_cfg.metrics_path())
    path = run_cfg.checkpoint_path()
    sampler = StableSampler(model_cfg.grid, state.rng)
    budget = cfg.epochs if stop_after is None else min(cfg.epochs, state.epoch + stop_after)
    while state.epoch < budget:
        stats = run_scala_epoch(state, model_cfg, teacher, cfg, sampler,
                                train.images, train.labels)
        for ratio, rec in stats.items():
            metrics.row(state.epoch, ratio, "train", ce=rec.ce, kl=rec.kl, lr=cfg.lr)
        for ratio in model_cfg.grid.ratios():
            acc, ce = evaluate(state.store, model_cfg, ratio, held.images, held.labels)
            metrics.row(state.epoch, ratio, "eval", ce=ce, acc=acc, lr=cfg.lr)
        _save_state(path, run_cfg, state)
    return path


def regranularize_run(run_cfg: RunConfig, new_step, extra_epochs: int) -> str:
    """Swap the grid step of a trained checkpoint and keep training.

    Resumes optimizer moments and RNG from the checkpoint, trains
    ``extra_epochs`` more against the new grid, then checkpoints. Abandoned
    ratios of the old grid remain evaluable via probe/sweep.
    """
    from .harness import regranularize_config

    path = run_cfg.checkpoint_path()
    if not os.path.exists(path):
        raise ValidationError(f"regranularize needs an existing checkpoint at {path}")
    ck = ckpt_io.load(path)
    new_model = regranularize_config(ck.model, new_step)
    new_model.grid.validate_bands()
    cfg = run_cfg.train
    new_run = RunConfig(
        model=new_model,
        train=cfg,
        data=run_cfg.data,
        out_dir=run_cfg.out_dir,
        checkpoint_name=run_cfg.checkpoint_name,
        metrics_name=run_cfg.metrics_name,
    )

    store = ckpt_io.store_from_checkpoint(ck)
    opt = AdamW(store, cfg)
    m, v = ck.moment_arrays()
    if set(m) == set(opt.moments):
        opt.moments = {name: (m[name].copy(), v[name].copy()) for name in opt.moments}
        opt.step_count = ck.opt_step
    rng = (ckpt_io.restore_rng(ck.rng_state) if ck.rng_state is not None
           else np.random.default_rng(np.random.SeedSequence([cfg.seed, 2])))
    state = TrainState(store=store, opt=opt, rng=rng, epoch=ck.epoch)

    teacher = load_teacher(cfg.teacher_path, new_model) if cfg.teacher_path else None
    train = run_cfg.data.load_split("train")
    held = run_cfg.data.load_split("eval")
    metrics = MetricsWriter(run_cfg.metrics_path())
    sampler = StableSampler(new_model.grid, state.rng)
    target = state.epoch + extra_epochs
    while state.epoch < target:
        stats = run_scala_epoch(state, new_model, teacher, cfg, sampler,
                                train.images, train.labels)
        for ratio, rec in stats.items():
            metrics.row(state.epoch, ratio, "train", ce=rec.ce, kl=rec.kl, lr=cfg.lr)
        for ratio in new_model.grid.ratios():
            acc, ce = evaluate(state.store, new_model, ratio, held.images, held.labels)
            metrics.row(state.epoch, ratio, "eval", ce=ce, acc=acc, lr=cfg.lr)
        _save_state(path, new_run, state)
    return path


def sweep_checkpoint(ckpt_path: str, run_cfg: RunConfig, ratios=None,
                     split: str = "eval") -> SweepReport:
    ck = ckpt_io.load(ckpt_path)
    store = ckpt_io.store_from_checkpoint(ck)
    data = run_cfg.data.load_split(split)
    if ratios is None:
        ratios = ck.model.grid.ratios()
    return sweep(store, ck.model, ratios, data.images, data.labels,
                 epoch=ck.epoch, seed=run_cfg.train.seed,
                 config_hash=ckpt_io.config_hash(ck.train) if ck.train else "")


def probe_checkpoint(ckpt_path: str, run_cfg: RunConfig, ratios,
                     split: str = "eval") -> list[ProbeRow]:
    ck = ckpt_io.load(ckpt_path)
    store = ckpt_io.store_from_checkpoint(ck)
    data = run_cfg.data.load_split(split)
    return probe_unseen(store, ck.model, ratios, data.images, data.labels)


def export_checkpoint(ckpt_path: str, ratio, mode, out_path: str) -> str:
    from .slicing import SliceMode

    ck = ckpt_io.load(ckpt_path)
    store = ckpt_io.store_from_checkpoint(ck)
    slice_mode = None if mode is None else SliceMode(mode)
    sub_store, sub_config = export_subnet(store, ck.model, as_ratio(ratio), slice_mode)
    ckpt_io.save(out_path, ckpt_io.Checkpoint(
        model=sub_config,
        tensors={ckpt_io.PARAM_PREFIX + name: p.tensor.data for name, p in sub_store.items()},
        epoch=ck.epoch,
        train=ck.train,
    ))
    return out_path


def write_sweep_csv(report: SweepReport, path: str):
    with open(path, "w") as f:
        f.write("ratio,acc,ce,params,flops,epoch,seed,config_hash\n")
        for row in report.rows:
            f.write(f"{format_ratio(row.ratio)},{row.accuracy!r},{row.ce!r},"
                    f"{row.params},{row.flops},{report.epoch},{report.seed},"
                    f"{report.config_hash}\n")


def write_probe_csv(rows: list[ProbeRow], path: str):
    with open(path, "w") as f:
        f.write("ratio,inbound,acc,ce,nearest_trained,nearest_acc,gap\n")
        for row in rows:
            f.write(f"{format_ratio(row.ratio)},{int(row.inbound)},{row.accuracy!r},"
                    f"{row.ce!r},{format_ratio(row.nearest_trained)},"
                    f"{row.nearest_accuracy!r},{row.gap!r}\n")
