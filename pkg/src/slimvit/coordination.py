"""Joint training of the width-sliced subnets.

Each iteration activates four subnets (smallest, largest, two band-sampled
intermediates), runs them largest-first so every student's distillation
target already exists, accumulates all four gradients into the shared
full-width buffers, and applies exactly one optimizer step. Distillation
targets are detached probabilities; the largest subnet distills from a
frozen full-width external teacher when one is configured.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import tensor as T
from .model import Batch, ModelConfig, ParamStore, SubnetOutput, _softmax_np, forward
from .slicing import RatioGrid, ValidationError, as_ratio

ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int
    lr: float = 1e-3
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    lam: float = 1.0
    seed: int = 0
    teacher_path: str | None = None
    isolated_activation: bool = True
    pkt: bool = True
    stable_sampling: bool = True
    noise_calibration: bool = True
    constant_smallest: bool = True

    def __post_init__(self):
        if self.lam < 0:
            raise ValidationError(f"loss weight lambda must be >= 0, got {self.lam}")
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "weight_decay": self.weight_decay,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "lambda": self.lam,
            "seed": self.seed,
            "teacher": self.teacher_path,
            "isolated_activation": self.isolated_activation,
            "pkt": self.pkt,
            "stable_sampling": self.stable_sampling,
            "noise_calibration": self.noise_calibration,
            "constant_smallest": self.constant_smallest,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(
            epochs=d["epochs"],
            batch_size=d["batch_size"],
            lr=d.get("lr", 1e-3),
            weight_decay=d.get("weight_decay", 0.01),
            beta1=d.get("beta1", 0.9),
            beta2=d.get("beta2", 0.999),
            lam=d.get("lambda", 1.0),
            seed=d.get("seed", 0),
            teacher_path=d.get("teacher"),
            isolated_activation=d.get("isolated_activation", True),
            pkt=d.get("pkt", True),
            stable_sampling=d.get("stable_sampling", True),
            noise_calibration=d.get("noise_calibration", True),
            constant_smallest=d.get("constant_smallest", True),
        )


@dataclass
class Teacher:
    """Frozen full-width model; forward-only, never receives gradients."""

    store: ParamStore
    config: ModelConfig

    def __post_init__(self):
        self.store.set_requires_grad(False)

    def class_probs(self, images: np.ndarray) -> np.ndarray:
        out = forward(self.store, self.config, images, Fraction(1))
        return _softmax_np(out.p_cls.data)


class External:
    """Sentinel teacher identity for the largest subnet."""

    def __repr__(self):
        return "External"


EXTERNAL = External()


def teacher_of(r, ratio_list: list[Fraction]):
    """Next-larger ratio in the sorted activation list; External for the largest."""
    r = as_ratio(r)
    if r not in ratio_list:
        raise ValidationError(f"ratio {r} is not in the activated list {ratio_list}")
    idx = ratio_list.index(r)
    if idx == len(ratio_list) - 1:
        return EXTERNAL
    return ratio_list[idx + 1]


class StableSampler:
    """Uniform draws of the two intermediate ratios from the lower band
    (s, (s+l)/2] and upper band ((s+l)/2, l) of the grid."""

    def __init__(self, grid: RatioGrid, rng: np.random.Generator):
        grid.validate_bands()
        self.grid = grid
        self.rng = rng
        self.lower = grid.lower_band()
        self.upper = grid.upper_band()

    def draw(self) -> tuple[Fraction, Fraction]:
        m1 = self.lower[int(self.rng.integers(len(self.lower)))]
        m2 = self.upper[int(self.rng.integers(len(self.upper)))]
        return m1, m2


def stable_sample(sampler: StableSampler) -> tuple[Fraction, Fraction]:
    return sampler.draw()


def draw_slots(sampler: StableSampler, cfg: TrainConfig) -> list[Fraction]:
    """The four activated ratios for one iteration, descending.

    Ablations: without stable sampling, both intermediates come uniformly
    from the whole grid interior (sorted afterwards); without constant
    smallest activation, the smallest slot is drawn uniformly from the grid
    points at or below the band midpoint.
    """
    grid = sampler.grid
    if cfg.stable_sampling:
        m1, m2 = sampler.draw()
    else:
        interior = grid.interior()
        a = interior[int(sampler.rng.integers(len(interior)))]
        b = interior[int(sampler.rng.integers(len(interior)))]
        m1, m2 = sorted((a, b))
    if cfg.constant_smallest:
        small = grid.smallest
    else:
        low = [r for r in grid.ratios() if r <= grid.midpoint()]
        small = low[int(sampler.rng.integers(len(low)))]
    return sorted([grid.largest, m2, m1, small], reverse=True)


# -- losses --------------------------------------------------------------


def ce_loss(logits: T.Tensor, labels: np.ndarray) -> T.Tensor:
    """Batch-mean cross entropy: -log softmax(logits)[label]."""
    data = logits.data
    if data.ndim == 1:
        logits = T.reshape(logits, (1, data.shape[0]))
        labels = np.asarray([labels]).reshape(1)
        data = logits.data
    b, k = data.shape
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= k:
        raise ValidationError(f"label out of range [0, {k})")
    onehot = np.zeros((b, k), dtype=data.dtype)
    onehot[np.arange(b), labels] = 1.0
    return T.sum_all(T.Tensor(onehot) * T.log_softmax(logits, axis=-1)) * (-1.0 / b)


def kl_loss(p_student: T.Tensor, p_teacher: np.ndarray) -> T.Tensor:
    """Batch-mean KL(teacher || student) in nats, teacher held constant.

    Both sides are probability rows; values are floored at 1e-12 before logs
    so saturated rows cannot produce infinities.
    """
    pt = np.asarray(p_teacher, dtype=p_student.data.dtype)
    ps = p_student
    if ps.data.ndim == 1:
        ps = T.reshape(ps, (1, ps.data.shape[0]))
        pt = pt.reshape(1, -1)
    if pt.shape != ps.data.shape:
        raise ValidationError(f"teacher probs shape {pt.shape} != student {ps.data.shape}")
    b = ps.data.shape[0]
    const = float((pt * np.log(np.maximum(pt, T.LOG_FLOOR))).sum()) / b
    cross = T.sum_all(T.Tensor(pt) * T.log(ps)) * (1.0 / b)
    return const - cross


def subnet_loss(out: SubnetOutput, labels: np.ndarray, teacher_probs: np.ndarray | None,
                cfg: TrainConfig, is_full: bool = False
                ) -> tuple[T.Tensor, float | None, float | None]:
    """One subnet's loss: CE on the class head plus lam * KL of the
    distillation head against its teacher's probabilities.

    With noise calibration off, subnets that have a teacher drop the CE term;
    the full model always keeps it. Returns (loss, ce value, kl value) with
    None for terms that did not enter the loss.
    """
    if teacher_probs is None and not is_full and cfg.lam > 0:
        raise ValidationError("non-full subnet has no teacher probabilities")
    use_ce = cfg.noise_calibration or is_full or teacher_probs is None or cfg.lam == 0
    terms = []
    ce_val = kl_val = None
    if use_ce:
        ce = ce_loss(out.p_cls, labels)
        ce_val = float(ce.data)
        terms.append(ce)
    if teacher_probs is not None and cfg.lam > 0:
        kl = kl_loss(T.softmax(out.p_dis, axis=-1), teacher_probs)
        kl_val = float(kl.data)
        terms.append(cfg.lam * kl)
    if not terms:
        return T.Tensor(np.zeros((), dtype=out.p_cls.data.dtype)), None, None
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total, ce_val, kl_val


@dataclass
class SubnetLossRecord:
    ratio: Fraction
    ce: float | None
    kl: float | None


@dataclass
class LossBundle:
    """Per-subnet CE / KL terms of one iteration, in activation order
    (largest first), plus the optimized total."""

    records: list[SubnetLossRecord]
    lam: float

    @property
    def total(self) -> float:
        ce = sum(r.ce for r in self.records if r.ce is not None)
        kl = sum(r.kl for r in self.records if r.kl is not None)
        return ce + self.lam * kl


# -- optimizer -----------------------------------------------------------


class AdamW:
    """Adam with bias correction and decoupled weight decay."""

    def __init__(self, store: ParamStore, cfg: TrainConfig):
        self.lr = cfg.lr
        self.weight_decay = cfg.weight_decay
        self.beta1 = cfg.beta1
        self.beta2 = cfg.beta2
        self.moments = {
            name: (np.zeros_like(p.tensor.data), np.zeros_like(p.tensor.data))
            for name, p in store.items()
        }
        self.step_count = 0

    def step(self, store: ParamStore):
        """Apply one AdamW update from the accumulated grads, then zero them."""
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, p in store.items():
            g = p.tensor.grad
            if g is None:
                g = np.zeros_like(p.tensor.data)
            m, v = self.moments[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
            p.tensor.data -= self.lr * (update + self.weight_decay * p.tensor.data)
            p.tensor.zero_grad()


def optimizer_step(store: ParamStore, opt: AdamW, cfg: TrainConfig):
    opt.step(store)


# -- the iteration -------------------------------------------------------


def accumulate_iteration(store: ParamStore, config: ModelConfig, teacher: Teacher | None,
                         batch: Batch, cfg: TrainConfig, sampler: StableSampler,
                         slots: list[Fraction] | None = None) -> LossBundle:
    """Forward + backward the four activated subnets, accumulating grads.

    Runs largest-first so each student's teacher probabilities are already
    recorded (and detached) when needed. Does not touch the optimizer.
    """
    if slots is None:
        slots = draw_slots(sampler, cfg)
    external = teacher.class_probs(batch.images) if teacher is not None else None

    records = []
    prev_dis = None
    full_dis = None
    for i, r in enumerate(slots):
        out = forward(store, config, batch.images, r)
        if i == 0:
            target = external
        elif cfg.pkt:
            target = prev_dis
        else:
            target = full_dis
        loss, ce_val, kl_val = subnet_loss(out, batch.labels, target, cfg, is_full=(i == 0))
        T.backward(loss)
        records.append(SubnetLossRecord(ratio=r, ce=ce_val, kl=kl_val))
        prev_dis = _softmax_np(out.p_dis.data)
        if i == 0:
            full_dis = prev_dis
    return LossBundle(records=records, lam=cfg.lam)


def train_step(store: ParamStore, config: ModelConfig, teacher: Teacher | None,
               batch: Batch, cfg: TrainConfig, sampler: StableSampler,
               opt: AdamW) -> LossBundle:
    """One full training iteration: accumulate all four subnets, one update."""
    bundle = accumulate_iteration(store, config, teacher, batch, cfg, sampler)
    opt.step(store)
    return bundle


# -- epoch loops ----------------------------------------------------------


@dataclass
class TrainState:
    """Everything a resumed run needs to continue bit-identically."""

    store: ParamStore
    opt: AdamW
    rng: np.random.Generator
    epoch: int = 0


def _batches(images: np.ndarray, labels: np.ndarray, order: np.ndarray, batch_size: int):
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield Batch(images=images[idx], labels=labels[idx])


def run_teacher_epoch(state: TrainState, config: ModelConfig, cfg: TrainConfig,
                      images: np.ndarray, labels: np.ndarray) -> float:
    """One CE-only epoch of the full-width model. Returns the mean CE."""
    order = state.rng.permutation(len(labels))
    total, count = 0.0, 0
    for batch in _batches(images, labels, order, cfg.batch_size):
        batch.validate(config)
        out = forward(state.store, config, batch.images, Fraction(1))
        # Classification head only: the external-teacher signal later reads
        # p_cls, and the distillation head stays untrained in phase 1.
        loss = ce_loss(out.p_cls, batch.labels)
        T.backward(loss)
        state.opt.step(state.store)
        total += float(loss.data) * len(batch.labels)
        count += len(batch.labels)
    state.epoch += 1
    return total / count


def run_scala_epoch(state: TrainState, config: ModelConfig, teacher: Teacher | None,
                    cfg: TrainConfig, sampler: StableSampler,
                    images: np.ndarray, labels: np.ndarray) -> dict[Fraction, SubnetLossRecord]:
    """One joint epoch over all four activated subnets per iteration.

    Returns mean CE / KL per activated ratio for the metrics stream.
    """
    order = state.rng.permutation(len(labels))
    sums: dict[Fraction, list] = {}
    for batch in _batches(images, labels, order, cfg.batch_size):
        batch.validate(config)
        bundle = train_step(state.store, config, teacher, batch, cfg, sampler, state.opt)
        for rec in bundle.records:
            entry = sums.setdefault(rec.ratio, [0.0, 0, 0.0, 0])
            if rec.ce is not None:
                entry[0] += rec.ce
                entry[1] += 1
            if rec.kl is not None:
                entry[2] += rec.kl
                entry[3] += 1
    state.epoch += 1
    out = {}
    for ratio, (ce_sum, ce_n, kl_sum, kl_n) in sorted(sums.items()):
        out[ratio] = SubnetLossRecord(
            ratio=ratio,
            ce=ce_sum / ce_n if ce_n else None,
            kl=kl_sum / kl_n if kl_n else None,
        )
    return out
