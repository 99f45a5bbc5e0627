"""Adversarial minibatch SGD for DANN-R and the source-only baseline."""
from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np

from .model import DannrModel, record_losses
from .nn import EPS, ConfigError, SchemaError, Tape, sigmoid

SCHEDULE_KINDS = ("constant", "linear_decay", "dann_ramp")


class TrainingDiverged(FloatingPointError):
    """A minibatch produced a non-finite loss."""

    def __init__(self, epoch, batch, lr, ld):
        where = f"epoch {epoch}" + ("" if batch is None else f", batch {batch}")
        super().__init__(f"non-finite loss at {where} "
                         f"(regression={lr!r}, domain={ld!r})")
        self.epoch, self.batch = epoch, batch


@dataclass
class LambdaSchedule:
    kind: str = "linear_decay"
    start: float = 1.0
    end: float = 0.0

    def validate(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ConfigError(f"unknown lambda schedule {self.kind!r}; expected one of {SCHEDULE_KINDS}")
        if self.start < 0 or self.end < 0:
            raise ConfigError("lambda values must be non-negative")


def lambda_at(schedule: LambdaSchedule, epoch: int, total_epochs: int) -> float:
    """Adversarial weight for ``epoch`` (0-based) of ``total_epochs``."""
    schedule.validate()
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    p = epoch / (total_epochs - 1) if total_epochs > 1 else 0.0
    if schedule.kind == "constant":
        return float(schedule.start)
    if schedule.kind == "linear_decay":
        return float(schedule.start + (schedule.end - schedule.start) * p)
    return float(schedule.start * (2.0 / (1.0 + math.exp(-10.0 * p)) - 1.0))


@dataclass
class TrainConfig:
    mu: float = 0.05
    lambda_schedule: LambdaSchedule = field(default_factory=LambdaSchedule)
    epochs: int = 200
    batch_size: int = 64
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if isinstance(self.lambda_schedule, dict):
            self.lambda_schedule = LambdaSchedule(**self.lambda_schedule)

    def validate(self):
        if not self.mu > 0:
            raise ConfigError(f"learning rate must be positive, got {self.mu}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        self.lambda_schedule.validate()

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    lam: float
    source_regression_loss: float
    domain_loss: Optional[float]
    seconds: float


@dataclass
class TrainTrace:
    records: List[EpochRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "lambda", "source_regression_loss", "domain_loss", "seconds"])
            for r in self.records:
                w.writerow([r.epoch, repr(r.lam), repr(r.source_regression_loss),
                            "" if r.domain_loss is None else repr(r.domain_loss), f"{r.seconds:.6f}"])


def full_batch_losses(model: DannrModel, Xs, ys, Xt=None):
    """Mean source squared error and, if ``Xt`` is given, mean domain cross-entropy."""
    fs = model.features(Xs)
    pred = (fs @ model.regressor.weights.T + model.regressor.bias)[:, 0]
    lr = float(np.mean((pred - ys) ** 2))
    if Xt is None:
        return lr, None
    d = model.discriminator
    ps = np.clip(sigmoid(fs @ d.weights.T + d.bias), EPS, 1 - EPS)
    pt = np.clip(sigmoid(model.features(Xt) @ d.weights.T + d.bias), EPS, 1 - EPS)
    ld = float((-np.log1p(-ps).sum() - np.log(pt).sum()) / (len(ps) + len(pt)))
    return lr, ld


def _check_inputs(model, source, target=None):
    if source.y is None:
        raise ValueError("source dataset must be labeled")
    if len(source) == 0 or (target is not None and len(target) == 0):
        raise ValueError("training datasets must be non-empty")
    for ds in (source, target):
        if ds is not None and ds.X.shape[1] != model.input_dim:
            raise SchemaError(f"dataset has {ds.X.shape[1]} features, model expects {model.input_dim}")


def _streams(seed):
    # independent streams so the source permutation does not depend on
    # whether target indices are also drawn
    src, tgt = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(src), np.random.default_rng(tgt)


def _batches(n, cfg, rng):
    order = rng.permutation(n) if cfg.shuffle else np.arange(n)
    return [order[i:i + cfg.batch_size] for i in range(0, n, cfg.batch_size)]


def dannr_step(model: DannrModel, Xs, ys, Xt, lam: float, mu: float):
    """One in-place update: regression path descends L_r, the discriminator
    descends lam * L_d and the feature extractor receives the reversed
    domain gradient. Returns the batch ``(L_r, L_d)``."""
    tape = Tape()
    lr, ld = record_losses(tape, model, Xs, ys, Xt, reverse=1.0)
    grads = tape.backward(tape.combine([(lr, 1.0), (ld, lam)]))
    for key, p in model.parameters().items():
        p -= mu * grads[key]
    return float(lr.value), float(ld.value)


def baseline_step(model: DannrModel, Xs, ys, mu: float) -> float:
    tape = Tape()
    h = tape.input(Xs)
    for layer in model.feature_layers:
        h = tape.dense(layer, h)
    lr = tape.squared_error(tape.dense(model.regressor, h), np.reshape(ys, (-1, 1)), Xs.shape[0])
    grads = tape.backward(lr)
    for key, p in model.regression_parameters().items():
        p -= mu * grads[key]
    return float(lr.value)


def train_dannr(model: DannrModel, source, target, cfg: TrainConfig):
    """Adversarially train a copy of ``model``. Target labels are never read."""
    cfg.validate()
    _check_inputs(model, source, target)
    model = model.copy()
    Xs, ys, Xt = source.X, source.y, target.X
    src_rng, tgt_rng = _streams(cfg.seed)
    trace = TrainTrace()
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lam = lambda_at(cfg.lambda_schedule, epoch, cfg.epochs)
        for b, idx in enumerate(_batches(len(Xs), cfg, src_rng)):
            tidx = tgt_rng.integers(0, len(Xt), size=len(idx))
            lr, ld = dannr_step(model, Xs[idx], ys[idx], Xt[tidx], lam, cfg.mu)
            if not (math.isfinite(lr) and math.isfinite(ld)):
                raise TrainingDiverged(epoch, b, lr, ld)
        lr, ld = full_batch_losses(model, Xs, ys, Xt)
        if not (math.isfinite(lr) and math.isfinite(ld)):
            raise TrainingDiverged(epoch, None, lr, ld)
        trace.records.append(EpochRecord(epoch, lam, lr, ld, time.perf_counter() - t0))
    model.meta = {**model.meta, "mode": "dannr", "train_config": cfg.to_dict()}
    return model, trace


def train_baseline(model: DannrModel, source, cfg: TrainConfig):
    """Source-only SGD on the regression loss; the discriminator is untouched."""
    cfg.validate()
    _check_inputs(model, source)
    model = model.copy()
    Xs, ys = source.X, source.y
    src_rng, _ = _streams(cfg.seed)
    trace = TrainTrace()
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        for b, idx in enumerate(_batches(len(Xs), cfg, src_rng)):
            lr = baseline_step(model, Xs[idx], ys[idx], cfg.mu)
            if not math.isfinite(lr):
                raise TrainingDiverged(epoch, b, lr, None)
        lr, _ = full_batch_losses(model, Xs, ys)
        if not math.isfinite(lr):
            raise TrainingDiverged(epoch, None, lr, None)
        trace.records.append(EpochRecord(epoch, 0.0, lr, None, time.perf_counter() - t0))
    model.meta = {**model.meta, "mode": "baseline", "train_config": cfg.to_dict()}
    return model, trace
