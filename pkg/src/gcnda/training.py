"""Adadelta minibatch training with early stopping on validation loss."""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import model as M
from .tensor import ShapeError, bce_loss, make_rng, sigmoid

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdadeltaSlot:
    eg2: np.ndarray
    edx2: np.ndarray


class Adadelta:
    """Adadelta with per-tensor accumulators of squared gradients and updates."""

    def __init__(self, rho: float = 0.95, eps: float = 1e-6):
        self.rho = rho
        self.eps = eps
        self.slots: dict[str, AdadeltaSlot] = {}

    def slot(self, name: str, like: np.ndarray) -> AdadeltaSlot:
        if name not in self.slots:
            self.slots[name] = AdadeltaSlot(np.zeros_like(like), np.zeros_like(like))
        return self.slots[name]

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """Update every array in ``params`` in place."""
        for name, p in params.items():
            adadelta_step(p, grads[name], self.slot(name, p), self.rho, self.eps)


def adadelta_step(
    param: np.ndarray, grad: np.ndarray, slot: AdadeltaSlot, rho: float = 0.95, eps: float = 1e-6
) -> np.ndarray:
    """One in-place Adadelta update; returns the applied delta."""
    if param.shape != grad.shape or slot.eg2.shape != param.shape:
        raise ShapeError(f"param {param.shape}, grad {grad.shape}, state {slot.eg2.shape} differ")
    slot.eg2 *= rho
    slot.eg2 += (1.0 - rho) * grad * grad
    delta = -np.sqrt((slot.edx2 + eps) / (slot.eg2 + eps)) * grad
    slot.edx2 *= rho
    slot.edx2 += (1.0 - rho) * delta * delta
    param += delta
    return delta


# ---------------------------------------------------------------------------
# data containers
# ---------------------------------------------------------------------------


@dataclass
class Split:
    """Encoded examples ``x`` ([n, N] indices) with labels ``y``."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if len(self.x) != len(self.y):
            raise ValueError(f"{len(self.x)} examples but {len(self.y)} labels")

    def __len__(self) -> int:
        return len(self.y)


@dataclass
class TrainConfig:
    epochs: int = 50
    patience: int | None = 10
    min_delta: float = 1e-6
    batch_size: int = 16
    rho: float = 0.95
    eps: float = 1e-6
    keep_embed: float = M.KEEP_EMBED
    keep_dense: float = M.KEEP_DENSE
    seed: int = 0


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float
    seconds: float


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_loss", "val_accuracy", "seconds"])
        for r in self.epochs:
            writer.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.val_accuracy), f"{r.seconds:.6f}"])
        return buf.getvalue()

    def epoch_seconds(self) -> list[float]:
        return [r.seconds for r in self.epochs]


class EarlyStopping:
    """Tracks the best validation loss; ``update`` returns True when training should stop.

    An epoch counts as an improvement only if its loss is below
    ``best - min_delta``. ``patience=None`` disables stopping.
    """

    def __init__(self, patience: int | None = 10, min_delta: float = 1e-6):
        self.patience = patience
        self.min_delta = min_delta
        self.best_loss = np.inf
        self.best_epoch = 0
        self.wait = 0

    def update(self, epoch: int, loss: float) -> bool:
        if loss < self.best_loss - self.min_delta:
            self.best_loss = loss
            self.best_epoch = epoch
            self.wait = 0
            return False
        self.wait += 1
        return self.patience is not None and self.wait >= self.patience

    @property
    def improved_last(self) -> bool:
        return self.wait == 0


# ---------------------------------------------------------------------------
# loops
# ---------------------------------------------------------------------------


def batch_slices(n: int, batch_size: int) -> list[slice]:
    """Full batches followed by one ragged tail batch, if any."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    return [slice(i, min(i + batch_size, n)) for i in range(0, n, batch_size)]


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return make_rng(seed ^ epoch)


def train_epoch(
    params: M.GcnParams,
    opt: Adadelta,
    train: Split,
    batch_size: int,
    rng: np.random.Generator,
    keep_embed: float = M.KEEP_EMBED,
    keep_dense: float = M.KEEP_DENSE,
    epoch: int = 0,
) -> float:
    """One pass over ``train`` in shuffled order; returns the size-weighted mean loss."""
    n = len(train)
    if n == 0:
        raise ValueError("training split is empty")
    order = rng.permutation(n)
    trainable = params.trainable()
    total = 0.0
    for b, sl in enumerate(batch_slices(n, batch_size)):
        rows = order[sl]
        probs, cache = M.forward(params, train.x[rows], True, rng, keep_embed, keep_dense)
        loss = bce_loss(probs, train.y[rows])
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
        grads = M.backward(params, cache, train.y[rows])
        opt.step(trainable, grads)
        total += loss * len(rows)
    return total / n


def evaluate(params: M.GcnParams, split: Split, batch_size: int = 256) -> tuple[float, float]:
    """Inference-mode (accuracy, mean loss)."""
    if len(split) == 0:
        raise ValueError("cannot evaluate an empty split")
    logits = M.predict_logits(params, split.x, batch_size)
    labels = (logits >= 0).astype(np.int64)
    return float(np.mean(labels == split.y)), bce_loss(sigmoid(logits), split.y)


def fit(params: M.GcnParams, train: Split, val: Split, config: TrainConfig) -> tuple[M.GcnParams, TrainReport]:
    """Train ``params`` in place; return a snapshot from the best validation epoch and the report."""
    if len(train) == 0 or len(val) == 0:
        raise ValueError("train and val splits must be non-empty")
    opt = Adadelta(config.rho, config.eps)
    stopper = EarlyStopping(config.patience, config.min_delta)
    report = TrainReport()
    best = params.copy()
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        train_loss = train_epoch(
            params, opt, train, config.batch_size, epoch_rng(config.seed, epoch),
            config.keep_embed, config.keep_dense, epoch,
        )
        seconds = time.perf_counter() - start
        val_acc, val_loss = evaluate(params, val)
        if not np.isfinite(val_loss):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        report.epochs.append(EpochRecord(epoch, train_loss, val_loss, val_acc, seconds))
        log.debug("epoch %d train %.4f val %.4f acc %.4f (%.2fs)", epoch, train_loss, val_loss, val_acc, seconds)
        stop = stopper.update(epoch, val_loss)
        if stopper.improved_last:
            best = params.copy()
        if stop:
            break
    report.stopped_epoch = epoch
    report.best_epoch = stopper.best_epoch
    return best, report

