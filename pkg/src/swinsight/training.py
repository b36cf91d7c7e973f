"""Cross-entropy training with Adam, plus evaluation helpers."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DataError, NumericError, ShapeError
from .swin import SwinModel

logger = logging.getLogger(__name__)

LOG_FLOOR = 1e-12


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 10
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1 and self.adam_eps > 0):
            raise ConfigError("adam betas must lie in [0, 1) and eps must be > 0")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class TrainTrace:
    records: list[EpochRecord] = field(default_factory=list)

    def append(self, record: EpochRecord) -> None:
        values = (record.train_loss, record.train_acc, record.val_loss, record.val_acc)
        if not all(np.isfinite(v) for v in values):
            raise NumericError(f"non-finite metrics at epoch {record.epoch}: {values}")
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> list[float]:
        return [getattr(r, name) for r in self.records]

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,train_acc,val_loss,val_acc"]
        for r in self.records:
            lines.append(f"{r.epoch},{r.train_loss!r},{r.train_acc!r},{r.val_loss!r},{r.val_acc!r}")
        return "\n".join(lines) + "\n"


@dataclass
class EvalResult:
    loss: float
    accuracy: float
    scores: np.ndarray  # (N, 2) softmax probabilities
    labels: np.ndarray


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log softmax probability of the true class.

    The probability is floored at 1e-12 before the log.
    """
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy expects (B, C) logits and (B,) labels, got {logits.shape}, {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ValueError(f"labels must lie in [0, {logits.shape[1]}), got range [{labels.min()}, {labels.max()}]")
    probs = ad.softmax(logits, axis=-1)
    true_p = ad.clamp_min(ad.pick(probs, labels), LOG_FLOOR)
    return ad.neg(ad.mean(ad.log(true_p)))


def adam_step(params: dict[str, Tensor], state: AdamState, cfg: TrainConfig, grads: dict[str, np.ndarray] | None = None) -> None:
    """One bias-corrected Adam update, in place on ``params``.

    Gradients default to each parameter's ``.grad``; missing gradients count
    as zero.
    """
    state.t += 1
    t = state.t
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    lr = cfg.learning_rate
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads.get(name) if grads is not None else p.grad
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter is {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.m[name] = m.astype(p.dtype, copy=False)
        state.v[name] = v.astype(p.dtype, copy=False)
        if lr == 0.0:
            continue
        update = lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
        new = (p.data - update).astype(p.dtype, copy=False)
        if not np.isfinite(new).all():
            raise NumericError(f"Adam produced non-finite values in {name} at step {t}")
        p.data = new


def _unpack(batch):
    if hasattr(batch, "images"):
        return batch.images, np.asarray(batch.labels)
    images, labels = batch
    return images, np.asarray(labels)


def train_epoch(
    model: SwinModel,
    data: Iterable,
    state: AdamState,
    cfg: TrainConfig,
    rng: np.random.Generator | None = None,
) -> tuple[float, float]:
    """One pass over ``data``; returns sample-weighted (loss, accuracy)."""
    total_loss = 0.0
    correct = 0
    seen = 0
    dropout_rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    for batch in data:
        images, labels = _unpack(batch)
        model.zero_grad()
        logits = model.forward(images, training=True, rng=dropout_rng)
        loss = cross_entropy(logits, labels)
        ad.backward(loss)
        adam_step(model.params, state, cfg)
        n = len(labels)
        total_loss += loss.item() * n
        correct += int((np.argmax(logits.data, axis=1) == labels).sum())
        seen += n
    if seen == 0:
        raise DataError("training iterator yielded no samples")
    model.zero_grad()
    return total_loss / seen, correct / seen


def evaluate(model: SwinModel, data: Iterable) -> EvalResult:
    """Deterministic eval-mode pass; scores are softmax probabilities."""
    scores, labels, losses = [], [], []
    with ad.no_grad():
        for batch in data:
            images, y = _unpack(batch)
            logits = model.forward(images, training=False)
            losses.append(cross_entropy(logits, y).item() * len(y))
            scores.append(ad.softmax(logits, axis=-1).data.astype(np.float64))
            labels.append(y)
    if not labels:
        raise DataError("evaluation iterator yielded no samples")
    scores_arr = np.concatenate(scores)
    labels_arr = np.concatenate(labels).astype(np.int64)
    n = len(labels_arr)
    acc = float((np.argmax(scores_arr, axis=1) == labels_arr).mean())
    return EvalResult(float(sum(losses) / n), acc, scores_arr, labels_arr)


def array_batches(
    images: np.ndarray, labels: np.ndarray, batch_size: int, seed: int | None = None, epoch: int = 0
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield mini-batches; shuffled by a permutation drawn from (seed, epoch)."""
    n = len(labels)
    order = np.arange(n) if seed is None else np.random.default_rng([seed, epoch]).permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        yield images[idx], labels[idx]


def fit(
    model: SwinModel,
    train_images: np.ndarray,
    train_labels: np.ndarray,
    val_images: np.ndarray | None,
    val_labels: np.ndarray | None,
    cfg: TrainConfig,
    state: AdamState | None = None,
) -> tuple[TrainTrace, AdamState]:
    """Run ``cfg.epochs`` epochs, recording train and validation curves."""
    state = state if state is not None else AdamState()
    trace = TrainTrace()
    dropout_rng = np.random.default_rng([cfg.seed, 1_000_003])
    dt = np.dtype(cfg.dtype)
    train_images = np.asarray(train_images, dtype=dt)
    train_labels = np.asarray(train_labels, dtype=np.int64)
    has_val = val_images is not None and len(val_labels) > 0
    if has_val:
        val_images = np.asarray(val_images, dtype=dt)
        val_labels = np.asarray(val_labels, dtype=np.int64)
    for epoch in range(1, cfg.epochs + 1):
        batches = array_batches(train_images, train_labels, cfg.batch_size, cfg.seed, epoch)
        tr_loss, tr_acc = train_epoch(model, batches, state, cfg, dropout_rng)
        if has_val:
            res = evaluate(model, array_batches(val_images, val_labels, cfg.batch_size))
            va_loss, va_acc = res.loss, res.accuracy
        else:
            va_loss, va_acc = tr_loss, tr_acc
        trace.append(EpochRecord(epoch, tr_loss, tr_acc, va_loss, va_acc))
        logger.info("epoch %d: train loss %.4f acc %.4f | val loss %.4f acc %.4f", epoch, tr_loss, tr_acc, va_loss, va_acc)
    return trace, state
