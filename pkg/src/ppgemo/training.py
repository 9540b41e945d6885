"""Weighted-loss optimization with Adam and early stopping.

Training is deterministic for a fixed config seed: epoch shuffles and
dropout masks come from generators derived from (seed, epoch), and the
best-validation parameters are restored when stopping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .signals import Segment

TARGETS = ("valence", "arousal")

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 512
    max_epochs: int = 350
    patience: int = 80
    learning_rate: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    val_fraction_subjects: float = 0.2
    seed: int = 0
    target: str = "valence"
    # recompute class weights from each mini-batch instead of the fold
    reweight_per_batch: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if not 0 < self.patience < self.max_epochs:
            raise ConfigError(
                f"patience must be in (0, max_epochs), got patience={self.patience} "
                f"max_epochs={self.max_epochs}"
            )
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 < self.val_fraction_subjects < 1.0:
            raise ConfigError(
                f"val_fraction_subjects must be in (0, 1), got "
                f"{self.val_fraction_subjects}"
            )
        if self.target not in TARGETS:
            raise ConfigError(f"target must be one of {TARGETS}, got {self.target!r}")


@dataclass
class TrainLog:
    """Per-epoch curves plus the stopping bookkeeping.

    train_acc and val_acc are measured in infer mode after each epoch;
    train_loss is the epoch-mean optimization loss. Epochs are 1-based.
    """

    train_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stop_epoch: int = 0
    class_weights: list[float] = field(default_factory=list)

    def to_records(self) -> list[dict]:
        rows = [
            {
                "epoch": i + 1,
                "train_loss": self.train_loss[i],
                "train_acc": self.train_acc[i],
                "val_acc": self.val_acc[i],
            }
            for i in range(len(self.train_loss))
        ]
        rows.append(
            {
                "summary": {
                    "best_epoch": self.best_epoch,
                    "stop_epoch": self.stop_epoch,
                    "class_weights": self.class_weights,
                }
            }
        )
        return rows


class EarlyStopper:
    """Stop after `patience` consecutive epochs without a strictly better
    validation accuracy; ties do not reset the counter."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -math.inf
        self.best_epoch = 0
        self.bad = 0

    def update(self, epoch: int, val_acc: float) -> bool:
        """Returns True when training should stop after this epoch."""
        if val_acc > self.best:
            self.best = val_acc
            self.best_epoch = epoch
            self.bad = 0
            return False
        self.bad += 1
        return self.bad >= self.patience


def compute_class_weights(labels) -> np.ndarray:
    """Inverse-frequency weights w_c = N / (2 * n_c) for binary labels."""
    y = np.asarray(labels)
    counts = np.array([(y == 0).sum(), (y == 1).sum()])
    if (counts == 0).any():
        missing = int(np.argmax(counts == 0))
        raise DataError(f"class {missing} absent from labels; cannot train on one class")
    return y.size / (2.0 * counts)


def weighted_cce(probs, onehot, weights) -> float:
    """Mean over the batch of -w_y * ln p_y, with p clamped to [1e-12, 1]."""
    probs = np.asarray(probs, dtype=np.float64)
    onehot = np.asarray(onehot, dtype=np.float64)
    if probs.ndim != 2 or probs.shape != onehot.shape:
        raise ShapeError(
            f"probs and onehot must be matching 2-d arrays, got {probs.shape} "
            f"vs {onehot.shape}"
        )
    p = np.clip(probs, PROB_FLOOR, 1.0)
    nll = -(onehot * np.log(p)).sum(axis=1)
    w = (onehot * np.asarray(weights)).sum(axis=1)
    return float((w * nll).mean())


def weighted_cce_grad(probs, onehot, weights) -> np.ndarray:
    """Gradient of weighted_cce w.r.t. probs (zero where the clamp is active)."""
    probs = np.asarray(probs, dtype=np.float64)
    onehot = np.asarray(onehot, dtype=np.float64)
    if probs.ndim != 2 or probs.shape != onehot.shape:
        raise ShapeError(
            f"probs and onehot must be matching 2-d arrays, got {probs.shape} "
            f"vs {onehot.shape}"
        )
    p = np.clip(probs, PROB_FLOOR, 1.0)
    g = -(onehot * np.asarray(weights)) / (p * probs.shape[0])
    return g * (probs >= PROB_FLOOR)


class AdamState:
    """First/second moment accumulators keyed like the parameter dict."""

    def __init__(self, params: dict[str, np.ndarray]):
        self.step = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    config: TrainConfig,
) -> None:
    """One bias-corrected Adam update, applied to the parameters in place."""
    state.step += 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for k, p in params.items():
        g = grads[k]
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.adam_eps)


def make_validation_split(train_subjects, config: TrainConfig, seed) -> tuple[list, list]:
    """Subject-grouped split: ceil(val_fraction * n) subjects (at least one,
    never all) go to validation via a seeded shuffle."""
    subjects = sorted(set(train_subjects))
    n = len(subjects)
    if n < 2:
        raise DataError(f"need at least 2 training subjects to split, got {n}")
    n_val = max(1, math.ceil(config.val_fraction_subjects * n))
    n_val = min(n_val, n - 1)
    order = np.random.default_rng(seed).permutation(n)
    val = sorted(subjects[i] for i in order[:n_val])
    fit = sorted(subjects[i] for i in order[n_val:])
    return fit, val


def segments_to_arrays(segments: list[Segment], target: str) -> tuple[np.ndarray, np.ndarray]:
    """Stack segments into [N, W, 1] inputs and an [N] label vector."""
    if target not in TARGETS:
        raise ConfigError(f"target must be one of {TARGETS}, got {target!r}")
    if not segments:
        raise DataError("no segments to convert")
    x = np.stack([s.samples for s in segments]).astype(np.float64)[:, :, None]
    y = np.array([getattr(s, target) for s in segments], dtype=np.int64)
    return x, y


def predict_proba(model, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Infer-mode class probabilities, batched to bound memory."""
    chunks = [
        model.forward(x[i : i + batch_size], "infer")
        for i in range(0, x.shape[0], batch_size)
    ]
    return np.concatenate(chunks, axis=0)


def train(model, train_segments, val_segments, config: TrainConfig) -> tuple[TrainLog, dict]:
    """Optimize `model` in place; returns the log and the best snapshot.

    Shuffled mini-batches (the last partial batch is kept), validation
    accuracy in infer mode after every epoch, early stopping on strict
    improvement, best-epoch parameters restored before returning.
    """
    if not train_segments:
        raise DataError("empty training set")
    if not val_segments:
        raise DataError("empty validation set")
    overlap = {s.subject_id for s in train_segments} & {s.subject_id for s in val_segments}
    if overlap:
        raise DataError(f"validation subjects leak into training: {sorted(overlap)}")

    x, y = segments_to_arrays(train_segments, config.target)
    xv, yv = segments_to_arrays(val_segments, config.target)
    fold_weights = compute_class_weights(y)
    onehot = np.eye(2)[y]

    params = model.params()
    state = AdamState(params)
    stopper = EarlyStopper(config.patience)
    log = TrainLog(class_weights=fold_weights.tolist())
    best_snap = None
    n = y.size

    stop_epoch = config.max_epochs
    for epoch in range(1, config.max_epochs + 1):
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
        drop_rng = np.random.default_rng([config.seed, epoch, 1])
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            weights = fold_weights
            if config.reweight_per_batch and len(np.unique(y[idx])) == 2:
                weights = compute_class_weights(y[idx])
            probs = model.forward(x[idx], "train", drop_rng)
            total += weighted_cce(probs, onehot[idx], weights) * idx.size
            model.backward(weighted_cce_grad(probs, onehot[idx], weights))
            adam_step(params, model.grads(), state, config)
        log.train_loss.append(total / n)
        log.train_acc.append(float((predict_proba(model, x).argmax(axis=1) == y).mean()))
        val_acc = float((predict_proba(model, xv).argmax(axis=1) == yv).mean())
        log.val_acc.append(val_acc)
        improved = val_acc > stopper.best
        should_stop = stopper.update(epoch, val_acc)
        if improved:
            best_snap = model.snapshot()
        if should_stop:
            stop_epoch = epoch
            break

    log.best_epoch = stopper.best_epoch
    log.stop_epoch = stop_epoch
    model.restore(best_snap)
    return log, best_snap
