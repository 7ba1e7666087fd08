"""End-to-end optimization and evaluation of the staged network.

Training minimizes the cross-entropy of the fused sequence-level
distribution with momentum SGD, dropping the learning rate by a factor of
10 at fixed epochs. Every epoch re-samples clip offsets (in random
sampling mode); evaluation always uses centered clips and running
normalization statistics, so it is deterministic.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import stream_features
from .errors import ConfigError, NumericalError
from .model import sequence_stage_clips, two_stream_scores
from .optim import MomentumSGD
from .sampling import plan_stages


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings."""

    batch_size: int = 32
    lr: float = 0.1
    momentum: float = 0.9
    lr_drops: tuple = (40, 60)
    epochs: int = 80
    seed: int = 0
    weight_decay: float = 0.0
    grad_clip: float = 0.0
    sampling_mode: str = "random"
    stop_train_acc: float = 0.0
    stop_patience: int = 1
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epoch count must be >= 1, got {self.epochs}")
        drops = tuple(self.lr_drops)
        if list(drops) != sorted(set(drops)):
            raise ConfigError(f"lr drop epochs must be strictly increasing, got {drops}")
        if drops and drops[-1] >= self.epochs:
            raise ConfigError(
                f"lr drop epochs {drops} must all be smaller than the epoch count "
                f"{self.epochs}")
        if not 0.0 <= self.stop_train_acc <= 1.0:
            raise ConfigError(f"stop threshold must be in [0, 1], got {self.stop_train_acc}")


def lr_at_epoch(epoch, config):
    """Learning rate for a 1-based epoch: base divided by 10 per passed drop."""
    passed = sum(1 for d in config.lr_drops if epoch >= d)
    return config.lr / (10.0 ** passed)


def cross_entropy(fused_probs, labels):
    """Mean negative log-likelihood of the fused distributions (epsilon-clamped)."""
    picked = T.gather_rows(fused_probs, np.asarray(labels, dtype=np.intp))
    return T.neg(T.mean_all(T.log_clamped(picked)))


@dataclass
class TrainReport:
    """Per-epoch records plus end-of-run bookkeeping."""

    epochs: list = field(default_factory=list)
    stopped_epoch: int = 0
    wall_clock: float = 0.0

    @property
    def final_train_accuracy(self):
        return self.epochs[-1]["train_acc"] if self.epochs else 0.0


@dataclass
class EvalResult:
    """Accuracy of the fused prediction and of every stage's early prediction."""

    accuracy: float
    stage_accuracies: list
    confusion: np.ndarray
    fused_probs: np.ndarray
    seq_ids: list
    labels: np.ndarray

    @property
    def predictions(self):
        return np.argmax(self.fused_probs, axis=1)


def _dataset_clips(dataset, model, indices, mode, rng):
    """Stage clips and labels for a batch of dataset sequences."""
    config = model.config
    clips = []
    labels = []
    for i in indices:
        seq = dataset.sequences[i]
        feats = stream_features(seq.positions, config.topology, config.stream)
        plans = plan_stages(seq.num_frames, config.stages, config.clip_len, mode, rng)
        clips.append(sequence_stage_clips(feats, plans))
        labels.append(seq.label)
    return np.stack(clips, axis=1), np.asarray(labels, dtype=np.intp)


def _global_grad_norm(params):
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    return np.sqrt(total)


def train_model(dataset, model, spec, config, on_epoch=None, on_checkpoint=None):
    """Optimize one model on one dataset split.

    Deterministic given the config seed: the per-epoch shuffle and clip
    sampling use a generator derived from (seed, epoch). ``on_epoch`` is
    called with each epoch record; ``on_checkpoint`` with (epoch,) at the
    configured cadence. Raises NumericalError if the loss leaves the finite
    range.
    """
    if len(dataset) == 0:
        raise ConfigError("cannot train on an empty dataset")
    if dataset.num_classes != model.config.classes:
        raise ConfigError(
            f"dataset has {dataset.num_classes} classes, model expects "
            f"{model.config.classes}")
    optimizer = MomentumSGD(model.params(), config.lr, config.momentum)
    report = TrainReport()
    started = time.perf_counter()
    streak = 0
    for epoch in range(1, config.epochs + 1):
        rng = np.random.default_rng([config.seed, epoch])
        optimizer.lr = lr_at_epoch(epoch, config)
        order = rng.permutation(len(dataset))
        losses = []
        hits = 0
        for start in range(0, len(order), config.batch_size):
            indices = order[start:start + config.batch_size]
            clips, labels = _dataset_clips(dataset, model, indices,
                                           config.sampling_mode, rng)
            prediction = model.forward_clips(clips, spec, train=True)
            loss = cross_entropy(prediction.fused, labels)
            value = float(loss.data)
            if not np.isfinite(value):
                raise NumericalError(
                    f"non-finite loss {value} at epoch {epoch}, batch {start // config.batch_size}")
            hits += int(np.sum(np.argmax(prediction.fused_array(), axis=1) == labels))
            losses.append((value, len(indices)))
            optimizer.zero_grad()
            T.backward(loss)
            if config.weight_decay > 0:
                for p in model.params():
                    if p.grad is not None:
                        p.grad = p.grad + config.weight_decay * p.data
            if config.grad_clip > 0:
                norm = _global_grad_norm(model.params())
                if norm > config.grad_clip:
                    factor = config.grad_clip / norm
                    for p in model.params():
                        if p.grad is not None:
                            p.grad = p.grad * factor
            optimizer.step()
        total = sum(n for _, n in losses)
        record = {
            "epoch": epoch,
            "lr": optimizer.lr,
            "train_loss": sum(v * n for v, n in losses) / total,
            "train_acc": hits / total,
        }
        report.epochs.append(record)
        report.stopped_epoch = epoch
        if on_epoch is not None:
            on_epoch(record)
        if (on_checkpoint is not None and config.checkpoint_every > 0
                and epoch % config.checkpoint_every == 0):
            on_checkpoint(epoch)
        if config.stop_train_acc > 0 and record["train_acc"] >= config.stop_train_acc:
            streak += 1
            if streak >= config.stop_patience:
                break
        else:
            streak = 0
    report.wall_clock = time.perf_counter() - started
    return report


def stage_probabilities(dataset, model, batch_size=16):
    """Eval-mode per-stage distributions for a whole dataset.

    Returns (stage_probs, labels, seq_ids) with stage_probs shaped
    (stages, sequences, classes). Deterministic: centered clips, running
    statistics.
    """
    all_stage = []
    labels = []
    ids = []
    for start in range(0, len(dataset), batch_size):
        indices = range(start, min(start + batch_size, len(dataset)))
        clips, batch_labels = _dataset_clips(dataset, model, indices, "center", None)
        hidden = None
        batch_stage = []
        for t in range(model.config.stages):
            probs, hidden = model.stage_step(clips[t], hidden, train=False)
            batch_stage.append(probs.data)
        all_stage.append(np.stack(batch_stage))
        labels.append(batch_labels)
        ids.extend(dataset.sequences[i].seq_id for i in indices)
    return np.concatenate(all_stage, axis=1), np.concatenate(labels), ids


def evaluate_model(dataset, model, spec, batch_size=16):
    """Fused and per-stage top-1 accuracy plus a confusion matrix."""
    stage_probs, labels, ids = stage_probabilities(dataset, model, batch_size)
    weights = np.asarray(spec.weights)
    fused = np.tensordot(weights, stage_probs, axes=(0, 0))
    preds = np.argmax(fused, axis=1)
    accuracy = float(np.mean(preds == labels))
    stage_accuracies = [float(np.mean(np.argmax(stage_probs[t], axis=1) == labels))
                        for t in range(stage_probs.shape[0])]
    confusion = np.zeros((dataset.num_classes, dataset.num_classes), dtype=np.int64)
    for truth, pred in zip(labels, preds):
        confusion[truth, pred] += 1
    return EvalResult(accuracy, stage_accuracies, confusion, fused, ids, labels)


def evaluate_two_stream(dataset, spatial_model, motion_model, spec, alpha=0.5,
                        batch_size=16):
    """Accuracy of the score-fused two-stream prediction.

    Returns (fused EvalResult, spatial EvalResult, motion EvalResult).
    """
    spatial = evaluate_model(dataset, spatial_model, spec, batch_size)
    motion = evaluate_model(dataset, motion_model, spec, batch_size)
    fused = two_stream_scores(spatial.fused_probs, motion.fused_probs, alpha)
    preds = np.argmax(fused, axis=1)
    accuracy = float(np.mean(preds == spatial.labels))
    confusion = np.zeros((dataset.num_classes, dataset.num_classes), dtype=np.int64)
    for truth, pred in zip(spatial.labels, preds):
        confusion[truth, pred] += 1
    combined = EvalResult(accuracy, [], confusion, fused, spatial.seq_ids,
                          spatial.labels)
    return combined, spatial, motion
