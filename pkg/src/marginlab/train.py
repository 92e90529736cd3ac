"""Deterministic mini-batch training with momentum SGD.

The loop is single-threaded by contract: given the same dataset, initial
model and config it reproduces every parameter bit at every step. Shuffling
draws from its own seeded generator so changing the epoch count never alters
the data. A non-finite loss aborts immediately rather than producing a
corrupt checkpoint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import losses
from .data import Dataset
from .errors import ConfigError, NumericalError
from .losses import LabeledLogits, MarginConfig
from .model import EncoderParams, model_backward, model_forward, renormalize_class_weights


@dataclass(frozen=True)
class TrainConfig:
    loss: MarginConfig = field(default_factory=MarginConfig)
    lr: float = 0.05
    momentum: float = 0.9
    epochs: int = 30
    batch_size: int = 64
    seed: int = 23
    shuffle: bool = True

    def __post_init__(self):
        # lr = 0 is allowed as an explicit no-op optimizer.
        if self.lr < 0.0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if not (0.0 <= self.momentum < 1.0):
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class TrainHistory:
    mean_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    steps: int = 0


def write_history_csv(path, history: TrainHistory) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch,mean_loss,train_acc\n")
        for epoch, (loss, acc) in enumerate(zip(history.mean_loss, history.train_acc), start=1):
            fh.write(f"{epoch},{loss:.17g},{acc:.17g}\n")


def _train_accuracy(params: EncoderParams, weights: np.ndarray,
                    feats: np.ndarray, labels: np.ndarray) -> float:
    logits, _ = model_forward(params, weights, feats)
    return float(np.mean(logits.argmax(axis=1) == labels))


def train(dataset: Dataset, params: EncoderParams, class_weights: np.ndarray,
          cfg: TrainConfig) -> tuple[EncoderParams, np.ndarray, TrainHistory]:
    """Train a copy of the model; the inputs are left untouched.

    Returns the trained (params, class_weights) and a history with one mean
    loss and one training accuracy per epoch.
    """
    train_idx = dataset.train_indices
    if train_idx.size == 0:
        raise ConfigError("dataset has no training rows")
    if class_weights.shape[0] != dataset.num_speakers:
        raise ConfigError(
            f"class weight matrix has {class_weights.shape[0]} rows for "
            f"{dataset.num_speakers} speakers"
        )

    params = params.copy()
    weights = class_weights.copy()
    velocity = {name: np.zeros_like(t) for name, t in params.tensors()}
    velocity["cw"] = np.zeros_like(weights)
    shuffle_rng = np.random.default_rng(cfg.seed)

    history = TrainHistory()
    step = 0
    for _ in range(cfg.epochs):
        order = shuffle_rng.permutation(train_idx) if cfg.shuffle else train_idx
        loss_sum = 0.0
        for start in range(0, order.size, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            feats = dataset.features[batch]
            labels = dataset.labels[batch]
            logits, trace = model_forward(params, weights, feats)
            out = losses.evaluate(LabeledLogits(logits, labels), cfg.loss)
            if not math.isfinite(out.value):
                raise NumericalError(f"non-finite loss at step {step}")
            enc_grads, w_grad = model_backward(trace, weights, out.grad)

            for name, tensor in params.tensors():
                grad = getattr(enc_grads, name)
                velocity[name] = cfg.momentum * velocity[name] + grad
                tensor -= cfg.lr * velocity[name]
            velocity["cw"] = cfg.momentum * velocity["cw"] + w_grad
            weights -= cfg.lr * velocity["cw"]
            weights = renormalize_class_weights(weights)

            loss_sum += out.value * batch.size
            step += 1
        history.mean_loss.append(loss_sum / order.size)
        history.train_acc.append(
            _train_accuracy(params, weights, dataset.features[train_idx],
                            dataset.labels[train_idx])
        )
    history.steps = step
    return params, weights, history


def whole_model_grad_check(features, labels, params: EncoderParams,
                           class_weights: np.ndarray, loss_cfg: MarginConfig,
                           eps: float = 1e-5) -> float:
    """Central-difference check of the full backward pass.

    Perturbs every scalar parameter (both encoder layers and the class
    weights) by +-eps and compares against the analytic gradient. Returns the
    maximum relative deviation, absolute where the analytic entry is below
    1e-8. For the hinged variant the caller must supply a batch whose margin
    gaps stay clear of the hinge (see ``losses.margin_gap_clearance``);
    results within the probe step of the hinge are meaningless.
    """
    if not (1e-7 <= eps <= 1e-4):
        raise ConfigError(f"eps must be in [1e-7, 1e-4], got {eps}")
    feats = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    work = params.copy()
    weights = np.asarray(class_weights, dtype=np.float64).copy()

    logits, trace = model_forward(work, weights, feats, validate=False)
    d_logits = losses.raw_loss_grad(logits, labels, loss_cfg)
    enc_grads, w_grad = model_backward(trace, weights, d_logits)

    def value() -> float:
        raw, _ = model_forward(work, weights, feats, validate=False)
        return losses.raw_loss_value(raw, labels, loss_cfg)

    worst = 0.0
    analytic_tensors = dict(enc_grads.tensors())
    analytic_tensors["cw"] = w_grad
    probe_tensors = dict(work.tensors())
    probe_tensors["cw"] = weights
    for name, tensor in probe_tensors.items():
        flat = tensor.reshape(-1)
        grad_flat = analytic_tensors[name].reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            plus = value()
            flat[k] = orig - eps
            minus = value()
            flat[k] = orig
            fd = (plus - minus) / (2.0 * eps)
            a = grad_flat[k]
            err = abs(a - fd) if abs(a) < 1e-8 else abs(a - fd) / abs(a)
            worst = max(worst, err)
    return worst
