"""Seed training on smoothed noisy labels, few-shot fine-tuning, EMA, Adam.

The seed phase trains from scratch against soft targets built from the mixing
matrix M = (1 - alpha) I + (alpha / C) J applied to the (noisy) hard labels.
An exponential moving average of the parameters is maintained at every
optimizer step and is the parameter set evaluated and merged downstream.
Fine-tuning continues optimization from the seed on the expert-labeled subset
only, with hard labels and all layers trainable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .data import WindowedDataset
from .losses import LossSpec, loss_and_grad, mixup_batch
from .network import (ArchitectureSpec, ModelState, ParameterVector,
                      _forward_internal, backward, build_model, predict_proba)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class TrainingError(RuntimeError):
    pass


class TrainingDiverged(TrainingError):
    """Raised when the loss goes non-finite; carries a diagnostic payload."""

    def __init__(self, step: int, epoch: int, loss: float):
        self.step, self.epoch, self.loss = step, epoch, loss
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}, step {step}")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    epochs: int = 10
    batch_size: int = 64
    smoothing_alpha: float = 0.05
    ema_momentum: float = 0.99
    l2: float = 1e-4
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.smoothing_alpha <= 1.0:
            raise TrainingError("smoothing_alpha must be in [0, 1]")
        if not 0.0 <= self.ema_momentum < 1.0:
            raise TrainingError("ema_momentum must be in [0, 1)")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "smoothing_alpha": self.smoothing_alpha,
            "ema_momentum": self.ema_momentum,
            "l2": self.l2,
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class ExpertSet:
    """Few-shot refinement set: indices into the train set with clean labels."""

    indices: np.ndarray
    corrected_labels: np.ndarray
    source: str = "oracle"  # oracle | panel | live_ui
    votes: np.ndarray | None = None  # [n, annotators] when a panel produced it

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.corrected_labels = np.asarray(self.corrected_labels, dtype=np.int64)
        if self.indices.shape != self.corrected_labels.shape:
            raise TrainingError("indices/labels length mismatch")
        if np.unique(self.indices).size != self.indices.size:
            raise TrainingError("expert indices must be unique")

    def __len__(self) -> int:
        return self.indices.size

    def to_dict(self) -> dict:
        d = {"indices": self.indices.tolist(),
             "corrected_labels": self.corrected_labels.tolist(),
             "source": self.source}
        if self.votes is not None:
            d["votes"] = np.asarray(self.votes).tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExpertSet":
        votes = np.asarray(d["votes"]) if d.get("votes") is not None else None
        return cls(indices=np.asarray(d["indices"]),
                   corrected_labels=np.asarray(d["corrected_labels"]),
                   source=d.get("source", "oracle"), votes=votes)


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.shape[0], num_classes), dtype=np.float64)
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def smooth_targets(labels: np.ndarray, alpha: float, num_classes: int) -> np.ndarray:
    """Rows of the mixing matrix M = (1 - alpha) I + (alpha / C) J."""
    labels = np.asarray(labels, dtype=np.int64)
    if not 0.0 <= alpha <= 1.0:
        raise TrainingError("alpha must be in [0, 1]")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise TrainingError(f"labels outside [0, {num_classes})")
    return (1.0 - alpha) * one_hot(labels, num_classes) + alpha / num_classes


def ema_update(ema: ParameterVector, params: ParameterVector, m: float,
               ) -> ParameterVector:
    """ema' = m * ema + (1 - m) * params, elementwise."""
    if not ema.same_layout(params):
        raise TrainingError("EMA/parameter layout mismatch")
    return ParameterVector(ema.layout, m * ema.data + (1.0 - m) * params.data)


def _weight_mask(arch: ArchitectureSpec) -> np.ndarray:
    """Flat boolean mask of L2-regularized entries (conv/dense weights only)."""
    mask = np.zeros(arch.parameter_count(), dtype=bool)
    offset = 0
    for name, shape in arch.layout():
        size = int(np.prod(shape))
        if name.endswith(".w"):
            mask[offset:offset + size] = True
        offset += size
    return mask


def optimize(model: ModelState, X: np.ndarray, targets: np.ndarray,
             cfg: TrainConfig, loss_spec: LossSpec | None = None,
             val: WindowedDataset | None = None,
             log_path: str | None = None) -> list[dict]:
    """Adam + EMA training loop over (X, soft targets). Mutates model in place.

    Seeded shuffle each epoch, final partial batch kept. Returns the per-epoch
    history and optionally appends it to a JSON-lines metrics log.
    """
    if X.shape[0] == 0:
        raise TrainingError("empty training set")
    loss_spec = loss_spec or LossSpec("ce")
    arch = model.arch
    rng = np.random.default_rng([cfg.rng_seed, 7])
    wmask = _weight_mask(arch)
    m1 = np.zeros_like(model.params.data)
    m2 = np.zeros_like(model.params.data)
    t = 0
    history = []
    n = X.shape[0]
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        running_loss = 0.0
        running_correct = 0
        for s in range(0, n, cfg.batch_size):
            idx = perm[s:s + cfg.batch_size]
            xb, tb = X[idx], targets[idx]
            if loss_spec.kind == "mixup" and idx.size >= 2:
                xb, tb = mixup_batch(xb, tb, loss_spec.params["beta_a"], rng)
            logits, cache = _forward_internal(arch, model.params, xb,
                                              True, rng, True)
            if not np.isfinite(logits).all():
                raise TrainingDiverged(t, epoch, float("nan"))
            loss, dlogits = loss_and_grad(loss_spec, logits, tb)
            grads = backward(arch, model.params, cache, dlogits)
            g = grads.data
            if cfg.l2 > 0.0:
                w = model.params.data[wmask]
                g[wmask] += 2.0 * cfg.l2 * w
                loss += cfg.l2 * float(w @ w)
            if not np.isfinite(loss):
                raise TrainingDiverged(t, epoch, loss)

            t += 1
            m1 *= ADAM_BETA1
            m1 += (1.0 - ADAM_BETA1) * g
            m2 *= ADAM_BETA2
            m2 += (1.0 - ADAM_BETA2) * g * g
            mhat = m1 / (1.0 - ADAM_BETA1 ** t)
            vhat = m2 / (1.0 - ADAM_BETA2 ** t)
            model.params.data -= cfg.learning_rate * mhat / (np.sqrt(vhat) + ADAM_EPS)
            model.ema_params = ema_update(model.ema_params, model.params,
                                          cfg.ema_momentum)
            running_loss += loss * idx.size
            running_correct += int((logits.argmax(1) == tb.argmax(1)).sum())

        entry = {"epoch": epoch,
                 "loss": running_loss / n,
                 "train_accuracy": running_correct / n}
        if val is not None:
            entry["val_accuracy"] = accuracy(model, val, use_ema=True)
        history.append(entry)
        if log_path:
            with open(log_path, "a") as fh:
                fh.write(json.dumps(entry) + "\n")
    return history


def accuracy(state: ModelState, ds: WindowedDataset, use_ema: bool = True) -> float:
    if len(ds) == 0:
        raise TrainingError("empty evaluation set")
    probs = predict_proba(state, ds.X, use_ema=use_ema)
    return float(np.mean(probs.argmax(1) == ds.y))


def train_seed(train: WindowedDataset, cfg: TrainConfig, arch: ArchitectureSpec,
               val: WindowedDataset | None = None,
               log_path: str | None = None) -> tuple[ModelState, list[dict]]:
    """Stage 1: cross-entropy against smoothed (weak) labels, EMA every step."""
    model = build_model(arch, cfg.rng_seed)
    targets = smooth_targets(train.y, cfg.smoothing_alpha, train.num_classes)
    history = optimize(model, train.X, targets, cfg, LossSpec("ce"), val, log_path)
    model.role = "seed"
    return model, history


def train_baseline(train: WindowedDataset, cfg: TrainConfig,
                   arch: ArchitectureSpec, loss_spec: LossSpec,
                   val: WindowedDataset | None = None,
                   log_path: str | None = None) -> tuple[ModelState, list[dict]]:
    """Comparison run: one of the roster losses on the hard (noisy) labels."""
    model = build_model(arch, cfg.rng_seed)
    targets = one_hot(train.y, train.num_classes)
    history = optimize(model, train.X, targets, cfg, loss_spec, val, log_path)
    model.role = "baseline"
    return model, history


def fine_tune(seed: ModelState, expert: ExpertSet, train: WindowedDataset,
              eta: float = 0.0005, cfg: TrainConfig | None = None,
              start_from_ema: bool = True,
              log_path: str | None = None) -> tuple[ModelState, list[dict]]:
    """Stage 2: continue from the seed on expert-labeled instances only.

    start_from_ema picks which seed parameter set fine-tuning resumes from;
    the EMA shadow restarts at the chosen starting point either way.
    """
    if len(expert) == 0:
        raise TrainingError("expert set is empty")
    if expert.indices.max() >= len(train):
        raise TrainingError("expert index out of range")
    cfg = cfg or TrainConfig()
    state = seed.clone(role="fine_tuned")
    if start_from_ema:
        state.params.data[:] = seed.ema_params.data
    state.ema_params.data[:] = state.params.data

    X = train.X[expert.indices]
    targets = one_hot(expert.corrected_labels, train.num_classes)
    ft_cfg = replace(cfg, learning_rate=eta)
    history = optimize(state, X, targets, ft_cfg, LossSpec("ce"),
                       log_path=log_path)
    return state, history
