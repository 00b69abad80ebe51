"""Confident-learning baseline: out-of-fold probabilities, confident joint,
pruning of suspected label errors, and retraining on the remainder.

The confident joint counts example (observed i, suspected j) pairs: an example
labeled i lands in column j when its predicted p_j clears the class threshold
t_j (the mean predicted probability of j over examples labeled j) and j has
the largest probability among classes passing their thresholds. Off-diagonal
cells mark suspected errors; per cell, the examples with the largest margin
p_j - p_i are pruned, capped at half of any observed class.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import WindowedDataset
from .losses import LossSpec
from .network import ArchitectureSpec, ModelState, predict_proba
from .training import TrainConfig, train_baseline

PRUNE_CAP_FRACTION = 0.5


class ConfidentLearningError(RuntimeError):
    pass


@dataclass
class ConfidentJoint:
    counts: np.ndarray       # [C, C], rows = observed label, cols = suspected
    thresholds: np.ndarray   # [C], NaN for classes with no support
    assigned: np.ndarray     # [N] suspected class per example, -1 if none

    def off_diagonal_mass(self) -> float:
        total = self.counts.sum()
        if total == 0:
            return 0.0
        return float((total - np.trace(self.counts)) / total)

    def to_dict(self) -> dict:
        return {"counts": self.counts.tolist(),
                "thresholds": [None if np.isnan(t) else float(t)
                               for t in self.thresholds]}


def stratified_folds(labels: np.ndarray, k: int, seed: int,
                     max_retries: int = 20) -> np.ndarray:
    """Fold assignment [N] with every class present in every training fold."""
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.size
    if k < 2 or k > n:
        raise ConfidentLearningError(f"fold count {k} invalid for {n} examples")
    for attempt in range(max_retries):
        rng = np.random.default_rng([seed, attempt])
        folds = np.empty(n, dtype=np.int64)
        for cls in np.unique(labels):
            idx = np.where(labels == cls)[0]
            rng.shuffle(idx)
            folds[idx] = np.arange(idx.size) % k
        ok = all(np.unique(labels[folds != f]).size == np.unique(labels).size
                 for f in range(k))
        if ok:
            return folds
    raise ConfidentLearningError("could not stratify folds with all classes")


def oof_probabilities(ds: WindowedDataset, cfg: TrainConfig,
                      arch: ArchitectureSpec, folds: int = 5,
                      loss: LossSpec | None = None) -> np.ndarray:
    """Every example scored by a model that never saw it in training."""
    assignment = stratified_folds(ds.y, folds, cfg.rng_seed)
    probs = np.empty((len(ds), ds.num_classes))
    for f in range(folds):
        train_idx = np.where(assignment != f)[0]
        hold_idx = np.where(assignment == f)[0]
        sub = ds.subset(train_idx)
        fold_cfg = TrainConfig(**{**cfg.to_dict(), "rng_seed": cfg.rng_seed + f})
        model, _ = train_baseline(sub, fold_cfg, arch, loss or LossSpec("ce"))
        # fold models are plain baselines; raw parameters are their output
        probs[hold_idx] = predict_proba(model, ds.X[hold_idx], use_ema=False)
    return probs


def estimate_joint(probs: np.ndarray, noisy_labels: np.ndarray,
                   thresholds: np.ndarray | None = None) -> ConfidentJoint:
    """Confident joint; thresholds default to per-class mean self-confidence
    but can be overridden for what-if audits."""
    probs = np.asarray(probs, dtype=np.float64)
    noisy_labels = np.asarray(noisy_labels, dtype=np.int64)
    n, c = probs.shape
    if noisy_labels.shape != (n,):
        raise ConfidentLearningError("probs/labels shape mismatch")

    if thresholds is None:
        thresholds = np.full(c, np.nan)
        for j in range(c):
            mask = noisy_labels == j
            if mask.any():
                thresholds[j] = probs[mask, j].mean()
    else:
        thresholds = np.asarray(thresholds, dtype=np.float64)

    passing = np.zeros((n, c), dtype=bool)
    for j in range(c):
        if not np.isnan(thresholds[j]):
            passing[:, j] = probs[:, j] >= thresholds[j]

    assigned = np.full(n, -1, dtype=np.int64)
    any_pass = passing.any(axis=1)
    masked = np.where(passing, probs, -np.inf)
    assigned[any_pass] = masked[any_pass].argmax(axis=1)

    counts = np.zeros((c, c), dtype=np.int64)
    for i, j in zip(noisy_labels[any_pass], assigned[any_pass]):
        counts[i, j] += 1
    return ConfidentJoint(counts=counts, thresholds=thresholds, assigned=assigned)


def prune_indices(joint: ConfidentJoint, probs: np.ndarray,
                  noisy_labels: np.ndarray) -> np.ndarray:
    """Indices suspected mislabeled: per off-diagonal cell (i, j), the
    count(i, j) examples labeled i with the largest margin p_j - p_i."""
    probs = np.asarray(probs, dtype=np.float64)
    noisy_labels = np.asarray(noisy_labels, dtype=np.int64)
    c = joint.counts.shape[0]
    class_sizes = np.bincount(noisy_labels, minlength=c)
    caps = np.floor(class_sizes * PRUNE_CAP_FRACTION).astype(np.int64)

    per_class: dict[int, list[tuple[float, int]]] = {i: [] for i in range(c)}
    for i in range(c):
        rows = np.where(noisy_labels == i)[0]
        if rows.size == 0:
            continue
        for j in range(c):
            if i == j or joint.counts[i, j] == 0:
                continue
            margins = probs[rows, j] - probs[rows, i]
            take = min(int(joint.counts[i, j]), rows.size)
            order = np.argsort(-margins, kind="stable")[:take]
            for r, m in zip(rows[order], margins[order]):
                per_class[i].append((float(m), int(r)))

    pruned: list[int] = []
    for i in range(c):
        # dedupe (an example can land in several cells), keep largest margins,
        # respect the 50% per-class cap
        best: dict[int, float] = {}
        for m, r in per_class[i]:
            if r not in best or m > best[r]:
                best[r] = m
        ranked = sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))
        pruned.extend(r for r, _ in ranked[:caps[i]])
    return np.asarray(sorted(pruned), dtype=np.int64)


def prune_and_retrain(ds: WindowedDataset, joint: ConfidentJoint,
                      probs: np.ndarray, cfg: TrainConfig,
                      arch: ArchitectureSpec,
                      ) -> tuple[WindowedDataset, ModelState, np.ndarray]:
    """Drop suspected errors and retrain with plain cross-entropy."""
    bad = prune_indices(joint, probs, ds.y)
    keep = np.setdiff1d(np.arange(len(ds)), bad)
    if keep.size == 0:
        raise ConfidentLearningError("pruning removed every example")
    cleaned = ds.subset(keep)
    model, _ = train_baseline(cleaned, cfg, arch, LossSpec("ce"))
    return cleaned, model, bad


def correct_labels(joint: ConfidentJoint, probs: np.ndarray,
                   noisy_labels: np.ndarray, budget: int) -> np.ndarray:
    """Label-correction variant for shot-matched comparisons: relabel the
    `budget` most suspect examples to their predicted class."""
    noisy_labels = np.asarray(noisy_labels, dtype=np.int64)
    suspects = prune_indices(joint, probs, noisy_labels)
    if suspects.size > budget:
        margins = probs[suspects].max(axis=1) - probs[suspects, noisy_labels[suspects]]
        order = np.argsort(-margins, kind="stable")
        suspects = suspects[order[:budget]]
    corrected = noisy_labels.copy()
    corrected[suspects] = probs[suspects].argmax(axis=1)
    return corrected


def audit_json(joint: ConfidentJoint, pruned: np.ndarray) -> str:
    doc = joint.to_dict()
    doc["pruned_indices"] = [int(i) for i in pruned]
    return json.dumps(doc)
