"""Few-shot label acquisition: stratified sampling plus uncertainty scoring.

Stratified is the default: the pool is grouped by the seed model's *predicted*
class and per-class quotas are drawn at random, so no class is over-selected
even when the observed labels are noisy. The uncertainty strategies rank by a
per-row score (higher = more uncertain) and take the top of the budget, ties
broken by lowest index for reproducibility.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

STRATEGIES = ("stratified", "entropy", "smallest_margin", "largest_margin",
              "least_confidence")


class AcquisitionError(ValueError):
    pass


@dataclass(frozen=True)
class AcquisitionSpec:
    strategy: str = "stratified"
    budget: int = 100
    rng_seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise AcquisitionError(f"unknown strategy {self.strategy!r}")
        if self.budget < 1:
            raise AcquisitionError("budget must be >= 1")

    def to_dict(self) -> dict:
        return {"strategy": self.strategy, "budget": self.budget,
                "rng_seed": self.rng_seed}

    @classmethod
    def from_dict(cls, d: dict) -> "AcquisitionSpec":
        return cls(strategy=d.get("strategy", "stratified"),
                   budget=int(d.get("budget", 100)),
                   rng_seed=int(d.get("rng_seed", 0)))


def _check_probs(probs: np.ndarray) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise AcquisitionError("probs must be [N, C]")
    if np.any(probs < -1e-9) or np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-6):
        raise AcquisitionError("rows must be probability vectors")
    return probs


def score_uncertainty(probs: np.ndarray, strategy: str) -> np.ndarray:
    """Per-row uncertainty, higher = more uncertain. Not defined for stratified."""
    if strategy == "stratified":
        raise AcquisitionError("stratified has no per-row score")
    if strategy not in STRATEGIES:
        raise AcquisitionError(f"unknown strategy {strategy!r}")
    p = _check_probs(probs)
    if strategy == "entropy":
        logp = np.where(p > 0, np.log(np.maximum(p, 1e-300)), 0.0)
        return -(p * logp).sum(axis=1)
    if strategy == "least_confidence":
        return 1.0 - p.max(axis=1)
    sorted_p = np.sort(p, axis=1)[:, ::-1]
    if strategy == "smallest_margin":
        return -(sorted_p[:, 0] - sorted_p[:, 1])
    # largest_margin: max minus min, most-uncertain-first
    return -(sorted_p[:, 0] - sorted_p[:, -1])


def select_batch(pool_probs: np.ndarray, spec: AcquisitionSpec,
                 exclude: set | np.ndarray | None = None) -> np.ndarray:
    """Pick `budget` pool indices, never touching `exclude`. Sorted output."""
    probs = _check_probs(pool_probs)
    n = probs.shape[0]
    excluded = np.zeros(n, dtype=bool)
    if exclude is not None:
        ex = np.asarray(sorted(exclude) if isinstance(exclude, set) else exclude,
                        dtype=np.int64)
        if ex.size:
            excluded[ex] = True
    available = np.where(~excluded)[0]
    if spec.budget > available.size:
        raise AcquisitionError(
            f"budget {spec.budget} exceeds available pool {available.size}")

    if spec.strategy == "stratified":
        chosen = _stratified(probs, available, spec)
    else:
        scores = score_uncertainty(probs[available], spec.strategy)
        # stable sort on -score keeps lowest-index-first among ties
        order = np.argsort(-scores, kind="stable")
        chosen = available[order[:spec.budget]]
    return np.sort(chosen)


def _stratified(probs: np.ndarray, available: np.ndarray,
                spec: AcquisitionSpec) -> np.ndarray:
    rng = np.random.default_rng(spec.rng_seed)
    c = probs.shape[1]
    predicted = probs.argmax(axis=1)
    quotas = np.full(c, spec.budget // c, dtype=np.int64)
    remainder = spec.budget - quotas.sum()
    if remainder:
        quotas[rng.choice(c, size=remainder, replace=False)] += 1

    taken: list[int] = []
    leftover = 0
    for cls in range(c):
        group = available[predicted[available] == cls]
        want = int(quotas[cls])
        if group.size <= want:
            taken.extend(group.tolist())
            leftover += want - group.size
        else:
            taken.extend(rng.choice(group, size=want, replace=False).tolist())
    if leftover:
        rest = np.setdiff1d(available, np.asarray(taken, dtype=np.int64))
        taken.extend(rng.choice(rest, size=leftover, replace=False).tolist())
    return np.asarray(taken, dtype=np.int64)


def selection_to_json(indices: np.ndarray, spec: AcquisitionSpec) -> str:
    return json.dumps({"indices": [int(i) for i in indices],
                       "strategy": spec.strategy, "seed": spec.rng_seed})
