"""Clean-label sources for refinement: ground-truth oracle and a virtual
annotator panel with controlled disagreement, measured by Fleiss' kappa.

Each virtual annotator reports the true label with probability 1 - d and a
uniformly random *other* class otherwise; votes are aggregated by majority
with ties broken toward the smallest class index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class OracleError(ValueError):
    pass


@dataclass(frozen=True)
class AnnotatorPanel:
    num_annotators: int = 10
    disagreement_rate: float = 0.1
    num_classes: int = 2
    rng_seed: int = 0

    def __post_init__(self):
        if self.num_annotators < 1:
            raise OracleError("need at least one annotator")
        if not 0.0 <= self.disagreement_rate <= 1.0:
            raise OracleError("disagreement_rate must be in [0, 1]")
        if self.num_classes < 2:
            raise OracleError("num_classes must be >= 2")


def oracle_labels(indices: np.ndarray, clean_labels: np.ndarray) -> np.ndarray:
    """Ground-truth lookup, in index order (duplicates allowed)."""
    indices = np.asarray(indices, dtype=np.int64)
    clean_labels = np.asarray(clean_labels, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= clean_labels.size):
        raise OracleError("index out of range")
    return clean_labels[indices]


def panel_annotate(indices: np.ndarray, clean_labels: np.ndarray,
                   panel: AnnotatorPanel) -> tuple[np.ndarray, np.ndarray]:
    """Simulate the panel; returns (votes [n, A], majority-aggregated labels)."""
    truth = oracle_labels(indices, clean_labels)
    n, a, c = truth.size, panel.num_annotators, panel.num_classes
    if truth.size and truth.max() >= c:
        raise OracleError("clean label outside panel's class range")
    rng = np.random.default_rng(panel.rng_seed)
    votes = np.tile(truth[:, None], (1, a))
    wrong = rng.random((n, a)) < panel.disagreement_rate
    # uniform over the other C-1 classes: offset in [1, C) added mod C
    offsets = rng.integers(1, c, size=(n, a))
    votes = np.where(wrong, (votes + offsets) % c, votes)
    return votes.astype(np.int64), majority_vote(votes, c)


def majority_vote(votes: np.ndarray, num_classes: int) -> np.ndarray:
    """Per-item majority; ties go to the smallest class index."""
    votes = np.asarray(votes, dtype=np.int64)
    counts = np.stack([(votes == k).sum(axis=1) for k in range(num_classes)], axis=1)
    return counts.argmax(axis=1).astype(np.int64)


def vote_counts(votes: np.ndarray, num_classes: int) -> np.ndarray:
    votes = np.asarray(votes, dtype=np.int64)
    if votes.ndim != 2:
        raise OracleError("votes must be [n_items, annotators]")
    if votes.size and (votes.min() < 0 or votes.max() >= num_classes):
        raise OracleError("vote outside class range")
    return np.stack([(votes == k).sum(axis=1) for k in range(num_classes)], axis=1)


def fleiss_kappa(votes: np.ndarray, num_classes: int) -> float:
    """Fleiss' kappa over a [n_items, annotators] vote matrix.

    kappa = (P_bar - Pe_bar) / (1 - Pe_bar), with per-item agreement
    P_i = (sum_c n_ic^2 - A) / (A (A - 1)) and Pe_bar = sum_c p_c^2.
    """
    votes = np.asarray(votes, dtype=np.int64)
    if votes.ndim != 2 or votes.shape[0] < 1:
        raise OracleError("votes must be a nonempty [n_items, annotators] matrix")
    n, a = votes.shape
    if a < 2:
        raise OracleError("kappa needs at least 2 annotators")
    counts = vote_counts(votes, num_classes)
    p_i = (np.sum(counts.astype(np.float64) ** 2, axis=1) - a) / (a * (a - 1))
    p_bar = float(p_i.mean())
    p_c = counts.sum(axis=0) / (n * a)
    pe_bar = float(np.sum(p_c ** 2))
    if abs(1.0 - pe_bar) < 1e-12:
        if abs(1.0 - p_bar) < 1e-12:
            return 1.0
        raise OracleError("degenerate chance agreement (all votes one class)")
    return (p_bar - pe_bar) / (1.0 - pe_bar)
