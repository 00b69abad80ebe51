"""Class-conditional label noise: matrix construction, corruption, measurement.

A noise matrix Q is C x C and column-stochastic: column j is the distribution
of observed labels for instances whose true class is j. Two scalar knobs
describe a matrix built here:

  level     -- 1 - mean(diag(Q)), the expected fraction of flipped labels
  sparsity  -- construction parameter controlling how many off-diagonal
               targets each column spreads its noise mass over; sparsity 1
               collapses to pairwise class-flipping

Note the two views of sparsity: as a construction parameter, sparsity 1 means
"one target per column"; as a measurement (``measured_sparsity``), the zero
fraction of a pair-flip matrix is (C-2)/(C-1), not 1. Both views are exposed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

DIAG_TOL = 1e-9
ZERO_TOL = 1e-12


class NoiseError(ValueError):
    """Invalid noise spec, matrix, or label set."""


@dataclass(frozen=True)
class NoiseSpec:
    """Parameters of a class-conditional noise matrix."""

    num_classes: int
    level: float
    sparsity: float = 0.2
    mode: str = "symmetric"  # "symmetric" | "asymmetric"
    rng_seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise NoiseError(f"num_classes must be >= 2, got {self.num_classes}")
        if not 0.0 <= self.level <= 1.0:
            raise NoiseError(f"level must be in [0, 1], got {self.level}")
        if not 0.0 <= self.sparsity <= 1.0:
            raise NoiseError(f"sparsity must be in [0, 1], got {self.sparsity}")
        if self.mode not in ("symmetric", "asymmetric"):
            raise NoiseError(f"unknown mode {self.mode!r}")

    def to_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "level": self.level,
            "sparsity": self.sparsity,
            "mode": self.mode,
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSpec":
        return cls(
            num_classes=int(d["num_classes"]),
            level=float(d["level"]),
            sparsity=float(d.get("sparsity", 0.2)),
            mode=d.get("mode", "symmetric"),
            rng_seed=int(d.get("rng_seed", 0)),
        )


@dataclass(frozen=True)
class NoiseMatrix:
    """Column-stochastic label transition matrix."""

    entries: np.ndarray
    spec: NoiseSpec | None = None

    def __post_init__(self):
        q = np.asarray(self.entries, dtype=np.float64)
        if q.ndim != 2 or q.shape[0] != q.shape[1] or q.shape[0] < 2:
            raise NoiseError(f"entries must be square CxC with C >= 2, got {q.shape}")
        object.__setattr__(self, "entries", q)
        validate_column_stochastic(q)

    @property
    def num_classes(self) -> int:
        return self.entries.shape[0]

    def to_json(self) -> str:
        doc = {
            "num_classes": self.num_classes,
            "entries": [float(v) for v in self.entries.ravel(order="C")],
        }
        if self.spec is not None:
            doc["spec"] = self.spec.to_dict()
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "NoiseMatrix":
        doc = json.loads(text)
        c = int(doc["num_classes"])
        entries = np.asarray(doc["entries"], dtype=np.float64).reshape(c, c)
        spec = NoiseSpec.from_dict(doc["spec"]) if "spec" in doc else None
        return cls(entries=entries, spec=spec)


@dataclass(frozen=True)
class CorruptionRecord:
    """Outcome of one label corruption pass."""

    original_labels: np.ndarray
    noisy_labels: np.ndarray
    flipped_mask: np.ndarray = field(init=False)
    rng_seed: int = 0

    def __post_init__(self):
        orig = np.asarray(self.original_labels, dtype=np.int64)
        noisy = np.asarray(self.noisy_labels, dtype=np.int64)
        if orig.shape != noisy.shape:
            raise NoiseError("original and noisy label shapes differ")
        object.__setattr__(self, "original_labels", orig)
        object.__setattr__(self, "noisy_labels", noisy)
        object.__setattr__(self, "flipped_mask", noisy != orig)

    def to_dict(self) -> dict:
        return {
            "original_labels": self.original_labels.tolist(),
            "noisy_labels": self.noisy_labels.tolist(),
            "flipped_mask": self.flipped_mask.tolist(),
            "rng_seed": self.rng_seed,
        }


def validate_column_stochastic(q: np.ndarray, tol: float = DIAG_TOL) -> None:
    if np.any(q < -ZERO_TOL):
        raise NoiseError("noise matrix has negative entries")
    sums = q.sum(axis=0)
    if np.any(np.abs(sums - 1.0) > tol):
        raise NoiseError(f"columns must sum to 1 within {tol}, got sums {sums}")


def build_noise_matrix(spec: NoiseSpec) -> NoiseMatrix:
    """Construct Q from a NoiseSpec.

    Symmetric mode spreads each column's off-diagonal mass n_l uniformly over
    k = max(1, round((1 - n_s) * (C - 1))) targets chosen at random. Asymmetric
    mode puts all mass on a single partner class per column, with partners
    forming a seeded derangement of 2-cycles (one 3-cycle when C is odd).
    """
    c = spec.num_classes
    q = np.zeros((c, c), dtype=np.float64)
    np.fill_diagonal(q, 1.0 - spec.level)
    if spec.level == 0.0:
        np.fill_diagonal(q, 1.0)
        return NoiseMatrix(entries=q, spec=spec)

    rng = np.random.default_rng(spec.rng_seed)
    if spec.mode == "asymmetric":
        partner = _random_pairing(c, rng)
        for j in range(c):
            q[partner[j], j] = spec.level
    else:
        k = max(1, round((1.0 - spec.sparsity) * (c - 1)))
        for j in range(c):
            targets = np.delete(np.arange(c), j)
            chosen = rng.choice(targets, size=k, replace=False)
            q[chosen, j] = spec.level / k
    return NoiseMatrix(entries=q, spec=spec)


def _random_pairing(c: int, rng: np.random.Generator) -> np.ndarray:
    """Fixed-point-free pairing: 2-cycles, plus one 3-cycle when C is odd."""
    order = rng.permutation(c)
    partner = np.empty(c, dtype=np.int64)
    start = 0
    if c % 2 == 1:
        a, b, d = order[0], order[1], order[2]
        partner[a], partner[b], partner[d] = b, d, a
        start = 3
    for i in range(start, c, 2):
        a, b = order[i], order[i + 1]
        partner[a], partner[b] = b, a
    return partner


def measured_level(q: NoiseMatrix | np.ndarray) -> float:
    """1 - mean(diag(Q)): the expected flip probability under uniform priors."""
    entries = q.entries if isinstance(q, NoiseMatrix) else np.asarray(q, dtype=np.float64)
    validate_column_stochastic(entries)
    return float(1.0 - np.mean(np.diag(entries)))


def measured_sparsity(q: NoiseMatrix | np.ndarray) -> float:
    """Fraction of off-diagonal entries that are (numerically) zero."""
    entries = q.entries if isinstance(q, NoiseMatrix) else np.asarray(q, dtype=np.float64)
    validate_column_stochastic(entries)
    c = entries.shape[0]
    off = ~np.eye(c, dtype=bool)
    zeros = np.count_nonzero(np.abs(entries[off]) <= ZERO_TOL)
    return float(zeros) / (c * (c - 1))


def corrupt_labels(labels: np.ndarray, q: NoiseMatrix, seed: int) -> CorruptionRecord:
    """Resample each label from its Q column, independently, seeded."""
    labels = np.asarray(labels, dtype=np.int64)
    c = q.num_classes
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise NoiseError(f"labels must lie in [0, {c}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    rng = np.random.default_rng(seed)
    u = rng.random(labels.shape[0])
    # cumulative column distributions gathered per label, one searchsorted per row
    cum = np.cumsum(q.entries[:, labels].T, axis=1)
    noisy = (u[:, None] > cum).sum(axis=1)
    noisy = np.minimum(noisy, c - 1).astype(np.int64)
    return CorruptionRecord(original_labels=labels, noisy_labels=noisy, rng_seed=seed)


def empirical_level(record: CorruptionRecord) -> float:
    """Observed flip fraction of a corruption record."""
    if record.original_labels.size == 0:
        return 0.0
    return float(np.mean(record.flipped_mask))
