"""Training losses for the baseline roster, with analytic logit gradients.

Every kind accepts soft target rows (one-hot is a special case) and returns
the batch-mean loss. ``loss_and_grad`` additionally returns d(loss)/d(logits),
verified against central finite differences in the test suite.

Kinds and default hyperparameters:
  ce          plain cross-entropy
  ls          cross-entropy after smoothing the given targets (alpha=0.1)
  mixup       cross-entropy; pairing happens in mixup_batch, not here
  poly        poly-1: CE + eps * (1 - p_target), eps=1
  bi_tempered two-temperature logistic loss, t1=0.7 < 1 < t2=1.3
  logit_clip  CE on logits renormed to max L2 norm tau=1
  focal       (1 - p_c)^gamma weighting, gamma=2
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LOSS_KINDS = ("ce", "ls", "mixup", "poly", "bi_tempered", "logit_clip", "focal")

_DEFAULTS = {
    "ce": {},
    "ls": {"alpha": 0.1},
    "mixup": {"beta_a": 0.2},
    "poly": {"epsilon": 1.0},
    "bi_tempered": {"t1": 0.7, "t2": 1.3, "iters": 30},
    "logit_clip": {"tau": 1.0},
    "focal": {"gamma": 2.0},
}


class LossError(ValueError):
    pass


@dataclass(frozen=True)
class LossSpec:
    kind: str = "ce"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise LossError(f"unknown loss kind {self.kind!r}")
        merged = dict(_DEFAULTS[self.kind])
        merged.update(self.params)
        object.__setattr__(self, "params", merged)
        if self.kind == "bi_tempered":
            t1, t2 = merged["t1"], merged["t2"]
            if not (t1 <= 1.0 <= t2):
                raise LossError(f"bi-tempered needs t1 <= 1 <= t2, got {t1}, {t2}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "LossSpec":
        return cls(kind=d.get("kind", "ce"), params=dict(d.get("params", {})))


def compute_loss(spec: LossSpec, logits: np.ndarray, targets: np.ndarray) -> float:
    """Batch-mean loss; raises on non-finite logits."""
    value, _ = loss_and_grad(spec, logits, targets)
    return value


def loss_and_grad(spec: LossSpec, logits: np.ndarray, targets: np.ndarray,
                  ) -> tuple[float, np.ndarray]:
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if logits.shape != targets.shape:
        raise LossError(f"shape mismatch {logits.shape} vs {targets.shape}")
    if not np.isfinite(logits).all():
        raise LossError("logits contain NaN or Inf")

    kind = spec.kind
    if kind in ("ce", "mixup"):
        return _ce(logits, targets)
    if kind == "ls":
        c = targets.shape[1]
        a = spec.params["alpha"]
        return _ce(logits, (1.0 - a) * targets + a / c)
    if kind == "poly":
        return _poly(logits, targets, spec.params["epsilon"])
    if kind == "focal":
        return _focal(logits, targets, spec.params["gamma"])
    if kind == "logit_clip":
        return _logit_clip(logits, targets, spec.params["tau"])
    if kind == "bi_tempered":
        return _bi_tempered(logits, targets, spec.params["t1"], spec.params["t2"],
                            spec.params["iters"])
    raise LossError(kind)


def _softmax(z):
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _log_softmax(z):
    zs = z - z.max(axis=1, keepdims=True)
    return zs - np.log(np.exp(zs).sum(axis=1, keepdims=True))


def _ce(logits, targets):
    n = logits.shape[0]
    logp = _log_softmax(logits)
    loss = -(targets * logp).sum() / n
    grad = (_softmax(logits) - targets) / n
    return float(loss), grad


def _poly(logits, targets, eps):
    n = logits.shape[0]
    p = _softmax(logits)
    logp = _log_softmax(logits)
    pt = (targets * p).sum(axis=1)
    loss = (-(targets * logp).sum(axis=1) + eps * (1.0 - pt)).mean()
    # d pt / dz_k = p_k (t_k - pt)
    grad = (p - targets) / n - eps * p * (targets - pt[:, None]) / n
    return float(loss), grad


def _focal(logits, targets, gamma):
    n = logits.shape[0]
    p = _softmax(logits)
    logp = _log_softmax(logits)
    w = (1.0 - p) ** gamma
    loss = -(targets * w * logp).sum() / n
    # f(p) = -(1-p)^g log p; f'(p) = g (1-p)^(g-1) log p - (1-p)^g / p
    fprime = gamma * (1.0 - p) ** (gamma - 1.0) * logp - w / np.maximum(p, 1e-300)
    a = targets * fprime * p
    grad = (a - p * a.sum(axis=1, keepdims=True)) / n
    return float(loss), grad


def _logit_clip(logits, targets, tau):
    norms = np.linalg.norm(logits, axis=1, keepdims=True)
    scale = np.minimum(1.0, tau / np.maximum(norms, 1e-12))
    clipped = logits * scale
    loss, g = _ce(clipped, targets)
    # through z' = s(z) z: dz = s (g - z (z.g)/||z||^2) where the clip is active
    active = (norms > tau).ravel()
    grad = g * scale
    if active.any():
        z = logits[active]
        ga = g[active]
        nrm2 = (norms[active] ** 2)
        grad[active] = scale[active] * (ga - z * (z * ga).sum(axis=1, keepdims=True) / nrm2)
    return loss, grad


# -- bi-tempered -------------------------------------------------------------

def _log_t(x, t):
    if abs(t - 1.0) < 1e-9:
        return np.log(x)
    return (x ** (1.0 - t) - 1.0) / (1.0 - t)


def _exp_t(x, t):
    if abs(t - 1.0) < 1e-9:
        return np.exp(x)
    return np.maximum(1.0 + (1.0 - t) * x, 0.0) ** (1.0 / (1.0 - t))


def _tempered_softmax(z, t, iters):
    """Row-stochastic exp_t(z - lambda); lambda by fixed-point iteration (t >= 1)."""
    if abs(t - 1.0) < 1e-9:
        return _softmax(z)
    mu = z.max(axis=1, keepdims=True)
    a = z - mu
    za = a
    for _ in range(iters):
        partition = _exp_t(za, t).sum(axis=1, keepdims=True)
        za = partition ** (1.0 - t) * a
    partition = _exp_t(za, t).sum(axis=1, keepdims=True)
    lam = -_log_t(1.0 / partition, t) + mu
    return _exp_t(z - lam, t)


def _bi_tempered(logits, targets, t1, t2, iters):
    n = logits.shape[0]
    p = _tempered_softmax(logits, t2, iters)
    t_safe = np.maximum(targets, 1e-300)
    loss_mat = (targets * (_log_t(t_safe, t1) - _log_t(np.maximum(p, 1e-300), t1))
                - t_safe ** (2.0 - t1) / (2.0 - t1)
                + p ** (2.0 - t1) / (2.0 - t1))
    loss = loss_mat.sum() / n
    delta = (p - targets) * p ** (t2 - t1)
    escort = p ** t2
    escort = escort / escort.sum(axis=1, keepdims=True)
    grad = (delta - escort * delta.sum(axis=1, keepdims=True)) / n
    return float(loss), grad


# -- mixup -------------------------------------------------------------------

def mixup_batch(X: np.ndarray, soft_targets: np.ndarray, beta_a: float,
                seed_or_rng) -> tuple[np.ndarray, np.ndarray]:
    """Convex combination of the batch with a shuffled copy of itself.

    One lambda ~ Beta(a, a) per batch, following the original recipe.
    """
    if X.shape[0] < 2:
        raise LossError("mixup needs batch size >= 2")
    rng = (seed_or_rng if isinstance(seed_or_rng, np.random.Generator)
           else np.random.default_rng(seed_or_rng))
    lam = rng.beta(beta_a, beta_a)
    perm = rng.permutation(X.shape[0])
    x_mix = lam * X + (1.0 - lam) * X[perm]
    t_mix = lam * soft_targets + (1.0 - lam) * soft_targets[perm]
    return x_mix, t_mix
