"""Model combination: weighted parameter averaging (the final pipeline stage),
Fisher-weighted averaging, and prediction ensembling.

All merges operate on the constituents' EMA parameter sets and require
identical architectures (hence identical layouts). The conventional merge is
theta = sum_i w_i theta_i with simplex weights; for two models the seed weight
w_B defaults to 0.15 under heavy noise and 0.9 under light noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import WindowedDataset
from .losses import LossSpec, loss_and_grad
from .network import (ModelState, ParameterVector, _forward_internal, backward,
                      predict_proba, softmax, forward)

FISHER_EPS = 1e-12

W_SEED_HIGH_NOISE = 0.15
W_SEED_LOW_NOISE = 0.9
HIGH_NOISE_THRESHOLD = 0.4


class MergeError(ValueError):
    pass


@dataclass(frozen=True)
class MergeSpec:
    weights: tuple[float, ...] = (0.15, 0.85)
    method: str = "weighted_average"  # weighted_average | fisher | ensemble

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.size < 1:
            raise MergeError("weights must be a vector")
        if np.any(w < -1e-12) or abs(w.sum() - 1.0) > 1e-9:
            raise MergeError(f"weights must lie on the simplex, got {w.tolist()}")
        if self.method not in ("weighted_average", "fisher", "ensemble"):
            raise MergeError(f"unknown merge method {self.method!r}")
        object.__setattr__(self, "weights", tuple(float(x) for x in w))

    def to_dict(self) -> dict:
        return {"weights": list(self.weights), "method": self.method}

    @classmethod
    def from_dict(cls, d: dict) -> "MergeSpec":
        return cls(weights=tuple(d.get("weights", (0.15, 0.85))),
                   method=d.get("method", "weighted_average"))


def default_seed_weight(noise_level: float) -> float:
    """Paper rule of thumb: stay close to the fine-tuned model under heavy noise."""
    return W_SEED_HIGH_NOISE if noise_level >= HIGH_NOISE_THRESHOLD \
        else W_SEED_LOW_NOISE


@dataclass
class FisherVector:
    """Per-parameter diagonal Fisher estimates, layout-aligned."""

    values: ParameterVector
    estimation_sample_count: int

    def __post_init__(self):
        if np.any(self.values.data < 0):
            raise MergeError("Fisher entries must be nonnegative")


def _check_states(states: list[ModelState]) -> None:
    if len(states) < 2:
        raise MergeError("need at least 2 models to merge")
    first = states[0]
    for s in states[1:]:
        if not s.params.same_layout(first.params):
            raise MergeError("constituent layouts differ")
        if s.arch != first.arch:
            raise MergeError("constituent architectures differ")


def merge_weighted(states: list[ModelState], spec: MergeSpec) -> ModelState:
    """Elementwise convex combination of the constituents' EMA parameters."""
    _check_states(states)
    if len(spec.weights) != len(states):
        raise MergeError("one weight per model required")
    merged = np.zeros_like(states[0].ema_params.data)
    for w, s in zip(spec.weights, states):
        merged += w * s.ema_params.data
    layout = states[0].params.layout
    pv = ParameterVector(layout, merged)
    return ModelState(arch=states[0].arch, params=pv.copy(), ema_params=pv,
                      role="merged")


def estimate_fisher(state: ModelState, data: WindowedDataset, n_samples: int,
                    seed: int, use_ema: bool = True) -> FisherVector:
    """Diagonal Fisher: mean squared gradient of log p(y|x) with y drawn from
    the model's own predictive distribution, one example at a time."""
    if n_samples < 1 or n_samples > len(data):
        raise MergeError(f"n_samples must be in [1, {len(data)}]")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(data), size=n_samples, replace=False)
    arch = state.arch
    pv = state.active(use_ema)
    fisher = np.zeros_like(pv.data)
    ce = LossSpec("ce")
    for i in idx:
        x = data.X[i:i + 1]
        logits, cache = _forward_internal(arch, pv, x, False, None, True)
        probs = softmax(logits)[0]
        y = int(rng.choice(arch.num_classes, p=probs))
        target = np.zeros((1, arch.num_classes))
        target[0, y] = 1.0
        # CE grad on one example is -d log p(y|x); squared, sign cancels
        _, dlogits = loss_and_grad(ce, logits, target)
        grads = backward(arch, pv, cache, dlogits)
        fisher += grads.data ** 2
    fisher /= n_samples
    return FisherVector(values=ParameterVector(pv.layout, fisher),
                        estimation_sample_count=n_samples)


def merge_fisher(states: list[ModelState], fishers: list[FisherVector],
                 spec: MergeSpec) -> ModelState:
    """theta* = sum_i w_i F_i theta_i / (sum_i w_i F_i + eps), elementwise."""
    _check_states(states)
    if len(fishers) != len(states) or len(spec.weights) != len(states):
        raise MergeError("need one fisher and one weight per model")
    num = np.zeros_like(states[0].ema_params.data)
    den = np.zeros_like(num)
    for w, s, f in zip(spec.weights, states, fishers):
        if not f.values.same_layout(s.params):
            raise MergeError("fisher layout mismatch")
        num += w * f.values.data * s.ema_params.data
        den += w * f.values.data
    merged = num / (den + FISHER_EPS)
    layout = states[0].params.layout
    pv = ParameterVector(layout, merged)
    return ModelState(arch=states[0].arch, params=pv.copy(), ema_params=pv,
                      role="merged")


def ensemble_predict(states: list[ModelState], X: np.ndarray,
                     use_ema: bool = True, average: str = "probs") -> np.ndarray:
    """Mean of per-model predictions; 'probs' averages softmax outputs,
    'logits' averages raw logits before one final softmax."""
    _check_states(states)
    if average == "probs":
        acc = np.zeros((X.shape[0], states[0].arch.num_classes))
        for s in states:
            acc += predict_proba(s, X, use_ema=use_ema)
        return acc / len(states)
    if average == "logits":
        logit_acc = np.zeros((X.shape[0], states[0].arch.num_classes))
        for s in states:
            logit_acc += forward(s, np.asarray(X, dtype=np.float64),
                                 use_ema=use_ema)
        return softmax(logit_acc / len(states))
    raise MergeError(f"unknown ensemble average {average!r}")
