"""End-to-end pipeline orchestration and the preset experiment grids.

One pipeline run: corrupt -> seed-train -> acquire -> label -> fine-tune ->
merge -> evaluate, repeated over trials with trial-derived seeds. Component
toggles skip stages; a configured baseline loss (or confident learning)
replaces the whole refinement pipeline on the same corrupted labels.

Fairness contract: the corruption record for a trial depends only on the
noise spec and the trial index, so every method inside a comparison cell sees
the same corrupted labels, and expert labels are always drawn from the clean
source. Deterministic stages are cached by config fingerprint, which lets
presets share seed models across rows in the same trial.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .acquisition import AcquisitionSpec, select_batch
from .confident import (audit_json, correct_labels, estimate_joint,
                        oof_probabilities, prune_and_retrain)
from .data import (SyntheticSpec, WindowedDataset, channel_means, load_canonical,
                   make_synthetic, normalize_mean)
from .losses import LOSS_KINDS, LossSpec
from .merging import (MergeSpec, default_seed_weight, ensemble_predict,
                      estimate_fisher, merge_fisher, merge_weighted)
from .network import ArchitectureSpec, ModelState, save_checkpoint
from .noise import NoiseSpec, build_noise_matrix, corrupt_labels
from .oracle import AnnotatorPanel, fleiss_kappa, oracle_labels, panel_annotate
from .training import (ExpertSet, TrainConfig, fine_tune, train_baseline,
                       train_seed)
from .network import predict_proba

PRESET_NAMES = ("noise_sweep", "asymmetric", "acquisition_ablation",
                "merge_comparison", "shot_scaling", "component_ablation",
                "annotator_panel")

ABLATION_ROWS = (  # Table-style toggle matrix: (ls, ema, ft, merge)
    {"ls": True, "ema": False, "ft": False, "merge": False},
    {"ls": True, "ema": True, "ft": False, "merge": False},
    {"ls": True, "ema": False, "ft": True, "merge": False},
    {"ls": True, "ema": True, "ft": True, "merge": False},
    {"ls": True, "ema": False, "ft": True, "merge": True},
    {"ls": True, "ema": True, "ft": True, "merge": True},
)


class ConfigError(ValueError):
    pass


class StageFailure(RuntimeError):
    """One trial's stage failed; the report records it and trials continue."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")


def _stage(name: str, fn):
    try:
        return fn()
    except StageFailure:
        raise
    except Exception as exc:  # noqa: BLE001 - tagged and re-raised
        raise StageFailure(name, exc) from exc


@dataclass
class ExperimentConfig:
    dataset: dict = field(default_factory=lambda: {"kind": "synthetic"})
    noise: NoiseSpec = field(default_factory=lambda: NoiseSpec(5, 0.0))
    seed_training: TrainConfig = field(default_factory=TrainConfig)
    arch: dict = field(default_factory=dict)      # width_multiplier etc.
    baseline: dict | None = None                  # loss dict, or {"kind": "cl"}
    acquisition: AcquisitionSpec = field(default_factory=AcquisitionSpec)
    oracle: dict = field(default_factory=lambda: {"mode": "oracle"})
    refine: dict = field(default_factory=lambda: {"eta": 0.0005, "epochs": 30,
                                                  "batch_size": 32})
    merge: MergeSpec | None = None                # None = rule-of-thumb weights
    trials: int = 3
    output_dir: str | None = None
    component_toggles: dict = field(default_factory=lambda: {
        "ls": True, "ema": True, "ft": True, "merge": True})

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        toggles = {"ls": True, "ema": True, "ft": True, "merge": True}
        toggles.update(self.component_toggles)
        self.component_toggles = toggles
        if toggles["merge"] and not toggles["ft"]:
            raise ConfigError("merge toggle requires ft")
        mode = self.oracle.get("mode", "oracle")
        if mode not in ("oracle", "panel", "live"):
            raise ConfigError(f"unknown oracle mode {mode!r}")
        if mode == "live" and "expert_set_path" not in self.oracle:
            raise ConfigError("oracle mode 'live' needs expert_set_path "
                              "(a finalized annotation-service export)")
        if self.baseline is not None:
            kind = self.baseline.get("kind")
            if kind != "cl" and kind not in LOSS_KINDS:
                raise ConfigError(f"unknown baseline kind {kind!r}")

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "noise": self.noise.to_dict(),
            "seed_training": self.seed_training.to_dict(),
            "arch": self.arch,
            "baseline": self.baseline,
            "acquisition": self.acquisition.to_dict(),
            "oracle": self.oracle,
            "refine": self.refine,
            "merge": self.merge.to_dict() if self.merge else None,
            "trials": self.trials,
            "output_dir": self.output_dir,
            "component_toggles": self.component_toggles,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        try:
            return cls(
                dataset=d.get("dataset", {"kind": "synthetic"}),
                noise=NoiseSpec.from_dict(d["noise"]) if "noise" in d
                else NoiseSpec(5, 0.0),
                seed_training=TrainConfig.from_dict(d.get("seed_training", {})),
                arch=d.get("arch", {}),
                baseline=d.get("baseline"),
                acquisition=AcquisitionSpec.from_dict(d.get("acquisition", {})),
                oracle=d.get("oracle", {"mode": "oracle"}),
                refine={"eta": 0.0005, "epochs": 30, "batch_size": 32,
                        **d.get("refine", {})},
                merge=MergeSpec.from_dict(d["merge"]) if d.get("merge") else None,
                trials=int(d.get("trials", 3)),
                output_dir=d.get("output_dir"),
                component_toggles=d.get("component_toggles", {}),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad experiment config: {exc}") from exc

    @classmethod
    def from_json(cls, path: str) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc

    def checksum(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class RunReport:
    accuracies: list[float]
    mean: float
    std: float
    config_checksum: str
    wall_clock_s: float
    phase_accuracies: list[dict] = field(default_factory=list)
    checkpoints: dict = field(default_factory=dict)
    failures: list[dict] = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "accuracies": self.accuracies,
            "mean": self.mean,
            "std": self.std,
            "config_checksum": self.config_checksum,
            "wall_clock_s": self.wall_clock_s,
            "phase_accuracies": self.phase_accuracies,
            "checkpoints": self.checkpoints,
            "failures": self.failures,
            "extras": self.extras,
        }


def evaluate(state: ModelState, test: WindowedDataset, use_ema: bool = True,
             ) -> float:
    """Argmax accuracy on the EMA (or raw) parameters."""
    if len(test) == 0:
        raise ConfigError("empty test set")
    probs = predict_proba(state, test.X, use_ema=use_ema)
    return float(np.mean(probs.argmax(1) == test.y))


class StageCache:
    """In-memory memo for deterministic stages, keyed by config fingerprint."""

    def __init__(self):
        self._store: dict[str, object] = {}
        self.hits = 0
        self.misses = 0

    @staticmethod
    def key(*parts) -> str:
        blob = json.dumps(parts, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()

    def get_or_compute(self, key: str, fn):
        if key in self._store:
            self.hits += 1
            return self._store[key]
        self.misses += 1
        value = fn()
        self._store[key] = value
        return value


# ---------------------------------------------------------------------------
# dataset and architecture assembly

def load_experiment_data(cfg: ExperimentConfig,
                         ) -> tuple[WindowedDataset, WindowedDataset, dict]:
    """Build (train, test) with train-fitted mean normalization applied."""
    ds_cfg = cfg.dataset
    kind = ds_cfg.get("kind", "synthetic")
    if kind == "synthetic":
        spec = SyntheticSpec.from_dict(ds_cfg.get("spec", {}))
        train, test = make_synthetic(spec)
        fingerprint = {"kind": "synthetic", "spec": spec.to_dict()}
    elif kind == "canonical":
        path = ds_cfg["path"]
        train = load_canonical(path, ds_cfg.get("train_split", "train"))
        test = load_canonical(path, ds_cfg.get("test_split", "test"))
        fingerprint = {"kind": "canonical", "path": os.path.abspath(path)}
    else:
        raise ConfigError(f"unknown dataset kind {kind!r}")
    means = channel_means(train.X)
    train.X = normalize_mean(train.X, means)
    test.X = normalize_mean(test.X, means)
    return train, test, fingerprint


def build_arch(cfg: ExperimentConfig, train: WindowedDataset) -> ArchitectureSpec:
    return ArchitectureSpec.from_dict({
        "input_channels": train.channels,
        "input_length": train.window_length,
        "num_classes": train.num_classes,
        **cfg.arch,
    })


# ---------------------------------------------------------------------------
# single pipeline run

def _trial_corruption(cfg: ExperimentConfig, train: WindowedDataset, trial: int):
    q = build_noise_matrix(cfg.noise)
    seed = cfg.noise.rng_seed * 1000003 + trial
    return q, corrupt_labels(train.y, q, seed)


def _acquire_expert(cfg: ExperimentConfig, seed_state: ModelState,
                    train: WindowedDataset, clean_labels: np.ndarray,
                    trial: int, use_ema: bool) -> tuple[ExpertSet, dict]:
    acq = replace(cfg.acquisition, rng_seed=cfg.acquisition.rng_seed + trial)
    probs = predict_proba(seed_state, train.X, use_ema=use_ema)
    selected = select_batch(probs, acq)
    mode = cfg.oracle.get("mode", "oracle")
    extras: dict = {}
    if mode == "oracle":
        expert = ExpertSet(indices=selected,
                           corrected_labels=oracle_labels(selected, clean_labels),
                           source="oracle")
    elif mode == "panel":
        panel = AnnotatorPanel(
            num_annotators=int(cfg.oracle.get("num_annotators", 10)),
            disagreement_rate=float(cfg.oracle.get("disagreement_rate", 0.1)),
            num_classes=train.num_classes,
            rng_seed=int(cfg.oracle.get("rng_seed", 0)) + trial)
        votes, aggregated = panel_annotate(selected, clean_labels, panel)
        expert = ExpertSet(indices=selected, corrected_labels=aggregated,
                           source="panel", votes=votes)
        extras["fleiss_kappa"] = fleiss_kappa(votes, train.num_classes)
    else:  # live: a finalized ExpertSet exported by the annotation service
        with open(cfg.oracle["expert_set_path"]) as fh:
            expert = ExpertSet.from_dict(json.load(fh))
    return expert, extras


def _materialize(state: ModelState, use_ema: bool, role: str) -> ModelState:
    """A state whose EMA slot holds the parameter set chosen for deployment,
    so merging/evaluation can stay EMA-based regardless of the toggle."""
    out = state.clone(role=role)
    if not use_ema:
        out.ema_params.data[:] = state.params.data
    return out


def run_trial(cfg: ExperimentConfig, train: WindowedDataset,
              test: WindowedDataset, arch: ArchitectureSpec, trial: int,
              fingerprint: dict, cache: StageCache | None = None,
              ) -> tuple[float, dict, dict, dict]:
    """One trial: returns (accuracy, phase accuracies, states, extras)."""
    cache = cache or StageCache()
    toggles = cfg.component_toggles
    use_ema = bool(toggles["ema"])
    q, record = _stage("corrupt", lambda: _trial_corruption(cfg, train, trial))
    noisy_train = train.with_labels(record.noisy_labels)
    tcfg = replace(cfg.seed_training, rng_seed=cfg.seed_training.rng_seed + trial)

    phases: dict[str, float] = {}
    states: dict[str, ModelState] = {}
    extras: dict = {"empirical_noise_level": float(np.mean(record.flipped_mask))}

    if cfg.baseline is not None:
        kind = cfg.baseline["kind"]
        if kind == "cl":
            state = _run_confident(cfg, noisy_train, arch, tcfg, fingerprint,
                                   trial, cache, extras)
            acc = evaluate(state, test, use_ema=False)
            states["baseline"] = state
            return acc, {"baseline": acc}, states, extras
        loss = LossSpec.from_dict(cfg.baseline)
        key = StageCache.key("baseline", fingerprint, cfg.noise.to_dict(), trial,
                             tcfg.to_dict(), arch.to_dict(), loss.to_dict())
        state = _stage("baseline_train", lambda: cache.get_or_compute(
            key, lambda: train_baseline(noisy_train, tcfg, arch, loss)[0]))
        acc = evaluate(state, test, use_ema=False)
        states["baseline"] = state
        return acc, {"baseline": acc}, states, extras

    # FHLR path
    alpha = tcfg.smoothing_alpha if toggles["ls"] else 0.0
    seed_cfg = replace(tcfg, smoothing_alpha=alpha)
    seed_key = StageCache.key("seed", fingerprint, cfg.noise.to_dict(), trial,
                              seed_cfg.to_dict(), arch.to_dict())
    seed_state = _stage("seed_train", lambda: cache.get_or_compute(
        seed_key, lambda: train_seed(noisy_train, seed_cfg, arch)[0]))
    states["seed"] = seed_state
    phases["seed"] = evaluate(seed_state, test, use_ema=use_ema)
    final = _materialize(seed_state, use_ema, "seed")

    if toggles["ft"]:
        expert, acq_extras = _stage("acquire", lambda: _acquire_expert(
            cfg, seed_state, train, train.y, trial, use_ema))
        extras.update(acq_extras)
        ft_cfg = TrainConfig(
            learning_rate=float(cfg.refine.get("eta", 0.0005)),
            epochs=int(cfg.refine.get("epochs", 30)),
            batch_size=int(cfg.refine.get("batch_size", 32)),
            smoothing_alpha=0.0,
            ema_momentum=tcfg.ema_momentum,
            l2=tcfg.l2,
            rng_seed=tcfg.rng_seed,
        )
        ft_key = StageCache.key("ft", seed_key, cfg.acquisition.to_dict(),
                                cfg.oracle, cfg.refine, use_ema, trial)
        ft_state = _stage("fine_tune", lambda: cache.get_or_compute(
            ft_key, lambda: fine_tune(seed_state, expert, train,
                                      eta=ft_cfg.learning_rate, cfg=ft_cfg,
                                      start_from_ema=use_ema)[0]))
        states["fine_tuned"] = ft_state
        phases["fine_tuned"] = evaluate(ft_state, test, use_ema=use_ema)
        extras["expert_size"] = len(expert)
        final = _materialize(ft_state, use_ema, "fine_tuned")

        if toggles["merge"]:
            merge_spec = cfg.merge
            if merge_spec is None:
                w_seed = default_seed_weight(cfg.noise.level)
                merge_spec = MergeSpec(weights=(w_seed, 1.0 - w_seed))
            constituents = [_materialize(seed_state, use_ema, "seed"),
                            _materialize(ft_state, use_ema, "fine_tuned")]
            if merge_spec.method == "weighted_average":
                final = merge_weighted(constituents, merge_spec)
            elif merge_spec.method == "fisher":
                final = _fisher_merge(cfg, constituents, train, merge_spec, trial)
            else:
                raise ConfigError("ensemble is a prediction-time method; use "
                                  "the merge_comparison preset")
            states["merged"] = final
            phases["merged"] = evaluate(final, test, use_ema=True)

    acc = evaluate(final, test, use_ema=True if final.role == "merged" else use_ema)
    return acc, phases, states, extras


def _fisher_merge(cfg, constituents, train, merge_spec, trial):
    n = min(int(cfg.refine.get("fisher_samples", 200)), len(train))
    fishers = [estimate_fisher(s, train, n, seed=trial * 31 + i)
               for i, s in enumerate(constituents)]
    return merge_fisher(constituents, fishers, merge_spec)


def _run_confident(cfg, noisy_train, arch, tcfg, fingerprint, trial, cache,
                   extras):
    folds = int(cfg.baseline.get("folds", 5))
    key = StageCache.key("cl-oof", fingerprint, cfg.noise.to_dict(), trial,
                         tcfg.to_dict(), arch.to_dict(), folds)
    probs = cache.get_or_compute(
        key, lambda: oof_probabilities(noisy_train, tcfg, arch, folds=folds))
    joint = estimate_joint(probs, noisy_train.y)
    extras["cl_off_diagonal_mass"] = joint.off_diagonal_mass()
    _, model, pruned = prune_and_retrain(noisy_train, joint, probs, tcfg, arch)
    extras["cl_pruned"] = int(pruned.size)
    extras["cl_audit"] = json.loads(audit_json(joint, pruned))
    return model


def run_pipeline(cfg: ExperimentConfig, cache: StageCache | None = None,
                 ) -> RunReport:
    """All trials of one configuration; failures abort the trial, not the run."""
    start = time.time()
    cache = cache or StageCache()
    train, test, fingerprint = load_experiment_data(cfg)
    arch = build_arch(cfg, train)

    accuracies: list[float] = []
    phase_rows: list[dict] = []
    failures: list[dict] = []
    checkpoints: dict = {}
    extras_all: list[dict] = []
    for trial in range(cfg.trials):
        try:
            acc, phases, states, extras = run_trial(
                cfg, train, test, arch, trial, fingerprint, cache)
        except Exception as exc:  # noqa: BLE001 - structured per-trial failure
            cause = exc.cause if isinstance(exc, StageFailure) else exc
            failures.append({"trial": trial, "stage": getattr(exc, "stage", "run"),
                             "error": f"{type(cause).__name__}: {cause}"})
            continue
        accuracies.append(acc)
        phase_rows.append(phases)
        extras_all.append(extras)
        if cfg.output_dir:
            os.makedirs(cfg.output_dir, exist_ok=True)
            for role, state in states.items():
                path = os.path.join(cfg.output_dir,
                                    f"trial{trial}_{role}.ckpt")
                provenance = None
                if role == "merged":
                    merge_spec = cfg.merge
                    if merge_spec is None:
                        w = default_seed_weight(cfg.noise.level)
                        merge_spec = MergeSpec(weights=(w, 1.0 - w))
                    provenance = {
                        "weights": list(merge_spec.weights),
                        "constituents": {
                            r: hashlib.sha256(
                                states[r].ema_params.data.astype("<f4")
                                .tobytes()).hexdigest()
                            for r in ("seed", "fine_tuned") if r in states},
                    }
                save_checkpoint(state, path, provenance=provenance)
                checkpoints[f"trial{trial}_{role}"] = path

    arr = np.asarray(accuracies, dtype=np.float64)
    report = RunReport(
        accuracies=[float(a) for a in accuracies],
        mean=float(arr.mean()) if arr.size else float("nan"),
        std=float(arr.std(ddof=0)) if arr.size else float("nan"),
        config_checksum=cfg.checksum(),
        wall_clock_s=time.time() - start,
        phase_accuracies=phase_rows,
        checkpoints=checkpoints,
        failures=failures,
        extras={"trials": extras_all},
    )
    if cfg.output_dir:
        os.makedirs(cfg.output_dir, exist_ok=True)
        with open(os.path.join(cfg.output_dir, "report.json"), "w") as fh:
            json.dump({"config": cfg.to_dict(), "report": report.to_dict()},
                      fh, indent=2)
    return report


# ---------------------------------------------------------------------------
# presets

def _cell(base: ExperimentConfig, **overrides) -> ExperimentConfig:
    d = base.to_dict()
    d.update({k: v for k, v in overrides.items() if v is not None})
    d["output_dir"] = None  # preset writes the bundle itself
    return ExperimentConfig.from_dict(d)


def _method_overrides(method: str) -> dict:
    if method == "fhlr":
        return {"baseline": None}
    if method == "cl":
        return {"baseline": {"kind": "cl"}}
    if method in LOSS_KINDS:
        return {"baseline": {"kind": method}}
    raise ConfigError(f"unknown method {method!r}")


def run_preset(name: str, base_cfg: ExperimentConfig, out_dir: str,
               methods: list[str] | None = None,
               cache: StageCache | None = None,
               levels: list[float] | None = None,
               budgets: list[int] | None = None,
               disagreements: list[float] | None = None) -> dict:
    """Expand one named grid, run every cell, write tables and JSON."""
    if name not in PRESET_NAMES:
        raise ConfigError(f"unknown preset {name!r} (have {PRESET_NAMES})")
    os.makedirs(out_dir, exist_ok=True)
    cache = cache or StageCache()
    start = time.time()

    if name == "noise_sweep":
        methods = methods or ["fhlr", "ce"]
        levels = levels or [0.0, 0.2, 0.4, 0.6]
        rows = []
        for method in methods:
            row = {"method": method}
            for nl in levels:
                noise = NoiseSpec(**{**base_cfg.noise.to_dict(), "level": nl,
                                     "mode": "symmetric"})
                cell = _cell(base_cfg, noise=noise.to_dict(),
                             **_method_overrides(method))
                rep = run_pipeline(cell, cache)
                row[f"n_l={nl:g}"] = _fmt(rep)
            rows.append(row)
        bundle = {"preset": name, "columns": [f"n_l={v:g}" for v in levels],
                  "rows": rows}

    elif name == "asymmetric":
        methods = methods or ["fhlr", "ce"]
        noise = NoiseSpec(**{**base_cfg.noise.to_dict(), "level": 0.4,
                             "sparsity": 1.0, "mode": "asymmetric"})
        rows = []
        for method in methods:
            cell = _cell(base_cfg, noise=noise.to_dict(),
                         **_method_overrides(method))
            rep = run_pipeline(cell, cache)
            rows.append({"method": method, "n_l=0.4 asymmetric": _fmt(rep)})
        bundle = {"preset": name, "columns": ["n_l=0.4 asymmetric"], "rows": rows}

    elif name == "acquisition_ablation":
        strategies = ["stratified", "entropy", "smallest_margin",
                      "largest_margin", "least_confidence"]
        rows = []
        for strategy in strategies:
            acq = AcquisitionSpec(strategy=strategy,
                                  budget=base_cfg.acquisition.budget,
                                  rng_seed=base_cfg.acquisition.rng_seed)
            cell = _cell(base_cfg, acquisition=acq.to_dict(), baseline=None)
            rep = run_pipeline(cell, cache)
            rows.append({"method": strategy, "accuracy": _fmt(rep)})
        bundle = {"preset": name, "columns": ["accuracy"], "rows": rows}

    elif name == "merge_comparison":
        bundle = _merge_comparison(base_cfg, cache)

    elif name == "shot_scaling":
        # grid is a desk-scale placeholder, overridable per run
        budgets = budgets or [25, 50, 100, 200, 400]
        methods = methods or ["fhlr", "cl_correct"]
        rows = []
        for method in methods:
            row = {"method": method}
            for budget in budgets:
                if method == "fhlr":
                    acq = AcquisitionSpec(strategy=base_cfg.acquisition.strategy,
                                          budget=budget,
                                          rng_seed=base_cfg.acquisition.rng_seed)
                    cell = _cell(base_cfg, acquisition=acq.to_dict(),
                                 baseline=None)
                    rep = run_pipeline(cell, cache)
                    row[f"shots={budget}"] = _fmt(rep)
                else:
                    row[f"shots={budget}"] = _fmt(
                        _cl_corrected(base_cfg, budget, cache))
            rows.append(row)
        bundle = {"preset": name, "columns": [f"shots={b}" for b in budgets],
                  "rows": rows}

    elif name == "component_ablation":
        rows = []
        for toggles in ABLATION_ROWS:
            cell = _cell(base_cfg, component_toggles=dict(toggles),
                         baseline=None)
            rep = run_pipeline(cell, cache)
            label = "+".join(k.upper() for k in ("ls", "ema", "ft", "merge")
                             if toggles[k])
            rows.append({"method": label, "accuracy": _fmt(rep),
                         "toggles": dict(toggles)})
        bundle = {"preset": name, "columns": ["accuracy"], "rows": rows}

    else:  # annotator_panel
        rows = []
        for d in (disagreements or (0.1, 0.2)):
            oracle_cfg = {**base_cfg.oracle, "mode": "panel",
                          "disagreement_rate": d,
                          "num_annotators": base_cfg.oracle.get(
                              "num_annotators", 10)}
            cell = _cell(base_cfg, oracle=oracle_cfg, baseline=None)
            rep = run_pipeline(cell, cache)
            kappas = [t.get("fleiss_kappa") for t in rep.extras["trials"]
                      if "fleiss_kappa" in t]
            rows.append({"method": f"d={d:g}", "accuracy": _fmt(rep),
                         "fleiss_kappa": f"{100 * float(np.mean(kappas)):.2f}"
                         if kappas else "n/a"})
        bundle = {"preset": name, "columns": ["accuracy", "fleiss_kappa"],
                  "rows": rows}

    bundle["wall_clock_s"] = time.time() - start
    bundle["base_config_checksum"] = base_cfg.checksum()
    _write_bundle(bundle, out_dir)
    return bundle


def _fmt(report: RunReport) -> dict:
    return {"mean": report.mean, "std": report.std,
            "accuracies": report.accuracies, "failures": report.failures}


def _merge_comparison(base_cfg: ExperimentConfig, cache: StageCache) -> dict:
    """Conventional vs Fisher vs ensemble on the same seed/fine-tuned pairs."""
    cfg = _cell(base_cfg, baseline=None)
    train, test, fingerprint = load_experiment_data(cfg)
    arch = build_arch(cfg, train)
    per_method: dict[str, list[float]] = {"conventional": [], "fisher": [],
                                          "ensemble": []}
    for trial in range(cfg.trials):
        no_merge = _cell(cfg, component_toggles={"ls": True, "ema": True,
                                                 "ft": True, "merge": False})
        _, _, states, _ = run_trial(no_merge, train, test, arch, trial,
                                    fingerprint, cache)
        seed_state, ft_state = states["seed"], states["fine_tuned"]
        merge_spec = cfg.merge
        if merge_spec is None:
            w = default_seed_weight(cfg.noise.level)
            merge_spec = MergeSpec(weights=(w, 1.0 - w))
        pair = [seed_state, ft_state]
        merged = merge_weighted(pair, merge_spec)
        per_method["conventional"].append(evaluate(merged, test))
        n = min(int(cfg.refine.get("fisher_samples", 200)), len(train))
        fishers = [estimate_fisher(s, train, n, seed=trial * 31 + i)
                   for i, s in enumerate(pair)]
        fmerged = merge_fisher(pair, fishers,
                               MergeSpec(weights=merge_spec.weights,
                                         method="fisher"))
        per_method["fisher"].append(evaluate(fmerged, test))
        probs = ensemble_predict(pair, test.X)
        per_method["ensemble"].append(float(np.mean(probs.argmax(1) == test.y)))

    rows = []
    for method, accs in per_method.items():
        arr = np.asarray(accs)
        rows.append({"method": method,
                     "accuracy": {"mean": float(arr.mean()),
                                  "std": float(arr.std(ddof=0)),
                                  "accuracies": accs, "failures": []}})
    return {"preset": "merge_comparison", "columns": ["accuracy"], "rows": rows}


def _cl_corrected(base_cfg: ExperimentConfig, budget: int,
                  cache: StageCache) -> RunReport:
    """Shot-matched CL: correct `budget` labels, retrain plain CE."""
    cfg = _cell(base_cfg, baseline={"kind": "cl"})
    start = time.time()
    train, test, fingerprint = load_experiment_data(cfg)
    arch = build_arch(cfg, train)
    accs = []
    for trial in range(cfg.trials):
        _, record = _trial_corruption(cfg, train, trial)
        noisy_train = train.with_labels(record.noisy_labels)
        tcfg = replace(cfg.seed_training,
                       rng_seed=cfg.seed_training.rng_seed + trial)
        folds = int(cfg.baseline.get("folds", 5))
        key = StageCache.key("cl-oof", fingerprint, cfg.noise.to_dict(), trial,
                             tcfg.to_dict(), arch.to_dict(), folds)
        probs = cache.get_or_compute(
            key, lambda: oof_probabilities(noisy_train, tcfg, arch, folds=folds))
        joint = estimate_joint(probs, noisy_train.y)
        corrected = correct_labels(joint, probs, noisy_train.y, budget)
        model, _ = train_baseline(noisy_train.with_labels(corrected), tcfg,
                                  arch, LossSpec("ce"))
        accs.append(evaluate(model, test, use_ema=False))
    arr = np.asarray(accs)
    return RunReport(accuracies=[float(a) for a in accs],
                     mean=float(arr.mean()), std=float(arr.std(ddof=0)),
                     config_checksum=cfg.checksum(),
                     wall_clock_s=time.time() - start)


# ---------------------------------------------------------------------------
# report rendering

def _mean_std_text(cell) -> str:
    if isinstance(cell, dict) and "mean" in cell:
        if cell.get("failures"):
            return "FAILED"
        return f"{100 * cell['mean']:.1f} ± {100 * cell['std']:.1f}"
    return str(cell)


def render_table(bundle: dict) -> str:
    """Aligned text table of a preset bundle (accuracies in percent)."""
    columns = ["method"] + [c for c in bundle["columns"]]
    body = []
    for row in bundle["rows"]:
        body.append([str(row.get("method", ""))]
                    + [_mean_std_text(row.get(c, "")) for c in bundle["columns"]])
    widths = [max(len(columns[i]), *(len(r[i]) for r in body))
              for i in range(len(columns))]
    def fmt_line(cells):
        return "  ".join(c.ljust(w) for c, w in zip(cells, widths))
    lines = [fmt_line(columns), fmt_line(["-" * w for w in widths])]
    lines += [fmt_line(r) for r in body]
    return "\n".join(lines)


def render_csv(bundle: dict) -> str:
    columns = ["method"] + list(bundle["columns"])
    lines = [",".join(columns)]
    for row in bundle["rows"]:
        cells = [str(row.get("method", ""))]
        for c in bundle["columns"]:
            cell = row.get(c, "")
            if isinstance(cell, dict) and "mean" in cell:
                cells.append(f"{100 * cell['mean']:.2f}")
            else:
                cells.append(str(cell))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _write_bundle(bundle: dict, out_dir: str) -> None:
    name = bundle["preset"]
    with open(os.path.join(out_dir, f"{name}.json"), "w") as fh:
        json.dump(bundle, fh, indent=2)
    with open(os.path.join(out_dir, f"{name}.csv"), "w") as fh:
        fh.write(render_csv(bundle))
    with open(os.path.join(out_dir, f"{name}.txt"), "w") as fh:
        fh.write(render_table(bundle) + "\n")


def report_dir(out_dir: str) -> str:
    """Re-render every bundle JSON found under out_dir; returns the text."""
    chunks = []
    for fname in sorted(os.listdir(out_dir)):
        if not fname.endswith(".json"):
            continue
        with open(os.path.join(out_dir, fname)) as fh:
            doc = json.load(fh)
        if "rows" in doc and "columns" in doc:
            chunks.append(f"== {doc.get('preset', fname)}")
            chunks.append(render_table(doc))
        elif "report" in doc:
            rep = doc["report"]
            chunks.append(f"== {fname}: mean {100 * rep['mean']:.1f} "
                          f"± {100 * rep['std']:.1f} over "
                          f"{len(rep['accuracies'])} trials")
    if not chunks:
        raise ConfigError(f"no report JSON found in {out_dir}")
    return "\n".join(chunks)
