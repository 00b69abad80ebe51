import json
import os
import subprocess
import sys

import numpy as np
import pytest

from fhlr.network import build_model, ArchitectureSpec
from fhlr.runner import (ABLATION_ROWS, ConfigError, ExperimentConfig,
                         StageCache, evaluate, render_csv, render_table,
                         report_dir, run_pipeline, run_preset)
from fhlr.data import SyntheticSpec, make_synthetic

MICRO = {
    "dataset": {"kind": "synthetic", "spec": {
        "num_classes": 3, "channels": 2, "window_length": 64,
        "train_count": 180, "test_count": 60, "class_separability": 1.0,
        "noise_floor": 0.4, "rng_seed": 0}},
    "noise": {"num_classes": 3, "level": 0.3, "sparsity": 0.2, "rng_seed": 1},
    "seed_training": {"epochs": 3, "batch_size": 32, "rng_seed": 0,
                      "ema_momentum": 0.9},
    "arch": {"width_multiplier": 0.25},
    "acquisition": {"strategy": "stratified", "budget": 30, "rng_seed": 2},
    "refine": {"eta": 0.0005, "epochs": 4, "batch_size": 16},
    "trials": 2,
}


def micro_cfg(**overrides):
    d = json.loads(json.dumps(MICRO))
    d.update(overrides)
    return ExperimentConfig.from_dict(d)


def test_config_round_trip_and_checksum():
    cfg = micro_cfg()
    again = ExperimentConfig.from_dict(cfg.to_dict())
    assert again.to_dict() == cfg.to_dict()
    assert again.checksum() == cfg.checksum()


def test_config_validation():
    with pytest.raises(ConfigError):
        micro_cfg(trials=0)
    with pytest.raises(ConfigError):
        micro_cfg(component_toggles={"ft": False, "merge": True})
    with pytest.raises(ConfigError):
        micro_cfg(baseline={"kind": "not_a_loss"})
    with pytest.raises(ConfigError):
        micro_cfg(oracle={"mode": "live"})  # needs expert_set_path


def test_evaluate_contract():
    arch = ArchitectureSpec(input_channels=2, input_length=64, num_classes=3,
                            width_multiplier=0.25)
    model = build_model(arch, 0)
    spec = SyntheticSpec(num_classes=3, channels=2, window_length=64,
                         train_count=30, test_count=30, rng_seed=0)
    _, test = make_synthetic(spec)
    acc = evaluate(model, test)
    assert 0.0 <= acc <= 1.0
    perm = np.random.default_rng(0).permutation(len(test))
    assert evaluate(model, test.subset(perm)) == acc  # permutation invariant
    # force constant logits: accuracy equals majority-class share
    model.ema_params.data[:] = 0.0
    counts = np.bincount(test.y, minlength=3)
    assert evaluate(model, test) == pytest.approx(counts.max() / len(test))


def test_run_pipeline_fhlr_report_shape(tmp_path):
    cfg = micro_cfg(output_dir=str(tmp_path / "out"))
    report = run_pipeline(cfg)
    assert len(report.accuracies) == 2
    assert report.mean == pytest.approx(np.mean(report.accuracies))
    assert report.std == pytest.approx(np.std(report.accuracies))
    assert not report.failures
    assert {"seed", "fine_tuned", "merged"} <= set(report.phase_accuracies[0])
    assert os.path.exists(tmp_path / "out" / "report.json")
    assert os.path.exists(tmp_path / "out" / "trial0_merged.ckpt")


def test_run_pipeline_single_trial_zero_std():
    report = run_pipeline(micro_cfg(trials=1))
    assert report.std == 0.0


def test_run_pipeline_reproducible():
    a = run_pipeline(micro_cfg())
    b = run_pipeline(micro_cfg())
    assert a.accuracies == b.accuracies


def test_run_pipeline_baseline_mode():
    report = run_pipeline(micro_cfg(baseline={"kind": "ce"}, trials=1))
    assert len(report.accuracies) == 1
    assert list(report.phase_accuracies[0]) == ["baseline"]


def test_paired_corruption_across_methods():
    # same noise + trial -> identical corruption regardless of method
    from fhlr.runner import _trial_corruption, load_experiment_data
    cfg_a = micro_cfg()
    cfg_b = micro_cfg(baseline={"kind": "ce"})
    train, _, _ = load_experiment_data(cfg_a)
    _, rec_a = _trial_corruption(cfg_a, train, 0)
    _, rec_b = _trial_corruption(cfg_b, train, 0)
    np.testing.assert_array_equal(rec_a.noisy_labels, rec_b.noisy_labels)


def test_component_toggles_skip_stages():
    cfg = micro_cfg(component_toggles={"ls": True, "ema": False, "ft": False,
                                       "merge": False}, trials=1)
    report = run_pipeline(cfg)
    assert set(report.phase_accuracies[0]) == {"seed"}


def test_stage_cache_shares_seed_across_toggle_rows():
    cache = StageCache()
    run_pipeline(micro_cfg(trials=1, component_toggles={
        "ls": True, "ema": True, "ft": False, "merge": False}), cache)
    misses_first = cache.misses
    run_pipeline(micro_cfg(trials=1, component_toggles={
        "ls": True, "ema": True, "ft": True, "merge": True}), cache)
    assert cache.hits >= 1  # seed model reused
    assert cache.misses > misses_first  # fine-tune is new


def test_live_oracle_reads_expert_set(tmp_path):
    expert_path = tmp_path / "expert.json"
    expert_path.write_text(json.dumps({
        "indices": list(range(30)),
        "corrected_labels": [0] * 30,
        "source": "live_ui"}))
    cfg = micro_cfg(oracle={"mode": "live", "expert_set_path": str(expert_path)},
                    trials=1)
    report = run_pipeline(cfg)
    assert len(report.accuracies) == 1


def test_trial_failure_recorded_not_fatal(tmp_path):
    expert_path = tmp_path / "expert.json"
    expert_path.write_text(json.dumps({
        "indices": [0, 0],  # duplicate indices -> ExpertSet rejects
        "corrected_labels": [0, 0], "source": "live_ui"}))
    cfg = micro_cfg(oracle={"mode": "live", "expert_set_path": str(expert_path)},
                    trials=1)
    report = run_pipeline(cfg)
    assert report.failures and not report.accuracies


def test_render_table_and_csv():
    bundle = {"preset": "demo", "columns": ["accuracy"],
              "rows": [{"method": "fhlr",
                        "accuracy": {"mean": 0.91, "std": 0.01,
                                     "accuracies": [0.9, 0.92],
                                     "failures": []}}]}
    table = render_table(bundle)
    assert "fhlr" in table and "91.0 ± 1.0" in table
    csv = render_csv(bundle)
    assert csv.splitlines()[0] == "method,accuracy"
    assert "91.00" in csv


def test_preset_component_ablation_rows(tmp_path):
    cfg = micro_cfg(trials=1)
    bundle = run_preset("component_ablation", cfg, str(tmp_path))
    assert len(bundle["rows"]) == 6
    labels = [row["method"] for row in bundle["rows"]]
    assert labels[0] == "LS" and labels[-1] == "LS+EMA+FT+MERGE"
    assert [row["toggles"] for row in bundle["rows"]] == list(ABLATION_ROWS)
    for ext in (".json", ".csv", ".txt"):
        assert os.path.exists(os.path.join(str(tmp_path),
                                           f"component_ablation{ext}"))
    rendered = report_dir(str(tmp_path))
    assert "component_ablation" in rendered


def test_preset_annotator_panel(tmp_path):
    cfg = micro_cfg(trials=1)
    bundle = run_preset("annotator_panel", cfg, str(tmp_path))
    assert [row["method"] for row in bundle["rows"]] == ["d=0.1", "d=0.2"]
    for row in bundle["rows"]:
        assert "fleiss_kappa" in row


def test_preset_unknown_name():
    with pytest.raises(ConfigError):
        run_preset("bogus", micro_cfg(), "/tmp/never")


def test_cli_synth_run_report(tmp_path):
    spec = {"num_classes": 3, "channels": 1, "window_length": 64,
            "train_count": 60, "test_count": 30, "rng_seed": 0}
    spec_path = tmp_path / "synth.json"
    spec_path.write_text(json.dumps(spec))
    out_dir = tmp_path / "ds"
    r = subprocess.run([sys.executable, "-m", "fhlr.cli", "synth",
                        "--spec", str(spec_path), "--out", str(out_dir)],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert (out_dir / "manifest.json").exists()

    cfg = json.loads(json.dumps(MICRO))
    cfg["dataset"] = {"kind": "canonical", "path": str(out_dir)}
    cfg["noise"]["num_classes"] = 3
    cfg["trials"] = 1
    cfg["seed_training"]["epochs"] = 2
    cfg["refine"]["epochs"] = 2
    cfg["acquisition"]["budget"] = 12
    cfg["output_dir"] = str(tmp_path / "run_out")
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    r = subprocess.run([sys.executable, "-m", "fhlr.cli", "run",
                        "--config", str(cfg_path)],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    doc = json.loads(r.stdout)
    assert len(doc["accuracies"]) == 1

    r = subprocess.run([sys.executable, "-m", "fhlr.cli", "report",
                        "--dir", str(tmp_path / "run_out")],
                       capture_output=True, text=True)
    assert r.returncode == 0
    assert "mean" in r.stdout


def test_cli_exit_codes(tmp_path):
    r = subprocess.run([sys.executable, "-m", "fhlr.cli", "run",
                        "--config", str(tmp_path / "missing.json")],
                       capture_output=True, text=True)
    assert r.returncode == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"trials": 0}))
    r = subprocess.run([sys.executable, "-m", "fhlr.cli", "run",
                        "--config", str(bad)],
                       capture_output=True, text=True)
    assert r.returncode == 2
    r = subprocess.run([sys.executable, "-m", "fhlr.cli", "report",
                        "--dir", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 2


def test_preset_noise_sweep_micro(tmp_path):
    cfg = micro_cfg(trials=1)
    bundle = run_preset("noise_sweep", cfg, str(tmp_path),
                        methods=["fhlr", "ce"], levels=[0.0, 0.4])
    assert [r["method"] for r in bundle["rows"]] == ["fhlr", "ce"]
    assert bundle["columns"] == ["n_l=0", "n_l=0.4"]
    for row in bundle["rows"]:
        for col in bundle["columns"]:
            assert not row[col]["failures"]


def test_preset_asymmetric_micro(tmp_path):
    cfg = micro_cfg(trials=1)
    bundle = run_preset("asymmetric", cfg, str(tmp_path), methods=["fhlr"])
    assert bundle["rows"][0]["method"] == "fhlr"
    assert "n_l=0.4 asymmetric" in bundle["rows"][0]


def test_preset_acquisition_ablation_micro(tmp_path):
    cfg = micro_cfg(trials=1)
    bundle = run_preset("acquisition_ablation", cfg, str(tmp_path))
    methods = [r["method"] for r in bundle["rows"]]
    assert methods == ["stratified", "entropy", "smallest_margin",
                       "largest_margin", "least_confidence"]
    # seed model shared across strategies: only fine-tune stages differ
    for row in bundle["rows"]:
        assert not row["accuracy"]["failures"]


def test_preset_merge_comparison_micro(tmp_path):
    cfg = micro_cfg(trials=1)
    bundle = run_preset("merge_comparison", cfg, str(tmp_path))
    methods = {r["method"] for r in bundle["rows"]}
    assert methods == {"conventional", "fisher", "ensemble"}


def test_preset_shot_scaling_micro(tmp_path):
    cfg = micro_cfg(trials=1)
    bundle = run_preset("shot_scaling", cfg, str(tmp_path),
                        methods=["fhlr", "cl_correct"], budgets=[10, 20])
    assert bundle["columns"] == ["shots=10", "shots=20"]
    assert [r["method"] for r in bundle["rows"]] == ["fhlr", "cl_correct"]
    for row in bundle["rows"]:
        for col in bundle["columns"]:
            assert not row[col].get("failures")


def test_pipeline_cl_baseline_micro():
    report = run_pipeline(micro_cfg(baseline={"kind": "cl", "folds": 3},
                                    trials=1))
    assert not report.failures
    extras = report.extras["trials"][0]
    assert "cl_off_diagonal_mass" in extras and "cl_pruned" in extras


def test_cli_preset_asymmetric(tmp_path):
    cfg = json.loads(json.dumps(MICRO))
    cfg["trials"] = 1
    cfg_path = tmp_path / "base.json"
    cfg_path.write_text(json.dumps(cfg))
    r = subprocess.run([sys.executable, "-m", "fhlr.cli", "preset",
                        "asymmetric", "--config", str(cfg_path),
                        "--out", str(tmp_path / "out"),
                        "--methods", "ce"],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert "n_l=0.4 asymmetric" in r.stdout
    assert (tmp_path / "out" / "asymmetric.csv").exists()
    r = subprocess.run([sys.executable, "-m", "fhlr.cli", "preset", "bogus",
                        "--config", str(cfg_path), "--out", str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode == 2


def test_expert_labels_come_from_clean_source():
    from fhlr.runner import _acquire_expert, load_experiment_data, build_arch
    from fhlr.training import train_seed, TrainConfig
    from fhlr.noise import NoiseSpec, build_noise_matrix, corrupt_labels
    from dataclasses import replace

    cfg = micro_cfg(noise={"num_classes": 3, "level": 0.8, "rng_seed": 1},
                    trials=1)
    train, test, _ = load_experiment_data(cfg)
    arch = build_arch(cfg, train)
    q = build_noise_matrix(cfg.noise)
    noisy = train.with_labels(corrupt_labels(train.y, q, seed=0).noisy_labels)
    seed_state, _ = train_seed(noisy, replace(cfg.seed_training, epochs=1), arch)
    expert, _ = _acquire_expert(cfg, seed_state, train, train.y, 0, True)
    # at 80% label noise, clean-source labels cannot match the noisy ones
    np.testing.assert_array_equal(expert.corrected_labels,
                                  train.y[expert.indices])
