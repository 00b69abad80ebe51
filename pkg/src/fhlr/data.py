"""Dataset loading, windowing, normalization, splits, and the synthetic generator.

Canonical on-disk format: a directory with manifest.json plus one pair of raw
binary files per split. Data files are little-endian float32 laid out row-major
as [N, channels, window_length]; label files are little-endian int32. Raw
device formats (EDF, WFDB) are converter territory and never parsed here.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np


class DatasetError(ValueError):
    """Manifest/shape/label violations in canonical datasets."""


# Converter contract targets for the four benchmark tasks: converters own the
# raw parsing (EDF, WFDB), channel choice, class merges and windowing, and
# must emit manifests with these shapes. Sleep staging merges the two deepest
# stages and drops movement/unscored segments (5 classes, Fpz-Cz channel).
BENCHMARK_SHAPES = {
    "sleep_scoring": {"channels": 1, "window_length": 3000,
                      "sample_rate_hz": 100.0, "num_classes": 5},
    "activity_recognition": {"channels": 6, "window_length": 400,
                             "sample_rate_hz": 50.0, "num_classes": 6,
                             "overlap_fraction": 0.5},
    "cardiac_arrhythmia": {"channels": 12, "window_length": 2500,
                           "sample_rate_hz": 500.0, "num_classes": 4},
    "artifact_detection": {"channels": 23, "window_length": 512,
                           "sample_rate_hz": 250.0, "num_classes": 5,
                           "pad": True},
}


@dataclass
class WindowedDataset:
    """Segmented multichannel windows with integer labels."""

    X: np.ndarray              # [N, channels, window_length] float
    y: np.ndarray              # [N] int
    num_classes: int
    subject_ids: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 3:
            raise DatasetError(f"X must be [N, channels, length], got {self.X.shape}")
        if self.y.shape != (self.X.shape[0],):
            raise DatasetError("label count does not match window count")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.num_classes):
            raise DatasetError(f"labels outside [0, {self.num_classes})")
        if not np.isfinite(self.X).all():
            raise DatasetError("X contains NaN or Inf")
        if self.subject_ids is not None:
            self.subject_ids = np.asarray(self.subject_ids, dtype=np.int64)
            if self.subject_ids.shape != (self.X.shape[0],):
                raise DatasetError("subject_ids length mismatch")

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def channels(self) -> int:
        return self.X.shape[1]

    @property
    def window_length(self) -> int:
        return self.X.shape[2]

    def with_labels(self, y: np.ndarray) -> "WindowedDataset":
        return WindowedDataset(X=self.X, y=y, num_classes=self.num_classes,
                               subject_ids=self.subject_ids)

    def subset(self, idx: np.ndarray) -> "WindowedDataset":
        idx = np.asarray(idx, dtype=np.int64)
        subj = self.subject_ids[idx] if self.subject_ids is not None else None
        return WindowedDataset(X=self.X[idx], y=self.y[idx],
                               num_classes=self.num_classes, subject_ids=subj)


@dataclass(frozen=True)
class SyntheticSpec:
    """Desk-scale surrogate dataset: class-specific spectral content."""

    num_classes: int = 5
    channels: int = 2
    window_length: int = 80
    train_count: int = 3000
    test_count: int = 1000
    class_separability: float = 1.0
    noise_floor: float = 0.6
    rng_seed: int = 0
    sinusoids_per_class: int = 3

    def __post_init__(self):
        if self.class_separability <= 0:
            raise DatasetError("class_separability must be > 0")
        if self.noise_floor < 0:
            raise DatasetError("noise_floor must be >= 0")
        if min(self.train_count, self.test_count) < self.num_classes:
            raise DatasetError("counts must be >= num_classes")

    def to_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "channels": self.channels,
            "window_length": self.window_length,
            "train_count": self.train_count,
            "test_count": self.test_count,
            "class_separability": self.class_separability,
            "noise_floor": self.noise_floor,
            "rng_seed": self.rng_seed,
            "sinusoids_per_class": self.sinusoids_per_class,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})


# ---------------------------------------------------------------------------
# canonical format

def load_canonical(dir_path: str, split: str = "train") -> WindowedDataset:
    """Load one split of a canonical-format dataset directory."""
    manifest = read_manifest(dir_path)
    if split not in manifest["splits"]:
        raise DatasetError(f"split {split!r} not in manifest "
                           f"(has {sorted(manifest['splits'])})")
    info = manifest["splits"][split]
    n = int(info["count"])
    ch = int(manifest["channels"])
    wl = int(manifest["window_length"])

    data_path = os.path.join(dir_path, info["data_file"])
    labels_path = os.path.join(dir_path, info["labels_file"])
    for p in (data_path, labels_path):
        if not os.path.exists(p):
            raise DatasetError(f"missing file {p}")

    expect_data = n * ch * wl * 4
    expect_labels = n * 4
    if os.path.getsize(data_path) != expect_data:
        raise DatasetError(f"{data_path}: expected {expect_data} bytes, "
                           f"found {os.path.getsize(data_path)}")
    if os.path.getsize(labels_path) != expect_labels:
        raise DatasetError(f"{labels_path}: expected {expect_labels} bytes, "
                           f"found {os.path.getsize(labels_path)}")

    X = np.fromfile(data_path, dtype="<f4").reshape(n, ch, wl)
    y = np.fromfile(labels_path, dtype="<i4")
    subj = None
    if "subjects_file" in info:
        subj_path = os.path.join(dir_path, info["subjects_file"])
        if os.path.getsize(subj_path) != n * 4:
            raise DatasetError(f"{subj_path}: byte count mismatch")
        subj = np.fromfile(subj_path, dtype="<i4").astype(np.int64)
    return WindowedDataset(X=X, y=y, num_classes=int(manifest["num_classes"]),
                           subject_ids=subj)


def read_manifest(dir_path: str) -> dict:
    path = os.path.join(dir_path, "manifest.json")
    if not os.path.exists(path):
        raise DatasetError(f"no manifest.json in {dir_path}")
    with open(path) as fh:
        manifest = json.load(fh)
    for key in ("name", "num_classes", "channels", "window_length",
                "sample_rate_hz", "splits"):
        if key not in manifest:
            raise DatasetError(f"manifest missing field {key!r}")
    return manifest


def save_canonical(dir_path: str, splits: dict[str, WindowedDataset],
                   name: str = "dataset", sample_rate_hz: float = 1.0) -> dict:
    """Write splits to the canonical format; returns the manifest."""
    if not splits:
        raise DatasetError("need at least one split")
    first = next(iter(splits.values()))
    os.makedirs(dir_path, exist_ok=True)
    manifest = {
        "name": name,
        "num_classes": first.num_classes,
        "channels": first.channels,
        "window_length": first.window_length,
        "sample_rate_hz": sample_rate_hz,
        "splits": {},
    }
    for split, ds in splits.items():
        if (ds.channels, ds.window_length) != (first.channels, first.window_length):
            raise DatasetError("splits disagree on window shape")
        data_file = f"{split}_data.f32"
        labels_file = f"{split}_labels.i32"
        ds.X.astype("<f4").tofile(os.path.join(dir_path, data_file))
        ds.y.astype("<i4").tofile(os.path.join(dir_path, labels_file))
        entry = {"count": len(ds), "data_file": data_file, "labels_file": labels_file}
        if ds.subject_ids is not None:
            subjects_file = f"{split}_subjects.i32"
            ds.subject_ids.astype("<i4").tofile(os.path.join(dir_path, subjects_file))
            entry["subjects_file"] = subjects_file
        manifest["splits"][split] = entry
    with open(os.path.join(dir_path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest


# ---------------------------------------------------------------------------
# preprocessing

def window_signal(signal: np.ndarray, length: int, overlap_fraction: float = 0.0,
                  pad: bool = False) -> np.ndarray:
    """Cut a [channels, T] signal into [K, channels, length] windows.

    Stride is round(length * (1 - overlap_fraction)). With pad set, a trailing
    partial window is zero-padded to full length; without it, leftovers drop.
    """
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim != 2:
        raise DatasetError("signal must be [channels, T]")
    if length < 1:
        raise DatasetError("length must be >= 1")
    if not 0.0 <= overlap_fraction < 1.0:
        raise DatasetError("overlap_fraction must be in [0, 1)")
    ch, t = signal.shape
    stride = max(1, round(length * (1.0 - overlap_fraction)))

    starts = list(range(0, t - length + 1, stride)) if t >= length else []
    windows = [signal[:, s:s + length] for s in starts]
    if pad:
        next_start = starts[-1] + stride if starts else 0
        if next_start < t:
            tail = signal[:, next_start:]
            padded = np.zeros((ch, length), dtype=np.float64)
            padded[:, :tail.shape[1]] = tail
            windows.append(padded)
    if not windows:
        return np.zeros((0, ch, length), dtype=np.float64)
    return np.stack(windows, axis=0)


def channel_means(X: np.ndarray) -> np.ndarray:
    """Per-channel means over all windows and time steps."""
    return np.asarray(X, dtype=np.float64).mean(axis=(0, 2))


def normalize_mean(X: np.ndarray, means: np.ndarray | None = None) -> np.ndarray:
    """Subtract per-channel means (fit on X itself unless given)."""
    X = np.asarray(X, dtype=np.float64)
    if means is None:
        means = channel_means(X)
    return X - np.asarray(means, dtype=np.float64)[None, :, None]


def split_dataset(ds: WindowedDataset, mode: str = "random",
                  train_fraction: float = 0.7, seed: int = 0,
                  ) -> tuple[WindowedDataset, WindowedDataset]:
    """Train/test split, either a seeded shuffle or by disjoint subject groups."""
    if not 0.0 < train_fraction <= 1.0:
        raise DatasetError("train_fraction must be in (0, 1]")
    rng = np.random.default_rng(seed)
    n = len(ds)
    if mode == "random":
        perm = rng.permutation(n)
        cut = int(round(train_fraction * n))
        return ds.subset(np.sort(perm[:cut])), ds.subset(np.sort(perm[cut:]))
    if mode == "by_subject":
        if ds.subject_ids is None:
            raise DatasetError("by_subject split requires subject_ids")
        subjects = np.unique(ds.subject_ids)
        perm = rng.permutation(subjects)
        cut = int(round(train_fraction * subjects.size))
        train_subj = set(perm[:cut].tolist())
        mask = np.array([s in train_subj for s in ds.subject_ids])
        return ds.subset(np.where(mask)[0]), ds.subset(np.where(~mask)[0])
    raise DatasetError(f"unknown split mode {mode!r}")


# ---------------------------------------------------------------------------
# synthetic generation

def make_synthetic(spec: SyntheticSpec) -> tuple[WindowedDataset, WindowedDataset]:
    """Generate a balanced train/test pair with class-specific spectra.

    Each (class, channel) owns a disjoint set of integer frequencies (cycles
    per window), so magnitudes of the FFT separate classes cleanly while
    per-instance time shifts keep the raw waveforms varied. Gaussian noise of
    scale noise_floor is added on top.
    """
    rng = np.random.default_rng(spec.rng_seed)
    c, ch, wl = spec.num_classes, spec.channels, spec.window_length
    n_sin = spec.sinusoids_per_class

    max_bin = wl // 2 - 1
    need = c * n_sin
    avail = max_bin - 2 + 1
    if need > avail:
        raise DatasetError(f"window_length {wl} too short for {need} distinct "
                           f"frequency bins")
    freqs = np.empty((c, ch, n_sin))
    for j in range(ch):
        chosen = rng.choice(np.arange(2, max_bin + 1), size=need, replace=False)
        freqs[:, j, :] = chosen.reshape(c, n_sin)
    amps = rng.uniform(0.5, 1.0, size=(c, ch, n_sin)) * spec.class_separability
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(c, ch, n_sin))

    def build(count: int) -> WindowedDataset:
        labels = np.arange(count) % c
        rng.shuffle(labels)
        t = np.arange(wl) / wl
        X = np.empty((count, ch, wl))
        shifts = rng.uniform(0.0, 1.0, size=count)
        amp_jitter = rng.uniform(0.85, 1.15, size=count)
        for i in range(count):
            k = labels[i]
            arg = 2.0 * np.pi * freqs[k][:, :, None] * (t[None, None, :] + shifts[i])
            wave = (amps[k][:, :, None] * np.sin(arg + phases[k][:, :, None])).sum(axis=1)
            X[i] = amp_jitter[i] * wave
        X += rng.normal(0.0, spec.noise_floor, size=X.shape)
        return WindowedDataset(X=X, y=labels, num_classes=c)

    return build(spec.train_count), build(spec.test_count)
