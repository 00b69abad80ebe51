import json
import os

import numpy as np
import pytest

from fhlr.data import (DatasetError, SyntheticSpec, WindowedDataset,
                       channel_means, load_canonical, make_synthetic,
                       normalize_mean, save_canonical, split_dataset,
                       window_signal)


def knn_fft_accuracy(train, test, limit=1500):
    """Independent oracle: 1-nearest-neighbor on FFT magnitudes."""
    mtr = np.abs(np.fft.rfft(train.X[:limit], axis=2)).reshape(min(len(train), limit), -1)
    mte = np.abs(np.fft.rfft(test.X, axis=2)).reshape(len(test), -1)
    d2 = (mte ** 2).sum(1)[:, None] - 2 * mte @ mtr.T + (mtr ** 2).sum(1)[None]
    pred = train.y[:limit][d2.argmin(axis=1)]
    return float(np.mean(pred == test.y))


# -- windowing ---------------------------------------------------------------

def test_window_counts_and_starts():
    sig = np.arange(2 * 1000, dtype=float).reshape(2, 1000)
    w = window_signal(sig, length=400, overlap_fraction=0.5)
    assert w.shape == (4, 2, 400)
    for i, start in enumerate([0, 200, 400, 600]):
        np.testing.assert_array_equal(w[i], sig[:, start:start + 400])


def test_window_pad_short_signal():
    sig = np.ones((1, 500))
    w = window_signal(sig, length=512, pad=True)
    assert w.shape == (1, 1, 512)
    assert (w[0, 0, :500] == 1).all()
    assert (w[0, 0, 500:] == 0).all()


def test_window_exact_fit():
    sig = np.random.default_rng(0).random((3, 400))
    w = window_signal(sig, length=400, overlap_fraction=0.5)
    assert w.shape == (1, 3, 400)
    np.testing.assert_array_equal(w[0], sig)


def test_window_too_long_without_pad_is_empty():
    assert window_signal(np.ones((2, 100)), length=128).shape == (0, 2, 128)


def test_window_count_formula_and_exact_slices():
    rng = np.random.default_rng(1)
    for t, length, overlap in [(997, 64, 0.0), (512, 100, 0.25), (777, 50, 0.5)]:
        sig = rng.random((2, t))
        stride = round(length * (1 - overlap))
        w = window_signal(sig, length, overlap)
        assert w.shape[0] == (t - length) // stride + 1
        for i in range(w.shape[0]):
            np.testing.assert_array_equal(w[i], sig[:, i * stride:i * stride + length])
        w_pad = window_signal(sig, length, overlap, pad=True)
        assert w_pad.shape[0] in (w.shape[0], w.shape[0] + 1)


# -- normalization -----------------------------------------------------------

def test_normalize_constant_channel_to_zero():
    X = np.full((4, 2, 16), 3.7)
    out = normalize_mean(X)
    np.testing.assert_allclose(out, 0.0, atol=1e-12)


def test_normalize_zero_mean_unchanged():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((10, 3, 32))
    X -= X.mean(axis=(0, 2), keepdims=True)
    np.testing.assert_allclose(normalize_mean(X), X, atol=1e-6)


def test_normalize_two_values():
    X = np.array([[[1.0, 3.0]]])
    np.testing.assert_allclose(normalize_mean(X), [[[-1.0, 1.0]]])


def test_normalize_with_train_means():
    rng = np.random.default_rng(3)
    train = rng.standard_normal((20, 2, 8)) + 5.0
    test = rng.standard_normal((10, 2, 8)) + 5.0
    mu = channel_means(train)
    fitted = normalize_mean(train, mu)
    np.testing.assert_allclose(fitted.mean(axis=(0, 2)), 0.0, atol=1e-6)
    # test set keeps its own offset relative to train means
    assert abs(normalize_mean(test, mu).mean()) < 0.5


# -- splits --------------------------------------------------------------

def _with_subjects(n=100, subjects=10, seed=0):
    rng = np.random.default_rng(seed)
    return WindowedDataset(X=rng.standard_normal((n, 2, 16)),
                           y=rng.integers(0, 3, n), num_classes=3,
                           subject_ids=np.arange(n) % subjects)


def test_split_by_subject_disjoint():
    ds = _with_subjects()
    train, test = split_dataset(ds, mode="by_subject", train_fraction=0.7, seed=1)
    tr = set(train.subject_ids.tolist())
    te = set(test.subject_ids.tolist())
    assert tr.isdisjoint(te)
    assert len(tr) == 7 and len(te) == 3
    assert tr | te == set(range(10))


def test_split_random_full_train():
    ds = _with_subjects()
    train, test = split_dataset(ds, mode="random", train_fraction=1.0, seed=2)
    assert len(train) == 100 and len(test) == 0


def test_split_determinism():
    ds = _with_subjects()
    a = split_dataset(ds, "random", 0.7, seed=5)
    b = split_dataset(ds, "random", 0.7, seed=5)
    np.testing.assert_array_equal(a[0].y, b[0].y)
    np.testing.assert_array_equal(a[1].y, b[1].y)


def test_split_by_subject_requires_ids():
    ds = WindowedDataset(X=np.zeros((4, 1, 8)), y=np.zeros(4, dtype=int),
                         num_classes=2)
    with pytest.raises(DatasetError):
        split_dataset(ds, mode="by_subject")


# -- canonical format --------------------------------------------------------

def test_canonical_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    train = WindowedDataset(X=rng.standard_normal((10, 6, 40)).astype("<f4"),
                            y=rng.integers(0, 6, 10), num_classes=6)
    test = WindowedDataset(X=rng.standard_normal((4, 6, 40)).astype("<f4"),
                           y=rng.integers(0, 6, 4), num_classes=6)
    save_canonical(str(tmp_path), {"train": train, "test": test},
                   name="toy", sample_rate_hz=50.0)
    loaded = load_canonical(str(tmp_path), "train")
    assert loaded.X.shape == (10, 6, 40)
    np.testing.assert_array_equal(loaded.X, train.X)  # float32 exact round trip
    np.testing.assert_array_equal(loaded.y, train.y)


def test_canonical_empty_split_valid(tmp_path):
    ds = WindowedDataset(X=np.zeros((0, 2, 8)), y=np.zeros(0, dtype=int),
                         num_classes=3)
    save_canonical(str(tmp_path), {"train": ds})
    loaded = load_canonical(str(tmp_path), "train")
    assert len(loaded) == 0


def test_canonical_byte_count_mismatch(tmp_path):
    ds = WindowedDataset(X=np.zeros((10, 6, 400)), y=np.zeros(10, dtype=int),
                         num_classes=5)
    save_canonical(str(tmp_path), {"train": ds})
    data_file = tmp_path / "train_data.f32"
    with open(data_file, "ab") as fh:
        fh.write(b"\x00")  # off by one byte
    with pytest.raises(DatasetError, match="bytes"):
        load_canonical(str(tmp_path), "train")


def test_canonical_missing_file_and_label_range(tmp_path):
    ds = WindowedDataset(X=np.zeros((3, 1, 8)), y=np.array([0, 1, 1]),
                         num_classes=2)
    save_canonical(str(tmp_path), {"train": ds})
    os.remove(tmp_path / "train_labels.i32")
    with pytest.raises(DatasetError, match="missing"):
        load_canonical(str(tmp_path), "train")
    # out-of-range label in the binary payload
    save_canonical(str(tmp_path), {"train": ds})
    np.array([0, 1, 2], dtype="<i4").tofile(tmp_path / "train_labels.i32")
    with pytest.raises(DatasetError):
        load_canonical(str(tmp_path), "train")


def test_manifest_schema_fields(tmp_path):
    ds = WindowedDataset(X=np.zeros((2, 1, 8)), y=np.zeros(2, dtype=int),
                         num_classes=2)
    manifest = save_canonical(str(tmp_path), {"train": ds})
    assert set(manifest) >= {"name", "num_classes", "channels", "window_length",
                             "sample_rate_hz", "splits"}
    with open(tmp_path / "manifest.json") as fh:
        assert json.load(fh) == manifest


# -- synthetic generator -------------------------------------------------

def test_synthetic_separable_oracle():
    spec = SyntheticSpec(num_classes=4, channels=2, window_length=64,
                         train_count=400, test_count=200,
                         class_separability=1.0, noise_floor=0.3, rng_seed=0)
    train, test = make_synthetic(spec)
    assert knn_fft_accuracy(train, test) > 0.95


def test_synthetic_unseparable_oracle_near_chance():
    spec = SyntheticSpec(num_classes=4, channels=2, window_length=64,
                         train_count=400, test_count=400,
                         class_separability=1e-4, noise_floor=1.0, rng_seed=0)
    train, test = make_synthetic(spec)
    acc = knn_fft_accuracy(train, test)
    assert abs(acc - 0.25) < 0.1


def test_synthetic_deterministic_and_balanced():
    spec = SyntheticSpec(num_classes=5, channels=1, window_length=64,
                         train_count=250, test_count=50, rng_seed=9)
    a_train, a_test = make_synthetic(spec)
    b_train, b_test = make_synthetic(spec)
    np.testing.assert_array_equal(a_train.X, b_train.X)
    np.testing.assert_array_equal(a_test.y, b_test.y)
    counts = np.bincount(a_train.y)
    assert (counts == 50).all()


def test_synthetic_spec_validation():
    with pytest.raises(DatasetError):
        SyntheticSpec(class_separability=0.0)
    with pytest.raises(DatasetError):
        SyntheticSpec(noise_floor=-1.0)
    with pytest.raises(DatasetError):
        SyntheticSpec(num_classes=8, train_count=4)


def test_benchmark_shapes_registry():
    from fhlr.data import BENCHMARK_SHAPES
    from fhlr.network import ArchitectureSpec

    ss = BENCHMARK_SHAPES["sleep_scoring"]
    assert ss["window_length"] == 30 * ss["sample_rate_hz"]  # 30 s epochs
    ca = BENCHMARK_SHAPES["cardiac_arrhythmia"]
    assert ca["window_length"] == 5 * ca["sample_rate_hz"]   # 5 s segments
    # every benchmark shape must instantiate the full-width architecture
    for shape in BENCHMARK_SHAPES.values():
        arch = ArchitectureSpec(input_channels=shape["channels"],
                                input_length=shape["window_length"],
                                num_classes=shape["num_classes"])
        assert arch.parameter_count() > 0
