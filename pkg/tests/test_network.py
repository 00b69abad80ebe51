import numpy as np
import pytest

from fhlr.losses import LossSpec, loss_and_grad
from fhlr.network import (ArchitectureSpec, ArchitectureError,
                          _forward_internal, backward, build_model, flatten,
                          forward, load_checkpoint, predict_proba,
                          save_checkpoint, softmax, unflatten)

SMALL = ArchitectureSpec(input_channels=2, input_length=64, num_classes=3,
                         width_multiplier=0.25)


@pytest.fixture(scope="module")
def model():
    return build_model(SMALL, init_seed=0)


def test_forward_shape_contract(model):
    X = np.random.default_rng(0).standard_normal((7, 2, 64))
    logits = forward(model, X)
    assert logits.shape == (7, 3)


def test_same_seed_identical_parameters():
    a = build_model(SMALL, init_seed=123)
    b = build_model(SMALL, init_seed=123)
    np.testing.assert_array_equal(a.params.data, b.params.data)
    c = build_model(SMALL, init_seed=124)
    assert not np.array_equal(a.params.data, c.params.data)


def test_parameter_count_matches_independent_layer_list():
    # independent oracle: walk the layer structure by hand
    arch = ArchitectureSpec(input_channels=3, input_length=80, num_classes=5,
                            width_multiplier=0.5)
    filters = [12, 16, 32, 36, 48, 64]
    kernels = [8, 8, 8, 6, 6, 4]
    assert list(arch.scaled_filters()) == filters
    expected = 0
    cin = 3
    for f, k in zip(filters, kernels):
        expected += f * cin * k + f  # conv w + b
        expected += 2 * f            # gamma + beta
        cin = f
    expected += 64 * 5 + 5           # dense
    assert arch.parameter_count() == expected
    assert len(build_model(arch, 0).params) == expected


def test_softmax_rows_sum_to_one(model):
    X = np.random.default_rng(1).standard_normal((5, 2, 64))
    probs = softmax(forward(model, X))
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)
    assert (probs >= 0).all()


def test_ema_equals_params_after_build(model):
    X = np.random.default_rng(2).standard_normal((4, 2, 64))
    np.testing.assert_array_equal(forward(model, X, use_ema=True),
                                  forward(model, X, use_ema=False))


def test_eval_forward_deterministic(model):
    X = np.random.default_rng(3).standard_normal((4, 2, 64))
    np.testing.assert_array_equal(forward(model, X), forward(model, X))


def test_dropout_only_in_train_mode(model):
    X = np.random.default_rng(4).standard_normal((4, 2, 64))
    eval_logits = forward(model, X, train_mode=False)
    train_logits = forward(model, X, train_mode=True,
                           dropout_rng=np.random.default_rng(0))
    assert not np.array_equal(eval_logits, train_logits)


def test_flatten_round_trip(model):
    vec = flatten(model)
    pv = unflatten(vec, SMALL)
    np.testing.assert_array_equal(pv.data, model.params.data)
    for name, _ in pv.layout:
        np.testing.assert_array_equal(pv[name], model.params[name])
    with pytest.raises(ArchitectureError):
        unflatten(vec[:-1], SMALL)


def test_flatten_equal_specs_equal_lengths():
    a = build_model(SMALL, 0)
    b = build_model(SMALL, 99)
    assert len(flatten(a)) == len(flatten(b))


def test_forward_batch_permutation_equivariance(model):
    rng = np.random.default_rng(5)
    X = rng.standard_normal((6, 2, 64))
    perm = rng.permutation(6)
    np.testing.assert_allclose(forward(model, X)[perm],
                               forward(model, X[perm]), atol=1e-10)


def test_outputs_finite_for_random_draws(model):
    rng = np.random.default_rng(6)
    X = rng.standard_normal((1000, 2, 64)) * 10
    probs = predict_proba(model, X, use_ema=False)
    assert np.isfinite(probs).all()


def test_shape_mismatch_raises(model):
    with pytest.raises(ArchitectureError):
        forward(model, np.zeros((2, 3, 64)))
    with pytest.raises(ArchitectureError):
        forward(model, np.zeros((2, 2, 63)))


def test_first_groupnorm_fallback_when_channels_do_not_divide():
    # 23 input channels vs 24 first filters: largest divisor of 24 <= 23 is 12
    arch = ArchitectureSpec(input_channels=23, input_length=512, num_classes=5)
    assert arch.group_counts()[0] == 12
    arch2 = ArchitectureSpec(input_channels=6, input_length=400, num_classes=6)
    assert arch2.group_counts()[0] == 6


def test_width_multiplier_keeps_group_divisibility():
    for wm in (0.25, 0.33, 0.5, 0.75, 1.0):
        arch = ArchitectureSpec(input_channels=2, input_length=64,
                                num_classes=3, width_multiplier=wm)
        for f in arch.scaled_filters():
            assert f % arch.norm_groups == 0


def test_pool_underflow_rejected():
    with pytest.raises(ArchitectureError):
        ArchitectureSpec(input_channels=1, input_length=16, num_classes=2)


def test_gradient_check_20_random_parameters(model):
    rng = np.random.default_rng(7)
    X = rng.standard_normal((4, 2, 64))
    T = np.zeros((4, 3))
    T[np.arange(4), rng.integers(0, 3, 4)] = 1.0
    spec = LossSpec("ce")
    l2 = 1e-4

    def objective(data):
        pv = unflatten(data, SMALL)
        logits, _ = _forward_internal(SMALL, pv, X, False, None, False)
        value, _ = loss_and_grad(spec, logits, T)
        w = np.concatenate([pv[n].ravel() for n, _ in pv.layout
                            if n.endswith(".w")])
        return value + l2 * float(w @ w)

    pv = model.params
    logits, cache = _forward_internal(SMALL, pv, X, False, None, True)
    _, dlogits = loss_and_grad(spec, logits, T)
    grads = backward(SMALL, pv, cache, dlogits)
    g = grads.data.copy()
    for name, _ in pv.layout:
        if name.endswith(".w"):
            grads[name][...] += 2 * l2 * pv[name]
    g = grads.data

    idx = rng.choice(len(pv), size=20, replace=False)
    for i in idx:
        h = 1e-5 * max(1.0, abs(pv.data[i]))
        up = pv.data.copy(); up[i] += h
        dn = pv.data.copy(); dn[i] -= h
        fd = (objective(up) - objective(dn)) / (2 * h)
        rel = abs(g[i] - fd) / max(abs(g[i]), abs(fd), 1e-8)
        assert rel < 1e-3, f"param {i}: analytic {g[i]}, fd {fd}"


def test_checkpoint_round_trip(tmp_path, model):
    path = str(tmp_path / "m.ckpt")
    header = save_checkpoint(model, path, provenance={"note": "unit"})
    assert header["provenance"]["note"] == "unit"
    loaded = load_checkpoint(path)
    assert loaded.arch == model.arch
    assert loaded.role == model.role
    # float32 payload: exact after one round trip through f32
    np.testing.assert_array_equal(loaded.params.data,
                                  model.params.data.astype("<f4").astype(np.float64))
    with pytest.raises(ArchitectureError):
        with open(path, "r+b") as fh:
            fh.write(b"NOTMAGIC")
        load_checkpoint(path)
