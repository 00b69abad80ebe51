import numpy as np
import pytest

from fhlr.losses import (LossError, LossSpec, compute_loss, loss_and_grad,
                         mixup_batch)


def logits_for_probs(p):
    """Logits whose softmax equals p (up to shift)."""
    return np.log(np.asarray(p, dtype=np.float64))


ONEHOT = np.array([[1.0, 0.0]])
P90 = logits_for_probs([[0.9, 0.1]])


def test_ce_known_value():
    assert compute_loss(LossSpec("ce"), P90, ONEHOT) == pytest.approx(
        -np.log(0.9), abs=1e-9)


def test_ce_soft_targets_is_cross_entropy():
    soft = np.array([[0.975, 0.025]])
    expected = -(0.975 * np.log(0.9) + 0.025 * np.log(0.1))
    assert compute_loss(LossSpec("ce"), P90, soft) == pytest.approx(expected,
                                                                    abs=1e-9)


def test_focal_known_value():
    expected = (1 - 0.9) ** 2 * -np.log(0.9)
    assert compute_loss(LossSpec("focal"), P90, ONEHOT) == pytest.approx(
        expected, rel=1e-9)


def test_poly_known_value():
    expected = -np.log(0.9) + 1.0 * (1 - 0.9)
    assert compute_loss(LossSpec("poly"), P90, ONEHOT) == pytest.approx(
        expected, rel=1e-9)


def test_bi_tempered_limit_reduces_to_ce():
    rng = np.random.default_rng(0)
    logits = rng.standard_normal((6, 4))
    targets = np.eye(4)[rng.integers(0, 4, 6)]
    bt = compute_loss(LossSpec("bi_tempered", {"t1": 1.0, "t2": 1.0}),
                      logits, targets)
    ce = compute_loss(LossSpec("ce"), logits, targets)
    assert bt == pytest.approx(ce, abs=1e-6)


def test_bi_tempered_parameter_domain():
    with pytest.raises(LossError):
        LossSpec("bi_tempered", {"t1": 1.2, "t2": 1.3})


def test_logit_clip_inactive_below_tau():
    small = np.array([[0.3, -0.2, 0.1]])
    targets = np.array([[0.0, 1.0, 0.0]])
    lc = compute_loss(LossSpec("logit_clip", {"tau": 5.0}), small, targets)
    ce = compute_loss(LossSpec("ce"), small, targets)
    assert lc == pytest.approx(ce, abs=1e-12)


def test_logit_clip_active_changes_loss():
    big = np.array([[30.0, -20.0, 1.0]])
    targets = np.array([[1.0, 0.0, 0.0]])
    lc = compute_loss(LossSpec("logit_clip", {"tau": 1.0}), big, targets)
    scaled = big / np.linalg.norm(big)
    ce = compute_loss(LossSpec("ce"), scaled, targets)
    assert lc == pytest.approx(ce, rel=1e-9)


def test_nan_logits_rejected():
    with pytest.raises(LossError):
        compute_loss(LossSpec("ce"), np.array([[np.nan, 0.0]]), ONEHOT)


def test_unknown_kind_rejected():
    with pytest.raises(LossError):
        LossSpec("dice")


@pytest.mark.parametrize("kind,params", [
    ("ce", {}), ("ls", {"alpha": 0.1}), ("poly", {"epsilon": 1.0}),
    ("focal", {"gamma": 2.0}), ("bi_tempered", {}), ("logit_clip", {"tau": 1.0}),
])
def test_gradient_matches_finite_differences(kind, params):
    rng = np.random.default_rng(1)
    logits = rng.standard_normal((5, 4)) * 2
    targets = np.eye(4)[rng.integers(0, 4, 5)]
    soft = 0.8 * targets + 0.05
    for T in (targets, soft):
        spec = LossSpec(kind, params)
        _, grad = loss_and_grad(spec, logits, T)
        h = 1e-6
        for _ in range(6):
            i = tuple(rng.integers(0, s) for s in logits.shape)
            up = logits.copy(); up[i] += h
            dn = logits.copy(); dn[i] -= h
            fd = (compute_loss(spec, up, T) - compute_loss(spec, dn, T)) / (2 * h)
            assert grad[i] == pytest.approx(fd, rel=1e-4, abs=1e-9)


def test_mixup_lambda_extremes_and_rows():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((8, 2, 16))
    T = np.eye(4)[rng.integers(0, 4, 8)]
    xm, tm = mixup_batch(X, T, 0.2, 3)
    np.testing.assert_allclose(tm.sum(axis=1), 1.0, atol=1e-12)
    # convexity: mixed inputs stay within elementwise min/max of the pair
    assert xm.min() >= X.min() - 1e-12 and xm.max() <= X.max() + 1e-12


def test_mixup_deterministic_given_seed():
    X = np.random.default_rng(0).standard_normal((4, 1, 8))
    T = np.eye(2)[[0, 1, 0, 1]]
    a = mixup_batch(X, T, 0.2, 11)
    b = mixup_batch(X, T, 0.2, 11)
    np.testing.assert_array_equal(a[0], b[0])
    with pytest.raises(LossError):
        mixup_batch(X[:1], T[:1], 0.2, 0)


def test_mixup_pairing_is_convex_combination():
    # lambda known: reconstruct from outputs using constant targets trick
    X = np.arange(6, dtype=float).reshape(3, 1, 2)
    T = np.eye(3)
    xm, tm = mixup_batch(X, T, 5.0, seed_or_rng=np.random.default_rng(5))
    # every mixed target row must be lam * e_i + (1 - lam) * e_j
    for row in tm:
        nonzero = row[row > 1e-12]
        assert nonzero.sum() == pytest.approx(1.0)
        assert len(nonzero) in (1, 2)
