import math

import numpy as np
import pytest

from endosum.model import DataError, ExamStream, FrameRecord, LesionLabel
from endosum.selector import (
    SelectorHead,
    bce_loss_and_grad,
    head_from_json,
    head_to_json,
    init_head,
    score_batch,
    score_frame,
    screen,
    train_head,
)


def zero_head(d=3, h=4):
    return SelectorHead(w1=np.zeros((h, d)), b1=np.zeros(h), w2=np.zeros((1, h)), b2=0.0)


def random_head(rng, d, h):
    return SelectorHead(
        w1=rng.standard_normal((h, d)),
        b1=rng.standard_normal(h),
        w2=rng.standard_normal((1, h)),
        b2=float(rng.standard_normal()),
    )


def tiny_stream(features):
    taxonomy = (LesionLabel(0, "a"), LesionLabel(1, "normal", is_normal=True))
    frames = tuple(
        FrameRecord(i, float(i), np.asarray(f, dtype=float))
        for i, f in enumerate(features)
    )
    return ExamStream("p0", frames, feature_dim=len(features[0]), num_classes=2,
                      taxonomy=taxonomy)


def test_zero_head_scores_half():
    head = zero_head()
    assert score_frame(head, np.array([1.0, -2.0, 3.0])) == pytest.approx(0.5)


def test_hand_set_head_closed_form():
    head = SelectorHead(w1=np.array([[1.0]]), b1=np.array([0.0]),
                        w2=np.array([[2.0]]), b2=0.0)
    s = score_frame(head, np.array([1.0]))
    assert s == pytest.approx(1.0 / (1.0 + math.exp(-2.0)), abs=1e-12)


def test_score_rejects_dim_mismatch():
    with pytest.raises(DataError):
        score_frame(zero_head(d=3), np.zeros(5))


def test_scores_strictly_inside_unit_interval():
    rng = np.random.default_rng(0)
    head = random_head(rng, 6, 8)
    feats = rng.standard_normal((200, 6)) * 50.0
    s = score_batch(head, feats)
    assert np.all(s > 0.0) and np.all(s < 1.0)


def test_screen_tau_zero_keeps_everything():
    stream = tiny_stream(np.random.default_rng(1).standard_normal((10, 3)))
    cand = screen(stream, zero_head(), tau_s=0.0)
    assert list(cand.indices) == list(range(10))
    assert len(cand.scores) == 10


def test_screen_tau_one_keeps_generically_nothing():
    stream = tiny_stream(np.random.default_rng(2).standard_normal((10, 3)))
    rng = np.random.default_rng(3)
    cand = screen(stream, random_head(rng, 3, 4), tau_s=1.0)
    assert len(cand) == 0


def test_screen_rejects_bad_tau():
    stream = tiny_stream(np.zeros((2, 3)))
    with pytest.raises(DataError):
        screen(stream, zero_head(), tau_s=1.5)


def test_screen_monotone_in_threshold():
    rng = np.random.default_rng(4)
    stream = tiny_stream(rng.standard_normal((50, 3)))
    head = random_head(rng, 3, 4)
    for _ in range(200):
        lo, hi = sorted(rng.uniform(0, 1, size=2))
        keep_hi = set(screen(stream, head, hi).indices)
        keep_lo = set(screen(stream, head, lo).indices)
        assert keep_hi <= keep_lo


def test_screen_preserves_order_no_duplicates():
    rng = np.random.default_rng(5)
    stream = tiny_stream(rng.standard_normal((60, 3)))
    cand = screen(stream, random_head(rng, 3, 8), tau_s=0.4)
    assert list(cand.indices) == sorted(set(cand.indices))


# --------------------------------------------------------------------- loss

def test_bce_zero_head_single_positive_is_ln2():
    head = zero_head(d=2, h=3)
    loss, _ = bce_loss_and_grad(head, np.array([[0.3, -0.4]]), np.array([1.0]))
    assert loss == pytest.approx(math.log(2.0), abs=1e-12)


def test_bce_perfect_fit_near_zero():
    # drive the output saturated-correct with a huge final layer
    head = SelectorHead(w1=np.array([[100.0]]), b1=np.array([0.0]),
                        w2=np.array([[100.0]]), b2=-50.0)
    loss, grads = bce_loss_and_grad(head, np.array([[2.0]]), np.array([1.0]))
    assert loss < 1e-8
    assert abs(grads["b2"]) < 1e-8


def test_bce_loss_non_negative():
    rng = np.random.default_rng(6)
    for _ in range(50):
        head = random_head(rng, 4, 5)
        feats = rng.standard_normal((8, 4))
        labels = rng.integers(0, 2, size=8).astype(float)
        loss, _ = bce_loss_and_grad(head, feats, labels)
        assert loss >= 0.0


def pack(head):
    return np.concatenate([head.w1.ravel(), head.b1, head.w2.ravel(), [head.b2]])


def unpack_into(head, theta):
    h, d = head.w1.shape
    head.w1 = theta[:h * d].reshape(h, d)
    head.b1 = theta[h * d:h * d + h].copy()
    head.w2 = theta[h * d + h:h * d + h + h].reshape(1, h)
    head.b2 = float(theta[-1])


def finite_difference_grad(head, feats, labels, step=1e-5):
    theta = pack(head)
    grad = np.zeros_like(theta)
    probe = SelectorHead(head.w1.copy(), head.b1.copy(), head.w2.copy(), head.b2)
    for i in range(theta.size):
        tp = theta.copy(); tp[i] += step
        unpack_into(probe, tp)
        lp, _ = bce_loss_and_grad(probe, feats, labels)
        tm = theta.copy(); tm[i] -= step
        unpack_into(probe, tm)
        lm, _ = bce_loss_and_grad(probe, feats, labels)
        grad[i] = (lp - lm) / (2.0 * step)
    return grad


def test_gradient_matches_central_differences():
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(100):
        d = int(rng.integers(2, 6))
        h = int(rng.integers(2, 6))
        n = int(rng.integers(1, 7))
        head = random_head(rng, d, h)
        feats = rng.standard_normal((n, d))
        labels = rng.integers(0, 2, size=n).astype(float)
        _, grads = bce_loss_and_grad(head, feats, labels)
        analytic = np.concatenate([
            grads["w1"].ravel(), grads["b1"], grads["w2"].ravel(), [grads["b2"]],
        ])
        numeric = finite_difference_grad(head, feats, labels)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
        rel = np.abs(analytic - numeric) / denom
        worst = max(worst, float(rel.max()))
    assert worst < 1e-4, f"worst relative error {worst}"


# ----------------------------------------------------------------- training

def separable_toy_set(n=80, seed=0):
    rng = np.random.default_rng(seed)
    pos = rng.normal(loc=(2.0, 2.0), scale=0.3, size=(n // 2, 2))
    neg = rng.normal(loc=(-2.0, -2.0), scale=0.3, size=(n // 2, 2))
    feats = np.vstack([pos, neg])
    labels = np.concatenate([np.ones(n // 2), np.zeros(n // 2)])
    return feats, labels


def test_train_on_separable_toy_reaches_full_accuracy():
    feats, labels = separable_toy_set()
    head = train_head(feats, labels, hidden_dim=8, epochs=400, learning_rate=0.5, seed=1)
    preds = (score_batch(head, feats) >= 0.5).astype(float)
    assert np.array_equal(preds, labels)
    assert head.final_loss < 0.1


def test_train_zero_epochs_returns_seeded_init():
    feats, labels = separable_toy_set()
    trained = train_head(feats, labels, hidden_dim=8, epochs=0, seed=9)
    fresh = init_head(2, 8, seed=9)
    assert np.array_equal(trained.w1, fresh.w1)
    assert np.array_equal(trained.b1, fresh.b1)
    assert np.array_equal(trained.w2, fresh.w2)
    assert trained.b2 == fresh.b2


def test_train_requires_both_classes():
    feats = np.random.default_rng(0).standard_normal((10, 2))
    with pytest.raises(DataError):
        train_head(feats, np.ones(10), epochs=5)


def test_train_deterministic_given_seed():
    feats, labels = separable_toy_set()
    a = train_head(feats, labels, hidden_dim=8, epochs=50, seed=3, batch_size=16)
    b = train_head(feats, labels, hidden_dim=8, epochs=50, seed=3, batch_size=16)
    assert np.array_equal(a.w1, b.w1) and a.b2 == b.b2


def test_head_json_roundtrip():
    feats, labels = separable_toy_set()
    head = train_head(feats, labels, hidden_dim=4, epochs=20, seed=2)
    back = head_from_json(head_to_json(head))
    assert np.array_equal(back.w1, head.w1)
    assert np.array_equal(back.b1, head.b1)
    assert np.array_equal(back.w2, head.w2)
    assert back.b2 == head.b2
    assert back.seed == head.seed
    assert back.epochs_trained == head.epochs_trained
    assert back.final_loss == head.final_loss
