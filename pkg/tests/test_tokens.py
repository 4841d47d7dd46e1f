import numpy as np
import pytest

from endosum.model import DataError, ExamStream, FrameRecord, LesionLabel
from endosum.selector import CandidateSet
from endosum.tokens import temporal_embedding, tokenize, token_matrix


def stream_from(features, times=None):
    taxonomy = (LesionLabel(0, "a"), LesionLabel(1, "normal", is_normal=True))
    times = times if times is not None else [float(i) for i in range(len(features))]
    frames = tuple(
        FrameRecord(i, t, np.asarray(f, dtype=float))
        for i, (t, f) in enumerate(zip(times, features))
    )
    return ExamStream("p0", frames, feature_dim=len(features[0]), num_classes=2,
                      taxonomy=taxonomy)


def test_embedding_position_zero_alternates():
    e = temporal_embedding(0.0, 8)
    assert np.array_equal(e, np.array([0, 1, 0, 1, 0, 1, 0, 1], dtype=float))


def test_embedding_unit_pairs_sum_to_half_d():
    for pos in (0.0, 1.3, 977.0, 1e6):
        for d in (2, 6, 384):
            e = temporal_embedding(pos, d)
            assert np.sum(e * e) == pytest.approx(d / 2.0, abs=1e-9)


def test_embedding_lowest_frequency_closed_form():
    e = temporal_embedding(np.pi, 4)
    assert e[0] == pytest.approx(0.0, abs=1e-12)   # sin(pi)
    assert e[1] == pytest.approx(-1.0, abs=1e-12)  # cos(pi)


def test_embedding_rejects_odd_dim():
    with pytest.raises(DataError):
        temporal_embedding(1.0, 5)


def test_embedding_rejects_negative_position():
    with pytest.raises(DataError):
        temporal_embedding(-1.0, 4)


def test_tokenize_lambda_zero_temporal_half_vanishes():
    stream = stream_from(np.random.default_rng(0).standard_normal((4, 6)))
    cand = CandidateSet(indices=(0, 1, 2, 3), tau_s=0.0)
    tokens = tokenize(cand, stream, lambda_time=0.0)
    for t in tokens:
        assert np.array_equal(t.vector[6:], np.zeros(6))


def test_tokenize_distant_identical_frames_diverge():
    feat = np.random.default_rng(1).standard_normal(6)
    stream = stream_from([feat, feat], times=[0.0, 10_000.0])
    cand = CandidateSet(indices=(0, 1), tau_s=0.0)
    a, b = tokenize(cand, stream, lambda_time=1.0)
    cos = float(a.vector @ b.vector / (np.linalg.norm(a.vector) * np.linalg.norm(b.vector)))
    assert cos < 1.0 - 1e-6


def test_tokenize_single_candidate_identity_visual_half():
    feat = np.random.default_rng(2).standard_normal(6)
    feat /= np.linalg.norm(feat)   # unit norm: normalization is the identity
    stream = stream_from([feat])
    (tok,) = tokenize(CandidateSet(indices=(0,), tau_s=0.0), stream)
    assert tok.dim == 12
    assert np.allclose(tok.vector[:6], feat, atol=1e-12)


def test_tokenize_unnormalized_visual_copied_exactly():
    feat = 3.7 * np.random.default_rng(3).standard_normal(6)
    stream = stream_from([feat])
    (tok,) = tokenize(CandidateSet(indices=(0,), tau_s=0.0), stream,
                      normalize_visual=False)
    assert np.array_equal(tok.vector[:6], feat)


def test_tokenize_deterministic():
    rng = np.random.default_rng(4)
    stream = stream_from(rng.standard_normal((5, 6)))
    cand = CandidateSet(indices=(0, 2, 4), tau_s=0.0)
    a = token_matrix(tokenize(cand, stream))
    b = token_matrix(tokenize(cand, stream))
    assert np.array_equal(a, b)


def test_temporal_half_norm_scales_with_lambda():
    rng = np.random.default_rng(5)
    stream = stream_from(rng.standard_normal((3, 8)), times=[0.0, 55.0, 1234.5])
    for lam in (0.05, 0.7, 1.0):
        tokens = tokenize(CandidateSet(indices=(0, 1, 2), tau_s=0.0), stream,
                          lambda_time=lam)
        for t in tokens:
            norm_sq = float(np.sum(t.vector[8:] ** 2))
            assert norm_sq == pytest.approx(lam * lam * 8 / 2.0, rel=1e-12)


def test_tokenize_position_source_frame_index():
    feat = np.ones(4)
    stream = stream_from([feat, feat], times=[0.0, 0.0])
    toks = tokenize(CandidateSet(indices=(0, 1), tau_s=0.0), stream,
                    position_source="frame_index", lambda_time=1.0)
    # same timestamp but different frame indices: temporal halves differ
    assert not np.array_equal(toks[0].vector[4:], toks[1].vector[4:])


def test_tokenize_missing_candidate_rejected():
    stream = stream_from(np.ones((2, 4)))
    with pytest.raises(DataError):
        tokenize(CandidateSet(indices=(5,), tau_s=0.0), stream)
