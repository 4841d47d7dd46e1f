"""Spatio-temporal tokens for candidate frames.

Each token concatenates the frame's visual feature with a scaled sinusoidal
embedding of its examination position, so downstream grouping can reason
about appearance and stream position jointly. Position defaults to the
timestamp in seconds divided by a time scale; frame-index positions are
available behind configuration for short or irregularly timed streams.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import DataError, ExamStream
from .selector import CandidateSet

DEFAULT_BASE = 10000.0
DEFAULT_TIME_SCALE_SEC = 60.0
DEFAULT_LAMBDA_TIME = 0.05


@dataclass(frozen=True)
class SpatioTemporalToken:
    frame_index: int
    timestamp_sec: float
    vector: np.ndarray  # length 2d: [visual half ; scaled temporal half]

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=np.float64)
        vec.setflags(write=False)
        object.__setattr__(self, "vector", vec)

    @property
    def dim(self) -> int:
        return self.vector.shape[0]


def temporal_embedding(position: float, d: int, base: float = DEFAULT_BASE) -> np.ndarray:
    """Sinusoidal position embedding of even length d.

    e[2i] = sin(position / base^(2i/d)), e[2i+1] = cos(position / base^(2i/d)).
    Every sin/cos pair has unit norm, so ||e||^2 = d/2 for any position.
    """
    if d % 2 != 0 or d <= 0:
        raise DataError(f"temporal embedding dim must be a positive even integer, got {d}")
    if base <= 1.0:
        raise DataError(f"base must exceed 1, got {base}")
    if position < 0:
        raise DataError(f"position must be non-negative, got {position}")
    i = np.arange(d // 2, dtype=np.float64)
    angles = position / np.power(base, 2.0 * i / d)
    e = np.empty(d, dtype=np.float64)
    e[0::2] = np.sin(angles)
    e[1::2] = np.cos(angles)
    return e


def _embedding_matrix(positions: np.ndarray, d: int, base: float) -> np.ndarray:
    i = np.arange(d // 2, dtype=np.float64)
    scales = np.power(base, 2.0 * i / d)
    angles = positions[:, None] / scales[None, :]
    out = np.empty((positions.shape[0], d), dtype=np.float64)
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out


def tokenize(
    candidates: CandidateSet,
    stream: ExamStream,
    lambda_time: float = DEFAULT_LAMBDA_TIME,
    base: float = DEFAULT_BASE,
    time_scale_sec: float = DEFAULT_TIME_SCALE_SEC,
    position_source: str = "seconds",
    normalize_visual: bool = True,
) -> list[SpatioTemporalToken]:
    """Build one token per candidate frame, preserving candidate order.

    The visual half is the frame feature (L2-normalized unless disabled);
    the temporal half is lambda_time times the sinusoidal embedding of the
    frame's position.
    """
    if position_source not in ("seconds", "frame_index"):
        raise DataError(f"unknown position_source {position_source!r}")
    if not candidates.indices:
        return []

    by_index = {f.frame_index: f for f in stream.frames}
    missing = [i for i in candidates.indices if i not in by_index]
    if missing:
        raise DataError(f"candidate frames not present in stream: {missing[:5]}")

    recs = [by_index[i] for i in candidates.indices]
    feats = np.stack([r.feature for r in recs]).astype(np.float64)
    if feats.shape[1] != stream.feature_dim:
        raise DataError("feature width does not match stream feature_dim")
    d = stream.feature_dim

    if normalize_visual:
        norms = np.linalg.norm(feats, axis=1, keepdims=True)
        nz = norms[:, 0] > 0
        feats = feats.copy()
        feats[nz] /= norms[nz]

    if position_source == "seconds":
        positions = np.array([r.timestamp_sec for r in recs]) / time_scale_sec
    else:
        positions = np.array([r.frame_index for r in recs], dtype=np.float64)
    temporal = lambda_time * _embedding_matrix(positions, d, base)

    vectors = np.concatenate([feats, temporal], axis=1)
    return [
        SpatioTemporalToken(frame_index=r.frame_index, timestamp_sec=r.timestamp_sec, vector=v)
        for r, v in zip(recs, vectors)
    ]


def token_matrix(tokens: Sequence[SpatioTemporalToken]) -> np.ndarray:
    if not tokens:
        return np.zeros((0, 0))
    return np.stack([t.vector for t in tokens])
