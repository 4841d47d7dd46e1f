"""Core domain types shared by every stage of the summarization pipeline.

All types are immutable after construction and safe to share across workers.
Frame identity is the integer frame index; the temporal coordinate is the
timestamp in seconds (float64). Lesion distributions live on frames, class
metadata (K, d) lives on the stream.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

DEFAULT_FEATURE_DIM = 384
DEFAULT_NUM_CLASSES = 12

# Clinical reporting taxonomy, in canonical order. The last entry is the
# "no finding" class; summaries and annotations must never carry it.
_TAXONOMY_NAMES = (
    "ulcer",
    "erosion",
    "angioectasia",
    "mucosal erythema",
    "eminence lesion",
    "hematocele",
    "lymphangiectasia",
    "lymphoid follicular hyperplasia",
    "polyp",
    "parasite",
    "intestinal fluid accumulation",
    "normal small intestinal mucosa",
)
NORMAL_LABEL_NAME = "normal small intestinal mucosa"

DIST_SUM_TOL = 1e-6


class DataError(ValueError):
    """Raised when an input value breaks a hard structural contract."""


class ConfigError(ValueError):
    """Raised when a configuration value is out of range or inconsistent."""


@dataclass(frozen=True, order=True)
class LesionLabel:
    id: int
    name: str
    is_normal: bool = False

    def __post_init__(self):
        if self.id < 0:
            raise DataError(f"label id must be >= 0, got {self.id}")


def default_taxonomy() -> list[LesionLabel]:
    """The 12-class lesion taxonomy with dense ids 0..11.

    Exactly one label (the last) is flagged as the normal class.
    """
    return [
        LesionLabel(i, name, is_normal=(name == NORMAL_LABEL_NAME))
        for i, name in enumerate(_TAXONOMY_NAMES)
    ]


def normal_label_id(taxonomy: Sequence[LesionLabel]) -> int:
    normals = [lab.id for lab in taxonomy if lab.is_normal]
    if len(normals) != 1:
        raise DataError(f"taxonomy must have exactly one normal label, found {len(normals)}")
    return normals[0]


def _frozen_array(values, dtype=np.float64) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class FrameRecord:
    """One frame of an examination.

    feature is the visual feature vector u of length d; lesion_dist, when
    present, is a probability vector over the K lesion classes.
    """

    frame_index: int
    timestamp_sec: float
    feature: np.ndarray
    lesion_dist: Optional[np.ndarray] = None
    selector_score: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "feature", _frozen_array(self.feature))
        if self.lesion_dist is not None:
            object.__setattr__(self, "lesion_dist", _frozen_array(self.lesion_dist))


@dataclass(frozen=True)
class ExamStream:
    """A full examination: ordered frame records plus per-stream metadata."""

    patient_id: str
    frames: tuple[FrameRecord, ...]
    feature_dim: int = DEFAULT_FEATURE_DIM
    num_classes: int = DEFAULT_NUM_CLASSES
    taxonomy: tuple[LesionLabel, ...] = field(default_factory=lambda: tuple(default_taxonomy()))

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        object.__setattr__(self, "taxonomy", tuple(self.taxonomy))

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def duration_sec(self) -> float:
        if not self.frames:
            return 0.0
        return self.frames[-1].timestamp_sec - self.frames[0].timestamp_sec

    def feature_matrix(self) -> np.ndarray:
        """All frame features stacked as an (n, d) array."""
        if not self.frames:
            return np.zeros((0, self.feature_dim))
        return np.stack([f.feature for f in self.frames])

    def dist_matrix(self) -> np.ndarray:
        """All lesion distributions stacked as (n, K); raises if any missing."""
        missing = [f.frame_index for f in self.frames if f.lesion_dist is None]
        if missing:
            raise DataError(f"frames without lesion distribution: {missing[:5]}...")
        return np.stack([f.lesion_dist for f in self.frames])

    def has_distributions(self) -> bool:
        return all(f.lesion_dist is not None for f in self.frames)


@dataclass(frozen=True)
class Finding:
    label: LesionLabel
    keyframe_timestamp_sec: float


@dataclass(frozen=True)
class AnnotationSet:
    """Ground-truth findings for one patient: (label, diagnostic keyframe time)."""

    patient_id: str
    findings: tuple[Finding, ...]

    def __post_init__(self):
        object.__setattr__(self, "findings", tuple(self.findings))
        for f in self.findings:
            if f.label.is_normal:
                raise DataError("annotations may not carry the normal label")


@dataclass(frozen=True)
class SummaryEntry:
    timestamp_sec: float
    frame_index: int
    label: LesionLabel
    confidence: float
    coarse_id: int
    fine_id: int


@dataclass(frozen=True)
class DiagnosticSummary:
    """The pipeline's principal output: one (keyframe, label) entry per finding."""

    patient_id: str
    entries: tuple[SummaryEntry, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        for e in self.entries:
            if e.label.is_normal:
                raise DataError("summary entries may not carry the normal label")
            if not (0.0 < e.confidence <= 1.0):
                raise DataError(f"entry confidence {e.confidence} outside (0, 1]")
        times = [e.timestamp_sec for e in self.entries]
        if times != sorted(times):
            raise DataError("summary entries must be sorted by timestamp")


def validate_stream(stream: ExamStream) -> list[str]:
    """Check every stream invariant and report violations as strings.

    Returns an empty list iff the stream is fully valid. Violations are data,
    not failures; each message names the offending frame index and the rule.
    """
    violations: list[str] = []
    d, k = stream.feature_dim, stream.num_classes

    if len(stream.taxonomy) != k:
        violations.append(f"stream: taxonomy has {len(stream.taxonomy)} labels, num_classes={k}")
    else:
        ids = [lab.id for lab in stream.taxonomy]
        if ids != list(range(k)):
            violations.append("stream: taxonomy ids are not dense 0..K-1")
        if sum(lab.is_normal for lab in stream.taxonomy) != 1:
            violations.append("stream: taxonomy must flag exactly one normal label")

    prev_index = None
    prev_time = None
    for rec in stream.frames:
        t = rec.frame_index
        if prev_index is not None and t <= prev_index:
            violations.append(f"frame {t}: frame_index not strictly increasing")
        if rec.timestamp_sec < 0:
            violations.append(f"frame {t}: negative timestamp {rec.timestamp_sec}")
        if prev_time is not None and rec.timestamp_sec < prev_time:
            violations.append(f"frame {t}: timestamp decreases ({rec.timestamp_sec} < {prev_time})")
        if rec.feature.shape != (d,):
            violations.append(f"frame {t}: feature length {rec.feature.shape} != ({d},)")
        elif not np.all(np.isfinite(rec.feature)):
            violations.append(f"frame {t}: non-finite feature values")
        if rec.lesion_dist is not None:
            if rec.lesion_dist.shape != (k,):
                violations.append(f"frame {t}: lesion_dist length {rec.lesion_dist.shape} != ({k},)")
            else:
                if np.any(rec.lesion_dist < 0):
                    violations.append(f"frame {t}: lesion_dist has negative entries")
                s = float(rec.lesion_dist.sum())
                if abs(s - 1.0) > DIST_SUM_TOL:
                    violations.append(f"frame {t}: lesion_dist sums to {s:.8f}, not 1")
        if rec.selector_score is not None and not (0.0 <= rec.selector_score <= 1.0):
            violations.append(f"frame {t}: selector_score {rec.selector_score} outside [0, 1]")
        prev_index, prev_time = t, rec.timestamp_sec
    return violations


def validate_annotations(annotations: AnnotationSet, stream: ExamStream) -> list[str]:
    """Check annotation timestamps against the exam's time range."""
    violations = []
    if stream.frames:
        t0 = stream.frames[0].timestamp_sec
        t1 = stream.frames[-1].timestamp_sec
        for i, f in enumerate(annotations.findings):
            if not (t0 <= f.keyframe_timestamp_sec <= t1):
                violations.append(
                    f"finding {i}: keyframe time {f.keyframe_timestamp_sec} outside [{t0}, {t1}]"
                )
    return violations
