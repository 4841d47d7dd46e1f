"""Turn each fine lesion context into one robust diagnosis.

Per context: sum the member frames' lesion distributions into an evidence
vector, take the provisional argmax, drop members that disagree with it
(falling back to the whole context if that empties it), re-sum and re-argmax,
then prune contexts that end up normal or low-confidence. The keyframe for
each survivor is the medoid of the retained members in visual feature space.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import DataError, DiagnosticSummary, ExamStream, SummaryEntry, normal_label_id
from .weaver import ContextHierarchy, FineContext

DEFAULT_TAU_AGREE = 0.4
DEFAULT_TAU_MIN = 0.5


@dataclass(frozen=True)
class ContextEvidence:
    """Evidence trail for one fine context, from fusion through refinement."""

    coarse_id: int
    fine_id: int
    evidence: np.ndarray            # unnormalized class-mass vector (K,)
    provisional_label_id: int
    retained: tuple[int, ...]       # frame indices kept after the agreement check
    refined_evidence: np.ndarray    # (K,)
    label_id: int
    confidence: float               # peak of L1-normalized refined evidence

    def __post_init__(self):
        for name in ("evidence", "refined_evidence"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "retained", tuple(self.retained))
        if not self.retained:
            raise DataError("retained member list may not be empty")
        if not (0.0 < self.confidence <= 1.0):
            raise DataError(f"confidence {self.confidence} outside (0, 1]")


def _argmax_lowest_id(vec: np.ndarray) -> int:
    # np.argmax already returns the first (lowest) index on ties
    return int(np.argmax(vec))


def fuse_evidence(context: FineContext, dists: dict[int, np.ndarray]) -> tuple[np.ndarray, int]:
    """Sum member distributions into the context evidence vector.

    Returns (evidence, provisional label id); argmax ties break to the
    lowest class id. Every member must carry a distribution.
    """
    missing = [m for m in context.members if m not in dists or dists[m] is None]
    if missing:
        raise DataError(f"context {context.id}: members without lesion distribution: {missing[:5]}")
    evidence = np.sum([dists[m] for m in context.members], axis=0, dtype=np.float64)
    return evidence, _argmax_lowest_id(evidence)


def refine_context(
    context: FineContext,
    dists: dict[int, np.ndarray],
    provisional_label_id: int,
    tau_agree: float = DEFAULT_TAU_AGREE,
) -> tuple[int, ...]:
    """Keep members agreeing with the provisional label at tau_agree.

    Falls back to the full context when no member passes, so the retained
    set is never empty.
    """
    if not (0.0 <= tau_agree <= 1.0):
        raise DataError(f"tau_agree must be in [0, 1], got {tau_agree}")
    kept = tuple(m for m in context.members if dists[m][provisional_label_id] >= tau_agree)
    return kept if kept else tuple(context.members)


def refined_prediction(
    retained: Sequence[int],
    dists: dict[int, np.ndarray],
) -> tuple[np.ndarray, int, float]:
    """Re-fuse the retained members and read off (evidence, label, confidence)."""
    if not retained:
        raise DataError("retained member list may not be empty")
    refined = np.sum([dists[m] for m in retained], axis=0, dtype=np.float64)
    label_id = _argmax_lowest_id(refined)
    total = float(refined.sum())
    if total <= 0:
        raise DataError("refined evidence has no mass")
    confidence = float(refined[label_id] / total)
    return refined, label_id, confidence


def converge_context(
    context: FineContext,
    dists: dict[int, np.ndarray],
    tau_agree: float = DEFAULT_TAU_AGREE,
) -> ContextEvidence:
    evidence, provisional = fuse_evidence(context, dists)
    retained = refine_context(context, dists, provisional, tau_agree)
    refined, label_id, confidence = refined_prediction(retained, dists)
    return ContextEvidence(
        coarse_id=context.coarse_id,
        fine_id=context.fine_id,
        evidence=evidence,
        provisional_label_id=provisional,
        retained=retained,
        refined_evidence=refined,
        label_id=label_id,
        confidence=confidence,
    )


def prune_contexts(
    evidences: Sequence[ContextEvidence],
    normal_id: int,
    tau_min: float = DEFAULT_TAU_MIN,
) -> list[ContextEvidence]:
    """Drop contexts whose final label is normal or whose confidence < tau_min."""
    if not (0.0 <= tau_min <= 1.0):
        raise DataError(f"tau_min must be in [0, 1], got {tau_min}")
    return [e for e in evidences if e.label_id != normal_id and e.confidence >= tau_min]


def select_medoid(
    retained: Sequence[int],
    features: dict[int, np.ndarray],
    timestamps: dict[int, float],
    metric: str = "euclidean",
) -> int:
    """Member minimizing total distance to the others in visual feature space.

    Distances are taken on raw frame features. Ties break to the earliest
    timestamp (then lowest frame index).
    """
    if not retained:
        raise DataError("cannot take the medoid of an empty member list")
    if len(retained) == 1:
        return retained[0]
    mat = np.stack([features[m] for m in retained]).astype(np.float64)
    n = mat.shape[0]
    totals = np.empty(n)
    if metric == "euclidean":
        # row-wise so distances are exactly symmetric (ties must be real ties)
        for i in range(n):
            diff = mat - mat[i]
            totals[i] = np.sqrt(np.sum(diff * diff, axis=1)).sum()
    elif metric == "cosine":
        norms = np.linalg.norm(mat, axis=1, keepdims=True)
        safe = np.where(norms > 0, norms, 1.0)
        unit = mat / safe
        for i in range(n):
            totals[i] = (1.0 - unit @ unit[i]).sum()
    else:
        raise DataError(f"unknown medoid metric {metric!r}")
    order = sorted(
        range(len(retained)),
        key=lambda p: (totals[p], timestamps[retained[p]], retained[p]),
    )
    return retained[order[0]]


def assemble_summary(
    survivors: Sequence[ContextEvidence],
    stream: ExamStream,
    medoid_metric: str = "euclidean",
) -> DiagnosticSummary:
    """One summary entry per surviving context, sorted by keyframe time.

    The entry count tracks the data; there is no fixed output budget.
    """
    features = {f.frame_index: f.feature for f in stream.frames}
    timestamps = {f.frame_index: f.timestamp_sec for f in stream.frames}
    taxonomy = stream.taxonomy

    entries = []
    for ev in survivors:
        key = select_medoid(ev.retained, features, timestamps, metric=medoid_metric)
        entries.append(SummaryEntry(
            timestamp_sec=timestamps[key],
            frame_index=key,
            label=taxonomy[ev.label_id],
            confidence=ev.confidence,
            coarse_id=ev.coarse_id,
            fine_id=ev.fine_id,
        ))
    entries.sort(key=lambda e: (e.timestamp_sec, e.frame_index))
    return DiagnosticSummary(patient_id=stream.patient_id, entries=tuple(entries))


def converge(
    hierarchy: ContextHierarchy,
    stream: ExamStream,
    tau_agree: float = DEFAULT_TAU_AGREE,
    tau_min: float = DEFAULT_TAU_MIN,
    medoid_metric: str = "euclidean",
) -> DiagnosticSummary:
    """Fusion, refinement, pruning and assembly over a full hierarchy."""
    dists = {f.frame_index: f.lesion_dist for f in stream.frames}
    normal_id = normal_label_id(stream.taxonomy)
    evidences = [converge_context(c, dists, tau_agree) for c in hierarchy.fine]
    survivors = prune_contexts(evidences, normal_id, tau_min)
    return assemble_summary(survivors, stream, medoid_metric=medoid_metric)
