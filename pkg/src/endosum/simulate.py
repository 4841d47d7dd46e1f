"""Seeded simulator for ultra-long examinations with sparse planted events.

The generator emulates the target regime: on the order of 10^5 frames per
examination with only a handful of diagnostically relevant bursts. Each
event is a contiguous run of frames whose features sit near a class
prototype; everything else sits near the normal prototype. A slow drift
makes temporally distant frames differ, per-frame diagnoser outputs come
from a row-stochastic confusion model, and two systematic corruption modes
live inside events: "blur" frames whose distribution is peaked on a fixed
wrong class, and "miss" frames the diagnoser confidently calls normal.

Everything is deterministic given the config seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import (
    AnnotationSet,
    ConfigError,
    DiagnosticSummary,
    ExamStream,
    Finding,
    FrameRecord,
    SummaryEntry,
    default_taxonomy,
    normal_label_id,
)

DRIFT_KNOT_FRAMES = 500


@dataclass(frozen=True)
class SimConfig:
    num_frames: int = 100_000
    frames_per_sec: float = 2.0
    num_events: int = 6
    event_duration_frames: tuple[int, int] = (80, 200)
    feature_dim: int = 384
    num_classes: int = 12
    sigma_vis: float = 0.4            # expected norm of the per-frame noise vector
    drift_rate: float = 0.003         # random-walk step scale at drift knots
    confusion: Optional[np.ndarray] = None   # row-stochastic (K, K); built if None
    confusion_noise: float = 0.2      # off-diagonal mass for lesion rows
    normal_confidence: float = 0.92   # diagonal mass of the normal row
    blur_fraction: float = 0.15       # event frames peaked on a fixed wrong class
    miss_fraction: float = 0.12       # event frames confidently called normal
    corrupt_peak: tuple[float, float] = (0.85, 0.95)
    dirichlet_strength: float = 0.1   # per-frame perturbation of honest rows
    paired_events: int = 4            # events planted as adjacent same-region pairs
    pair_gap_sec: tuple[float, float] = (45.0, 110.0)
    min_separation_sec: float = 1200.0
    max_event_fraction: float = 0.1
    world_seed: int = 12345           # fixes the class prototype geometry across exams
    seed: int = 0

    def validate(self) -> None:
        if self.num_frames <= 0:
            raise ConfigError("num_frames must be positive")
        if self.frames_per_sec <= 0:
            raise ConfigError("frames_per_sec must be positive")
        if self.num_events < 0:
            raise ConfigError("num_events must be >= 0")
        lo, hi = self.event_duration_frames
        if not (0 < lo <= hi):
            raise ConfigError(f"bad event_duration_frames ({lo}, {hi})")
        for name in ("blur_fraction", "miss_fraction", "confusion_noise"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        if self.blur_fraction + self.miss_fraction > 1.0:
            raise ConfigError("blur_fraction + miss_fraction may not exceed 1")
        if self.paired_events % 2 != 0 or self.paired_events < 0:
            raise ConfigError("paired_events must be a non-negative even count")
        if self.paired_events > self.num_events:
            raise ConfigError("paired_events may not exceed num_events")
        if self.confusion is not None:
            c = np.asarray(self.confusion)
            if c.shape != (self.num_classes, self.num_classes):
                raise ConfigError(f"confusion must be ({self.num_classes}, {self.num_classes})")
            if np.any(c < 0) or not np.allclose(c.sum(axis=1), 1.0, atol=1e-9):
                raise ConfigError("confusion rows must be non-negative and sum to 1")

    def effective_confusion(self, normal_id: int) -> np.ndarray:
        if self.confusion is not None:
            return np.asarray(self.confusion, dtype=np.float64)
        k = self.num_classes
        c = np.full((k, k), self.confusion_noise / (k - 1))
        np.fill_diagonal(c, 1.0 - self.confusion_noise)
        c[normal_id, :] = (1.0 - self.normal_confidence) / (k - 1)
        c[normal_id, normal_id] = self.normal_confidence
        return c


@dataclass(frozen=True)
class PlantedEvent:
    label_id: int
    start_frame: int
    end_frame: int            # inclusive
    keyframe_timestamp_sec: float


@dataclass(frozen=True)
class GroundTruth:
    frame_labels: np.ndarray          # (num_frames,) true label ids
    events: tuple[PlantedEvent, ...]
    blur_mask: np.ndarray             # frames with wrong-class corruption
    miss_mask: np.ndarray             # frames diagnosed confidently normal

    def __post_init__(self):
        for name in ("frame_labels", "blur_mask", "miss_mask"):
            arr = np.asarray(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


def _prototypes(rng: np.random.Generator, k: int, d: int) -> np.ndarray:
    protos = rng.standard_normal((k, d))
    return protos / np.linalg.norm(protos, axis=1, keepdims=True)


def _place_events(cfg: SimConfig, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Non-overlapping (start, end) frame spans; some events form close pairs."""
    if cfg.num_events == 0:
        return []
    lo, hi = cfg.event_duration_frames
    durations = rng.integers(lo, hi + 1, size=cfg.num_events)
    n_pairs = cfg.paired_events // 2
    gap_frames = [
        int(round(rng.uniform(*cfg.pair_gap_sec) * cfg.frames_per_sec))
        for _ in range(n_pairs)
    ]

    # group = one single event or one adjacent pair; paired findings share
    # one duration draw (nearby lesions of comparable extent)
    groups: list[list[int]] = []   # durations per group, pairs first
    di = 0
    for p in range(n_pairs):
        groups.append([int(durations[di]), int(durations[di])])
        di += 2
    while di < cfg.num_events:
        groups.append([int(durations[di])])
        di += 1

    group_span = []
    for gi, g in enumerate(groups):
        span = sum(g) + (gap_frames[gi] if len(g) == 2 else 0)
        group_span.append(span)

    sep = int(np.ceil(cfg.min_separation_sec * cfg.frames_per_sec))
    needed = sum(group_span) + sep * (len(groups) + 1)
    if needed > cfg.num_frames:
        raise ConfigError(
            f"cannot place {cfg.num_events} events in {cfg.num_frames} frames "
            f"with min separation {cfg.min_separation_sec}s (need {needed})"
        )

    # spread the slack over the leading/separating gaps
    slack = cfg.num_frames - needed
    weights = rng.dirichlet(np.ones(len(groups) + 1))
    extra = np.floor(weights * slack).astype(int)

    spans: list[tuple[int, int]] = []
    cursor = 0
    for gi, g in enumerate(groups):
        cursor += sep + int(extra[gi])
        start = cursor
        spans.append((start, start + g[0] - 1))
        cursor = start + g[0]
        if len(g) == 2:
            cursor += gap_frames[gi]
            spans.append((cursor, cursor + g[1] - 1))
            cursor += g[1]
    return spans


def generate_exam(
    cfg: SimConfig, patient_id: str = "sim-0000"
) -> tuple[ExamStream, AnnotationSet, GroundTruth]:
    """Build one synthetic examination plus its ground truth."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    taxonomy = default_taxonomy() if cfg.num_classes == 12 else _generic_taxonomy(cfg.num_classes)
    normal_id = normal_label_id(taxonomy)
    k, d, n = cfg.num_classes, cfg.feature_dim, cfg.num_frames

    # one shared embedding geometry for every exam of the same world
    protos = _prototypes(np.random.default_rng(cfg.world_seed), k, d)
    spans = _place_events(cfg, rng)
    event_frames_total = sum(e - s + 1 for s, e in spans)
    if n > 0 and event_frames_total / n > cfg.max_event_fraction:
        raise ConfigError(
            f"planted events cover {event_frames_total / n:.3f} of the stream, "
            f"above max_event_fraction={cfg.max_event_fraction}"
        )

    lesion_ids = [i for i in range(k) if i != normal_id]
    labels = np.full(n, normal_id, dtype=np.int64)
    events: list[PlantedEvent] = []
    prev_label = -1
    for start, end in spans:
        lid = int(rng.choice(lesion_ids))
        if lid == prev_label:   # adjacent pairs must show distinct findings
            lid = int(rng.choice([x for x in lesion_ids if x != prev_label]))
        labels[start:end + 1] = lid
        t_mid = 0.5 * (start + end) / cfg.frames_per_sec
        events.append(PlantedEvent(lid, start, end, t_mid))
        prev_label = lid

    # features: prototype of the true label + slow drift + isotropic noise
    feats = protos[labels].copy()
    feats += _drift(rng, n, d, cfg.drift_rate)
    feats += rng.standard_normal((n, d)) * (cfg.sigma_vis / np.sqrt(d))

    # honest diagnoser output: confusion row + simplex perturbation
    confusion = cfg.effective_confusion(normal_id)
    eps = cfg.dirichlet_strength
    dists = confusion[labels]
    if eps > 0:
        dists = (dists + eps * rng.dirichlet(np.ones(k), size=n)) / (1.0 + eps)

    blur_mask = np.zeros(n, dtype=bool)
    miss_mask = np.zeros(n, dtype=bool)
    for ev in events:
        span = np.arange(ev.start_frame, ev.end_frame + 1)
        m = span.size
        n_blur = int(round(cfg.blur_fraction * m))
        n_miss = int(round(cfg.miss_fraction * m))
        picked = rng.choice(span, size=min(n_blur + n_miss, m), replace=False)
        blur_idx, miss_idx = picked[:n_blur], picked[n_blur:]
        wrong = int(rng.choice([x for x in lesion_ids if x != ev.label_id]))
        for idx_set, cls in ((blur_idx, wrong), (miss_idx, normal_id)):
            for t in idx_set:
                peak = rng.uniform(*cfg.corrupt_peak)
                row = np.full(k, (1.0 - peak) / (k - 1))
                row[cls] = peak
                dists[t] = row
        blur_mask[blur_idx] = True
        miss_mask[miss_idx] = True

    timestamps = np.arange(n, dtype=np.float64) / cfg.frames_per_sec
    frames = tuple(
        FrameRecord(
            frame_index=int(i),
            timestamp_sec=float(timestamps[i]),
            feature=feats[i],
            lesion_dist=dists[i],
        )
        for i in range(n)
    )
    stream = ExamStream(
        patient_id=patient_id,
        frames=frames,
        feature_dim=d,
        num_classes=k,
        taxonomy=tuple(taxonomy),
    )
    annotations = AnnotationSet(
        patient_id=patient_id,
        findings=tuple(
            Finding(label=taxonomy[ev.label_id], keyframe_timestamp_sec=ev.keyframe_timestamp_sec)
            for ev in events
        ),
    )
    truth = GroundTruth(
        frame_labels=labels,
        events=tuple(events),
        blur_mask=blur_mask,
        miss_mask=miss_mask,
    )
    return stream, annotations, truth


def _drift(rng: np.random.Generator, n: int, d: int, rate: float) -> np.ndarray:
    """Slow random walk sampled at knots and linearly interpolated."""
    if rate <= 0 or n == 0:
        return np.zeros((n, d))
    n_knots = max(2, n // DRIFT_KNOT_FRAMES + 2)
    knots = np.cumsum(rng.standard_normal((n_knots, d)) * rate, axis=0)
    pos = np.linspace(0.0, n_knots - 1.0, num=n)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_knots - 1)
    frac = (pos - lo)[:, None]
    return knots[lo] * (1.0 - frac) + knots[hi] * frac


def _generic_taxonomy(k: int):
    from .model import LesionLabel
    labels = [LesionLabel(i, f"class-{i}") for i in range(k - 1)]
    labels.append(LesionLabel(k - 1, "normal", is_normal=True))
    return labels


# ------------------------------------------------------------------ baseline

def baseline_frame_by_frame(
    stream: ExamStream,
    tau: float = 0.5,
    suppression_window_sec: float = 10.0,
) -> DiagnosticSummary:
    """Per-frame comparator: threshold the top non-normal probability, then
    keep only local maxima under a short suppression window."""
    normal_id = normal_label_id(stream.taxonomy)
    if not stream.frames:
        return DiagnosticSummary(patient_id=stream.patient_id, entries=())
    dists = stream.dist_matrix()
    masked = dists.copy()
    masked[:, normal_id] = -1.0
    top = masked.max(axis=1)
    top_label = masked.argmax(axis=1)

    cand = np.flatnonzero((top >= tau) & (top > 0.0))
    order = sorted(cand.tolist(), key=lambda i: (-top[i], i))
    times = [stream.frames[i].timestamp_sec for i in range(len(stream.frames))]

    accepted: list[int] = []
    accepted_times: list[float] = []
    for i in order:
        t = times[i]
        if any(abs(t - at) <= suppression_window_sec for at in accepted_times):
            continue
        accepted.append(i)
        accepted_times.append(t)

    accepted.sort()
    entries = tuple(
        SummaryEntry(
            timestamp_sec=times[i],
            frame_index=stream.frames[i].frame_index,
            label=stream.taxonomy[int(top_label[i])],
            confidence=float(top[i]),
            coarse_id=pos,
            fine_id=0,
        )
        for pos, i in enumerate(accepted)
    )
    return DiagnosticSummary(patient_id=stream.patient_id, entries=entries)


# -------------------------------------------------------- training material

def selector_training_set(
    stream: ExamStream,
    truth: GroundTruth,
    normal_id: int,
    negatives_per_positive: float = 3.0,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Balanced-ish (features, binary labels) drawn from one simulated exam.

    Positives are every event frame; negatives are a seeded subsample of the
    normal frames.
    """
    feats = stream.feature_matrix()
    pos_idx = np.flatnonzero(truth.frame_labels != normal_id)
    neg_pool = np.flatnonzero(truth.frame_labels == normal_id)
    rng = np.random.default_rng(seed)
    n_neg = min(len(neg_pool), int(round(negatives_per_positive * len(pos_idx))))
    neg_idx = rng.choice(neg_pool, size=n_neg, replace=False) if n_neg else np.array([], dtype=int)
    idx = np.concatenate([pos_idx, neg_idx])
    labels = np.concatenate([np.ones(len(pos_idx)), np.zeros(len(neg_idx))])
    order = rng.permutation(len(idx))
    return feats[idx[order]], labels[order]
