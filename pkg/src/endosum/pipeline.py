"""End-to-end orchestration: screen, tokenize, weave, converge.

Also hosts the two ablation variants used for controlled comparisons:
`no_weaver` replaces the hierarchy with fixed absolute 300 s bins over the
candidates, and `no_converger` labels each fine context by its single
highest-confidence frame instead of fused evidence. Streams lacking lesion
distributions are screened and woven only, yielding an empty summary plus
the hierarchy.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
import numpy as np

from .config import RunConfig
from .converger import converge
from .model import ConfigError, DiagnosticSummary, ExamStream, SummaryEntry, normal_label_id
from .selector import SelectorHead, screen, train_head
from .simulate import SimConfig, generate_exam, selector_training_set
from .tokens import tokenize
from .weaver import build_hierarchy, CoarseContext, ContextHierarchy, FineContext

VARIANTS = ("full", "no_weaver", "no_converger")
NO_WEAVER_BIN_SEC = 300.0

TRAIN_SEED_OFFSET = 777_000   # keeps training exams disjoint from evaluation exams


@dataclass
class SummarizeStats:
    patient_id: str
    num_frames: int
    num_candidates: int
    num_coarse: int
    num_fine: int
    num_entries: int
    elapsed_sec: float
    has_distributions: bool


def summarize_stream(
    stream: ExamStream,
    head: SelectorHead,
    cfg: RunConfig,
    variant: str = "full",
) -> tuple[DiagnosticSummary, ContextHierarchy, SummarizeStats]:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    t0 = time.perf_counter()

    candidates = screen(stream, head, cfg.tau_s)
    tokens = tokenize(
        candidates,
        stream,
        lambda_time=cfg.lambda_time,
        base=cfg.sinusoid_base,
        time_scale_sec=cfg.time_scale_sec,
        position_source=cfg.position_source,
        normalize_visual=cfg.normalize_visual,
    )

    if variant == "no_weaver":
        hierarchy = _fixed_bin_hierarchy(tokens, NO_WEAVER_BIN_SEC)
    else:
        hierarchy = build_hierarchy(
            tokens,
            sigma_coarse=cfg.sigma_coarse,
            sigma_fine=cfg.sigma_fine,
            gap_max_sec=cfg.gap_max_sec,
        )

    if not stream.has_distributions():
        summary = DiagnosticSummary(patient_id=stream.patient_id, entries=())
    elif variant == "no_converger":
        summary = _single_frame_converge(hierarchy, stream, cfg.tau_min)
    else:
        summary = converge(
            hierarchy, stream,
            tau_agree=cfg.tau_agree,
            tau_min=cfg.tau_min,
            medoid_metric=cfg.medoid_metric,
        )

    stats = SummarizeStats(
        patient_id=stream.patient_id,
        num_frames=len(stream),
        num_candidates=len(candidates),
        num_coarse=len(hierarchy.coarse),
        num_fine=len(hierarchy.fine),
        num_entries=len(summary.entries),
        elapsed_sec=time.perf_counter() - t0,
        has_distributions=stream.has_distributions(),
    )
    return summary, hierarchy, stats


def _fixed_bin_hierarchy(tokens, bin_sec: float) -> ContextHierarchy:
    """Absolute fixed-width time bins over the candidates; one fine context
    per bin. The no-hierarchy comparison point."""
    coarse: list[CoarseContext] = []
    fine: list[FineContext] = []
    if tokens:
        bins: dict[int, list] = {}
        for t in tokens:
            bins.setdefault(int(t.timestamp_sec // bin_sec), []).append(t)
        for cid, key in enumerate(sorted(bins)):
            chunk = bins[key]
            coarse.append(CoarseContext(
                id=cid,
                members=tuple(tok.frame_index for tok in chunk),
                t_start=chunk[0].timestamp_sec,
                t_end=chunk[-1].timestamp_sec,
            ))
            fine.append(FineContext(
                coarse_id=cid, fine_id=0,
                members=tuple(tok.frame_index for tok in chunk),
            ))
    return ContextHierarchy(
        coarse=tuple(coarse), fine=tuple(fine),
        provenance={"variant": "no_weaver", "bin_sec": bin_sec},
    )


def _single_frame_converge(
    hierarchy: ContextHierarchy, stream: ExamStream, tau_min: float
) -> DiagnosticSummary:
    """Label each context by its most confident member frame alone."""
    normal_id = normal_label_id(stream.taxonomy)
    by_index = {f.frame_index: f for f in stream.frames}

    entries = []
    for ctx in hierarchy.fine:
        best = None
        for m in ctx.members:
            rec = by_index[m]
            top = float(np.max(rec.lesion_dist))
            # highest confidence wins; ties go to the earliest frame
            if best is None or top > best[0]:
                best = (top, rec)
        top, rec = best
        label_id = int(np.argmax(rec.lesion_dist))
        if label_id == normal_id or top < tau_min:
            continue
        entries.append(SummaryEntry(
            timestamp_sec=rec.timestamp_sec,
            frame_index=rec.frame_index,
            label=stream.taxonomy[label_id],
            confidence=top,
            coarse_id=ctx.coarse_id,
            fine_id=ctx.fine_id,
        ))
    entries.sort(key=lambda e: (e.timestamp_sec, e.frame_index))
    return DiagnosticSummary(patient_id=stream.patient_id, entries=tuple(entries))


# ----------------------------------------------------------------- training

def training_sim_config(cfg: RunConfig, index: int) -> SimConfig:
    from dataclasses import replace
    return replace(cfg.sim, seed=cfg.sim.seed + TRAIN_SEED_OFFSET + index)


def train_selector(cfg: RunConfig) -> SelectorHead:
    """Train the screening head on simulated, labeled examinations."""
    feats = []
    labels = []
    for i in range(cfg.train_exams):
        sim = training_sim_config(cfg, i)
        stream, _, truth = generate_exam(sim, patient_id=f"train-{i:04d}")
        normal_id = normal_label_id(stream.taxonomy)
        f, y = selector_training_set(
            stream, truth, normal_id,
            negatives_per_positive=cfg.negatives_per_positive,
            seed=cfg.seed + i,
        )
        feats.append(f)
        labels.append(y)
    features = np.concatenate(feats)
    targets = np.concatenate(labels)
    return train_head(
        features, targets,
        hidden_dim=cfg.hidden_dim,
        epochs=cfg.epochs,
        learning_rate=cfg.learning_rate,
        batch_size=cfg.batch_size,
        seed=cfg.seed,
    )
