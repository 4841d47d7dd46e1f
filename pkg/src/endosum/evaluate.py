"""Scoring a set of diagnostic summaries against ground-truth findings.

Matching is greedy one-to-one within a +/-300 s window, after a conflict
pass that invalidates temporally close entries carrying different labels.
Lesion-, keyframe-, and patient-level metrics are pooled over the corpus;
temporal-stability statistics (short-range label inconsistency, label-switch
intervals, paired signed-rank comparison) sit alongside them.

Undefined metrics (zero denominators) are reported as absent (None), never
as 0.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .model import AnnotationSet, DataError, DiagnosticSummary

DEFAULT_WINDOW_SEC = 300.0
DEFAULT_CONFLICT_WINDOW_SEC = 20.0
DEFAULT_TAU_GRID_SEC = (30.0, 60.0, 120.0, 300.0, 600.0)

MATCHED_CORRECT = "matched_correct"
MATCHED_WRONG_LABEL = "matched_wrong_label"
CONFLICT_INVALID = "conflict_invalid"
REDUNDANT = "redundant"
UNMATCHED = "unmatched"


@dataclass(frozen=True)
class MarkedSummary:
    summary: DiagnosticSummary
    conflict_flags: tuple[bool, ...]

    def __post_init__(self):
        if len(self.conflict_flags) != len(self.summary.entries):
            raise DataError("conflict flags must align with summary entries")


@dataclass(frozen=True)
class EntryOutcome:
    status: str
    finding_index: Optional[int] = None
    time_error_sec: Optional[float] = None


@dataclass(frozen=True)
class MatchResult:
    """Per-patient matching outcome: one row per selected entry plus the
    finding-side view needed by the lesion metrics."""

    patient_id: str
    num_findings: int
    entries: tuple[EntryOutcome, ...]
    finding_entry: tuple[Optional[int], ...]   # entry index matched to each finding
    finding_correct: tuple[bool, ...]

    def count(self, status: str) -> int:
        return sum(1 for e in self.entries if e.status == status)


def apply_conflict_rule(
    summary: DiagnosticSummary,
    conflict_window_sec: float = DEFAULT_CONFLICT_WINDOW_SEC,
) -> MarkedSummary:
    """Flag every pair of entries within the window that disagree on label.

    Flagged entries stay in the selected count but cannot participate in
    matching; both sides of each conflicting pair are flagged.
    """
    entries = summary.entries
    flags = [False] * len(entries)
    for i in range(len(entries)):
        for j in range(i + 1, len(entries)):
            dt = entries[j].timestamp_sec - entries[i].timestamp_sec
            if dt > conflict_window_sec:
                break  # entries are time-sorted
            if entries[i].label.id != entries[j].label.id:
                flags[i] = True
                flags[j] = True
    return MarkedSummary(summary=summary, conflict_flags=tuple(flags))


def greedy_match(
    marked: MarkedSummary,
    annotations: AnnotationSet,
    window_sec: float = DEFAULT_WINDOW_SEC,
) -> MatchResult:
    """Greedy one-to-one assignment of eligible entries to findings.

    All in-window (entry, finding) pairs are visited in ascending order of
    absolute time error (ties: earlier entry, then lower finding index);
    a pair is accepted when both sides are still unused. Leftover eligible
    entries in range of an already-used finding are redundant; the rest are
    unmatched.
    """
    entries = marked.summary.entries
    findings = annotations.findings

    pairs = []
    for ei, entry in enumerate(entries):
        if marked.conflict_flags[ei]:
            continue
        for fi, finding in enumerate(findings):
            dt = abs(entry.timestamp_sec - finding.keyframe_timestamp_sec)
            if dt <= window_sec:
                pairs.append((dt, ei, fi))
    pairs.sort()

    entry_used = [False] * len(entries)
    finding_entry: list[Optional[int]] = [None] * len(findings)
    finding_correct = [False] * len(findings)
    outcomes: list[Optional[EntryOutcome]] = [None] * len(entries)

    for dt, ei, fi in pairs:
        if entry_used[ei] or finding_entry[fi] is not None:
            continue
        entry_used[ei] = True
        finding_entry[fi] = ei
        correct = entries[ei].label.id == findings[fi].label.id
        finding_correct[fi] = correct
        outcomes[ei] = EntryOutcome(
            status=MATCHED_CORRECT if correct else MATCHED_WRONG_LABEL,
            finding_index=fi,
            time_error_sec=dt,
        )

    for ei, entry in enumerate(entries):
        if outcomes[ei] is not None:
            continue
        if marked.conflict_flags[ei]:
            outcomes[ei] = EntryOutcome(status=CONFLICT_INVALID)
            continue
        in_range_of_used = any(
            abs(entry.timestamp_sec - findings[fi].keyframe_timestamp_sec) <= window_sec
            for fi in range(len(findings))
        )
        outcomes[ei] = EntryOutcome(status=REDUNDANT if in_range_of_used else UNMATCHED)

    return MatchResult(
        patient_id=marked.summary.patient_id,
        num_findings=len(findings),
        entries=tuple(outcomes),
        finding_entry=tuple(finding_entry),
        finding_correct=tuple(finding_correct),
    )


# ------------------------------------------------------------------ metrics

def lesion_metrics(results: Sequence[MatchResult]):
    """(detection rate, sensitivity, specificity), pooled over findings/entries.

    Detection rate counts findings matched with the correct label;
    sensitivity counts findings matched regardless of label; specificity is
    correct entries over unique predicted findings (matched + unmatched +
    conflict-invalid, i.e. everything selected except redundant duplicates).
    """
    total_findings = sum(r.num_findings for r in results)
    matched_any = sum(1 for r in results for e in r.finding_entry if e is not None)
    matched_correct = sum(1 for r in results for ok in r.finding_correct if ok)

    unique_predicted = sum(
        r.count(MATCHED_CORRECT) + r.count(MATCHED_WRONG_LABEL)
        + r.count(UNMATCHED) + r.count(CONFLICT_INVALID)
        for r in results
    )
    correct_entries = sum(r.count(MATCHED_CORRECT) for r in results)

    ldr = matched_correct / total_findings if total_findings else None
    sensitivity = matched_any / total_findings if total_findings else None
    specificity = correct_entries / unique_predicted if unique_predicted else None
    return ldr, sensitivity, specificity


def keyframe_metrics(results: Sequence[MatchResult]):
    """(mean time error over correct matches, pooled redundancy)."""
    errors = [
        e.time_error_sec for r in results for e in r.entries
        if e.status == MATCHED_CORRECT
    ]
    mean_error = float(np.mean(errors)) if errors else None

    selected = sum(len(r.entries) for r in results)
    matched = sum(
        r.count(MATCHED_CORRECT) + r.count(MATCHED_WRONG_LABEL) for r in results
    )
    redundancy = (selected - matched) / selected if selected else None
    return mean_error, redundancy


def patient_metrics(results: Sequence[MatchResult]):
    """(diagnostic yield, per-patient detection rate) over all patients."""
    if not results:
        return None, None
    full = sum(1 for r in results if r.num_findings > 0 and all(r.finding_correct))
    # a patient with zero findings cannot have "all findings detected" credit
    any_correct = sum(1 for r in results if any(r.finding_correct))
    n = len(results)
    return full / n, any_correct / n


# ------------------------------------------------- temporal stability stats

def inconsistency_counts(summary: DiagnosticSummary, tau_sec: float) -> tuple[int, int]:
    """(differing, qualifying) consecutive-pair counts at threshold tau."""
    entries = summary.entries
    differing = qualifying = 0
    for a, b in zip(entries, entries[1:]):
        if b.timestamp_sec - a.timestamp_sec <= tau_sec:
            qualifying += 1
            if a.label.id != b.label.id:
                differing += 1
    return differing, qualifying


def inconsistency_rate(summary: DiagnosticSummary, tau_sec: float) -> Optional[float]:
    """Fraction of consecutive close-in-time entry pairs with differing labels.

    Absent (None) when no consecutive pair qualifies at tau.
    """
    differing, qualifying = inconsistency_counts(summary, tau_sec)
    return differing / qualifying if qualifying else None


def pooled_inconsistency_rate(
    summaries: Sequence[DiagnosticSummary], tau_sec: float
) -> Optional[float]:
    diff = qual = 0
    for s in summaries:
        d, q = inconsistency_counts(s, tau_sec)
        diff += d
        qual += q
    return diff / qual if qual else None


def switch_intervals(summary: DiagnosticSummary) -> list[float]:
    """Time gaps between consecutive entries whose labels differ."""
    return [
        b.timestamp_sec - a.timestamp_sec
        for a, b in zip(summary.entries, summary.entries[1:])
        if a.label.id != b.label.id
    ]


@dataclass(frozen=True)
class SwitchStats:
    intervals: tuple[float, ...]   # sorted ascending
    count: int

    def cdf(self, x: float) -> Optional[float]:
        if not self.intervals:
            return None
        return sum(1 for v in self.intervals if v <= x) / len(self.intervals)


def switch_interval_cdf(summaries: Sequence[DiagnosticSummary]) -> SwitchStats:
    intervals: list[float] = []
    for s in summaries:
        intervals.extend(switch_intervals(s))
    intervals.sort()
    return SwitchStats(intervals=tuple(intervals), count=len(intervals))


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: Optional[float]
    p_value: Optional[float]
    n_nonzero: int
    conclusive: bool


def wilcoxon_signed_rank(a: Sequence[float], b: Sequence[float]) -> WilcoxonResult:
    """Paired two-sided signed-rank test with a normal approximation.

    Zero differences are discarded; ranks of tied magnitudes are averaged;
    the p-value uses the continuity-corrected normal approximation with tie
    correction. Fewer than 6 non-zero differences is reported inconclusive.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError("paired samples must have equal length")
    d = a - b
    d = d[d != 0.0]
    n = d.size
    if n < 6:
        return WilcoxonResult(statistic=None, p_value=None, n_nonzero=n, conclusive=False)

    mags = np.abs(d)
    order = np.argsort(mags, kind="stable")
    ranks = np.empty(n, dtype=np.float64)
    sorted_mags = mags[order]
    i = 0
    while i < n:
        j = i
        while j + 1 < n and sorted_mags[j + 1] == sorted_mags[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0   # average rank of the tie run
        i = j + 1

    w_plus = float(ranks[d > 0].sum())
    w_minus = n * (n + 1) / 2.0 - w_plus
    w = min(w_plus, w_minus)

    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    _, tie_counts = np.unique(mags, return_counts=True)
    var -= float(np.sum(tie_counts ** 3 - tie_counts)) / 48.0
    if var <= 0:
        return WilcoxonResult(statistic=w, p_value=None, n_nonzero=n, conclusive=False)

    z = (w - mean + 0.5) / math.sqrt(var)   # w <= mean, correct toward center
    p = min(1.0, 2.0 * 0.5 * math.erfc(-z / math.sqrt(2.0)))
    return WilcoxonResult(statistic=w, p_value=p, n_nonzero=n, conclusive=True)


# ------------------------------------------------------------------- report

@dataclass(frozen=True)
class EvalReport:
    ldr: Optional[float]
    sensitivity: Optional[float]
    specificity: Optional[float]
    mean_time_error_sec: Optional[float]
    redundancy: Optional[float]
    diagnostic_yield: Optional[float]
    per_patient_detection_rate: Optional[float]
    inconsistency: dict            # tau (seconds, as str key) -> rate or None
    switch_intervals: tuple[float, ...]
    switch_count: int
    counts: dict

    def to_json(self) -> str:
        doc = {
            "ldr": self.ldr,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "mean_time_error_sec": self.mean_time_error_sec,
            "redundancy": self.redundancy,
            "diagnostic_yield": self.diagnostic_yield,
            "per_patient_detection_rate": self.per_patient_detection_rate,
            "inconsistency": self.inconsistency,
            "switch_intervals": list(self.switch_intervals),
            "switch_count": self.switch_count,
            "counts": self.counts,
        }
        return json.dumps(doc, indent=2) + "\n"

    def format_table(self) -> str:
        def pct(v):
            return f"{100.0 * v:7.2f}" if v is not None else "      -"

        def sec(v):
            return f"{v:7.2f}" if v is not None else "      -"

        header = (
            "Detection Rate (%) | Sensitivity (%) | Specificity (%) | "
            "Time Error (s) | Redundancy (%) | Diagnostic Yield (%) | Detection Rate/pt (%)"
        )
        row = (
            f"{pct(self.ldr)}            | {pct(self.sensitivity)}         | "
            f"{pct(self.specificity)}         | {sec(self.mean_time_error_sec)}        | "
            f"{pct(self.redundancy)}        | {pct(self.diagnostic_yield)}              | "
            f"{pct(self.per_patient_detection_rate)}"
        )
        return header + "\n" + row + "\n"


def evaluate_corpus(
    pairs: Sequence[tuple[DiagnosticSummary, AnnotationSet]],
    window_sec: float = DEFAULT_WINDOW_SEC,
    conflict_window_sec: float = DEFAULT_CONFLICT_WINDOW_SEC,
    tau_grid_sec: Sequence[float] = DEFAULT_TAU_GRID_SEC,
) -> EvalReport:
    """Run conflict marking + matching per patient and pool every metric."""
    results = []
    summaries = []
    for summary, annotations in pairs:
        if summary.patient_id != annotations.patient_id:
            raise DataError(
                f"summary/annotation patient mismatch: {summary.patient_id} vs {annotations.patient_id}"
            )
        marked = apply_conflict_rule(summary, conflict_window_sec)
        results.append(greedy_match(marked, annotations, window_sec))
        summaries.append(summary)

    ldr, sensitivity, specificity = lesion_metrics(results)
    mean_error, redundancy = keyframe_metrics(results)
    dy, pdr = patient_metrics(results)
    stats = switch_interval_cdf(summaries)

    counts = {
        "num_patients": len(results),
        "num_findings": sum(r.num_findings for r in results),
        "num_selected": sum(len(r.entries) for r in results),
        "num_matched": sum(
            r.count(MATCHED_CORRECT) + r.count(MATCHED_WRONG_LABEL) for r in results
        ),
        "num_matched_correct": sum(r.count(MATCHED_CORRECT) for r in results),
        "num_conflict_invalid": sum(r.count(CONFLICT_INVALID) for r in results),
        "num_redundant": sum(r.count(REDUNDANT) for r in results),
        "num_unmatched": sum(r.count(UNMATCHED) for r in results),
    }
    return EvalReport(
        ldr=ldr,
        sensitivity=sensitivity,
        specificity=specificity,
        mean_time_error_sec=mean_error,
        redundancy=redundancy,
        diagnostic_yield=dy,
        per_patient_detection_rate=pdr,
        inconsistency={
            str(int(tau) if float(tau).is_integer() else tau):
                pooled_inconsistency_rate(summaries, tau)
            for tau in tau_grid_sec
        },
        switch_intervals=stats.intervals,
        switch_count=stats.count,
        counts=counts,
    )
