"""On-disk formats.

An examination is a JSON-Lines file: one header object carrying stream
metadata, then one frame record object per line. Annotation sets and
diagnostic summaries are single JSON documents. Field names mirror the
domain types exactly and unknown fields are rejected.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Iterable, Union

from .model import (
    AnnotationSet,
    DataError,
    DiagnosticSummary,
    ExamStream,
    Finding,
    FrameRecord,
    LesionLabel,
    SummaryEntry,
)

PathLike = Union[str, Path]

_HEADER_FIELDS = {"patient_id", "feature_dim", "num_classes", "taxonomy"}
_FRAME_FIELDS = {"frame_index", "timestamp_sec", "feature", "lesion_dist", "selector_score"}
_LABEL_FIELDS = {"id", "name", "is_normal"}
_FINDING_FIELDS = {"label", "keyframe_timestamp_sec"}
_ENTRY_FIELDS = {"timestamp_sec", "frame_index", "label", "confidence", "coarse_id", "fine_id"}


def _check_fields(obj: dict, allowed: set, required: set, what: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise DataError(f"{what}: unknown fields {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise DataError(f"{what}: missing fields {sorted(missing)}")


def _label_to_json(label: LesionLabel) -> dict:
    return {"id": label.id, "name": label.name, "is_normal": label.is_normal}


def _label_from_json(obj: dict, what: str) -> LesionLabel:
    _check_fields(obj, _LABEL_FIELDS, {"id", "name"}, what)
    return LesionLabel(int(obj["id"]), str(obj["name"]), bool(obj.get("is_normal", False)))


def atomic_write_text(path: PathLike, text: str) -> None:
    """Write-then-rename so readers never observe a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


# ---------------------------------------------------------------- exam JSONL

def exam_to_jsonl(stream: ExamStream) -> str:
    header = {
        "patient_id": stream.patient_id,
        "feature_dim": stream.feature_dim,
        "num_classes": stream.num_classes,
        "taxonomy": [_label_to_json(lab) for lab in stream.taxonomy],
    }
    lines = [json.dumps(header)]
    for rec in stream.frames:
        obj = {
            "frame_index": rec.frame_index,
            "timestamp_sec": rec.timestamp_sec,
            "feature": rec.feature.tolist(),
        }
        if rec.lesion_dist is not None:
            obj["lesion_dist"] = rec.lesion_dist.tolist()
        if rec.selector_score is not None:
            obj["selector_score"] = rec.selector_score
        lines.append(json.dumps(obj))
    return "\n".join(lines) + "\n"


def write_exam(stream: ExamStream, path: PathLike) -> None:
    atomic_write_text(path, exam_to_jsonl(stream))


def exam_from_lines(lines: Iterable[str]) -> ExamStream:
    it = iter(lines)
    try:
        header_line = next(it)
    except StopIteration:
        raise DataError("exam file is empty; expected a header line") from None
    header = json.loads(header_line)
    _check_fields(header, _HEADER_FIELDS, _HEADER_FIELDS, "exam header")

    taxonomy = tuple(
        _label_from_json(obj, f"taxonomy[{i}]") for i, obj in enumerate(header["taxonomy"])
    )
    frames = []
    for lineno, line in enumerate(it, start=2):
        line = line.strip()
        if not line:
            continue
        obj = json.loads(line)
        _check_fields(obj, _FRAME_FIELDS, {"frame_index", "timestamp_sec", "feature"},
                      f"frame record (line {lineno})")
        frames.append(FrameRecord(
            frame_index=int(obj["frame_index"]),
            timestamp_sec=float(obj["timestamp_sec"]),
            feature=obj["feature"],
            lesion_dist=obj.get("lesion_dist"),
            selector_score=obj.get("selector_score"),
        ))
    return ExamStream(
        patient_id=str(header["patient_id"]),
        frames=tuple(frames),
        feature_dim=int(header["feature_dim"]),
        num_classes=int(header["num_classes"]),
        taxonomy=taxonomy,
    )


def read_exam(path: PathLike) -> ExamStream:
    with open(path, "r", encoding="utf-8") as fh:
        return exam_from_lines(fh)


# ------------------------------------------------------- annotations (JSON)

def annotations_to_json(annotations: AnnotationSet) -> str:
    doc = {
        "patient_id": annotations.patient_id,
        "findings": [
            {"label": _label_to_json(f.label), "keyframe_timestamp_sec": f.keyframe_timestamp_sec}
            for f in annotations.findings
        ],
    }
    return json.dumps(doc, indent=2) + "\n"


def write_annotations(annotations: AnnotationSet, path: PathLike) -> None:
    atomic_write_text(path, annotations_to_json(annotations))


def annotations_from_json(text: str) -> AnnotationSet:
    doc = json.loads(text)
    _check_fields(doc, {"patient_id", "findings"}, {"patient_id", "findings"}, "annotation set")
    findings = []
    for i, obj in enumerate(doc["findings"]):
        _check_fields(obj, _FINDING_FIELDS, _FINDING_FIELDS, f"finding[{i}]")
        findings.append(Finding(
            label=_label_from_json(obj["label"], f"finding[{i}].label"),
            keyframe_timestamp_sec=float(obj["keyframe_timestamp_sec"]),
        ))
    return AnnotationSet(patient_id=str(doc["patient_id"]), findings=tuple(findings))


def read_annotations(path: PathLike) -> AnnotationSet:
    return annotations_from_json(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------- summary (JSON)

def summary_to_json(summary: DiagnosticSummary) -> str:
    doc = {
        "patient_id": summary.patient_id,
        "entries": [
            {
                "timestamp_sec": e.timestamp_sec,
                "frame_index": e.frame_index,
                "label": _label_to_json(e.label),
                "confidence": e.confidence,
                "coarse_id": e.coarse_id,
                "fine_id": e.fine_id,
            }
            for e in summary.entries
        ],
    }
    return json.dumps(doc, indent=2) + "\n"


def write_summary(summary: DiagnosticSummary, path: PathLike) -> None:
    atomic_write_text(path, summary_to_json(summary))


def summary_from_json(text: str) -> DiagnosticSummary:
    doc = json.loads(text)
    _check_fields(doc, {"patient_id", "entries"}, {"patient_id", "entries"}, "summary")
    entries = []
    for i, obj in enumerate(doc["entries"]):
        _check_fields(obj, _ENTRY_FIELDS, _ENTRY_FIELDS, f"entry[{i}]")
        entries.append(SummaryEntry(
            timestamp_sec=float(obj["timestamp_sec"]),
            frame_index=int(obj["frame_index"]),
            label=_label_from_json(obj["label"], f"entry[{i}].label"),
            confidence=float(obj["confidence"]),
            coarse_id=int(obj["coarse_id"]),
            fine_id=int(obj["fine_id"]),
        ))
    return DiagnosticSummary(patient_id=str(doc["patient_id"]), entries=tuple(entries))


def read_summary(path: PathLike) -> DiagnosticSummary:
    return summary_from_json(Path(path).read_text(encoding="utf-8"))
