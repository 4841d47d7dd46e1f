"""Diagnosis-oriented summarization of ultra-long examination frame streams."""

from .model import (
    AnnotationSet,
    ConfigError,
    DataError,
    DiagnosticSummary,
    ExamStream,
    Finding,
    FrameRecord,
    LesionLabel,
    SummaryEntry,
    default_taxonomy,
    normal_label_id,
    validate_stream,
)

__version__ = "0.1.0"
