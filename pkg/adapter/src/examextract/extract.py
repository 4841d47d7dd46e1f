"""Video to examination records: decode, sample by stride, encode, emit."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .encoders import get_classifier, get_encoder
from .schema import frame_line, header_line

BATCH_FRAMES = 64


class ExtractionError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExtractionManifest:
    video_path: str
    encoder: str = "grid8"
    stride: int = 1
    classifier: Optional[str] = None
    patient_id: Optional[str] = None   # defaults to the video stem

    def validate(self) -> None:
        if self.stride < 1:
            raise ExtractionError(f"stride must be >= 1, got {self.stride}")
        if not Path(self.video_path).exists():
            raise ExtractionError(f"video not found: {self.video_path}")


def iter_video_frames(path: str):
    """Yield (frame_number, rgb_frame) for every frame of the container."""
    import cv2
    cap = cv2.VideoCapture(path)
    if not cap.isOpened():
        raise ExtractionError(f"unreadable video: {path}")
    fps = cap.get(cv2.CAP_PROP_FPS)
    if not fps or fps <= 0:
        cap.release()
        raise ExtractionError(f"video {path} reports no frame rate")
    idx = 0
    try:
        while True:
            ok, frame = cap.read()
            if not ok:
                break
            yield idx, fps, cv2.cvtColor(frame, cv2.COLOR_BGR2RGB)
            idx += 1
    finally:
        cap.release()


def extract(manifest: ExtractionManifest) -> str:
    """Run the manifest and return the examination file as JSON-Lines text."""
    manifest.validate()
    encoder = get_encoder(manifest.encoder)
    patient_id = manifest.patient_id or Path(manifest.video_path).stem

    sampled = []
    fps = None
    for idx, fps, rgb in iter_video_frames(manifest.video_path):
        if idx % manifest.stride == 0:
            sampled.append((idx, rgb))
    if not sampled:
        raise ExtractionError(f"video {manifest.video_path} contains no frames")

    classifier = (get_classifier(manifest.classifier, encoder.dim)
                  if manifest.classifier else None)

    lines = [header_line(patient_id, encoder.dim)]
    for start in range(0, len(sampled), BATCH_FRAMES):
        chunk = sampled[start:start + BATCH_FRAMES]
        frames = np.stack([rgb for _, rgb in chunk])
        feats = encoder.encode(frames)
        if feats.shape != (len(chunk), encoder.dim):
            raise ExtractionError(
                f"encoder {manifest.encoder!r} produced shape {feats.shape}, "
                f"declared dim {encoder.dim}"
            )
        dists = classifier.predict(feats) if classifier else None
        for row, (idx, _) in enumerate(chunk):
            lines.append(frame_line(
                frame_index=idx,
                timestamp_sec=idx / fps,
                feature=feats[row],
                lesion_dist=None if dists is None else dists[row],
            ))
    return "\n".join(lines) + "\n"


def extract_to_file(manifest: ExtractionManifest, out_path) -> int:
    """Extract and atomically write; returns the number of frame records."""
    text = extract(manifest)
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = out.with_name(out.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, out)
    return text.count("\n") - 1
