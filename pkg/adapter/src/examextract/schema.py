"""The examination file format this adapter emits.

One JSON header line carrying {patient_id, feature_dim, num_classes,
taxonomy}, then one frame record object per line with fields
{frame_index, timestamp_sec, feature[, lesion_dist]}. This mirrors the
summarization engine's documented JSON-Lines interface bit-compatibly; the
engine is never imported.
"""

import json

TAXONOMY_NAMES = (
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
NUM_CLASSES = len(TAXONOMY_NAMES)
NORMAL_NAME = "normal small intestinal mucosa"


def header_line(patient_id: str, feature_dim: int) -> str:
    return json.dumps({
        "patient_id": patient_id,
        "feature_dim": feature_dim,
        "num_classes": NUM_CLASSES,
        "taxonomy": [
            {"id": i, "name": name, "is_normal": name == NORMAL_NAME}
            for i, name in enumerate(TAXONOMY_NAMES)
        ],
    })


def frame_line(frame_index: int, timestamp_sec: float, feature, lesion_dist=None) -> str:
    obj = {
        "frame_index": int(frame_index),
        "timestamp_sec": float(timestamp_sec),
        "feature": [float(x) for x in feature],
    }
    if lesion_dist is not None:
        obj["lesion_dist"] = [float(x) for x in lesion_dist]
    return json.dumps(obj)
