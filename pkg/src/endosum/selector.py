"""High-recall binary screening of the raw stream.

A one-hidden-layer perceptron head scores every frame; frames at or above
the screening threshold survive as the candidate set. The head is trained
from scratch with binary cross-entropy and plain gradient descent, so
training is deterministic given the seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .model import DataError, ExamStream

SCORE_EPS = 1e-12  # scores clamped to [eps, 1-eps] before any log

DEFAULT_HIDDEN_DIM = 64
DEFAULT_TAU_S = 0.5


class TrainingError(RuntimeError):
    pass


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # numerically stable on both tails
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class SelectorHead:
    """MLP screening head: rectifier hidden layer, logistic output."""

    w1: np.ndarray  # (h, d)
    b1: np.ndarray  # (h,)
    w2: np.ndarray  # (1, h)
    b2: float
    seed: Optional[int] = None
    epochs_trained: int = 0
    final_loss: Optional[float] = None

    def __post_init__(self):
        self.w1 = np.asarray(self.w1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64)
        self.w2 = np.asarray(self.w2, dtype=np.float64)
        self.b2 = float(self.b2)
        if not all(np.all(np.isfinite(a)) for a in (self.w1, self.b1, self.w2)):
            raise DataError("selector head has non-finite parameters")

    @property
    def input_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[0]

    def copy(self) -> "SelectorHead":
        return SelectorHead(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2,
                            self.seed, self.epochs_trained, self.final_loss)


def init_head(input_dim: int, hidden_dim: int = DEFAULT_HIDDEN_DIM, seed: int = 0) -> SelectorHead:
    """Seeded uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialization."""
    rng = np.random.default_rng(seed)
    lim1 = 1.0 / np.sqrt(input_dim)
    lim2 = 1.0 / np.sqrt(hidden_dim)
    return SelectorHead(
        w1=rng.uniform(-lim1, lim1, size=(hidden_dim, input_dim)),
        b1=rng.uniform(-lim1, lim1, size=hidden_dim),
        w2=rng.uniform(-lim2, lim2, size=(1, hidden_dim)),
        b2=float(rng.uniform(-lim2, lim2)),
        seed=seed,
    )


def score_batch(head: SelectorHead, features: np.ndarray) -> np.ndarray:
    """Scores for an (n, d) feature matrix, each strictly inside (0, 1)."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != head.input_dim:
        raise DataError(
            f"feature matrix shape {features.shape} incompatible with head input dim {head.input_dim}"
        )
    hidden = np.maximum(features @ head.w1.T + head.b1, 0.0)
    z = hidden @ head.w2.T + head.b2
    s = _sigmoid(z[:, 0])
    return np.clip(s, SCORE_EPS, 1.0 - SCORE_EPS)


def score_frame(head: SelectorHead, feature: np.ndarray) -> float:
    """Screening score for a single feature vector."""
    feature = np.asarray(feature, dtype=np.float64)
    if feature.shape != (head.input_dim,):
        raise DataError(f"feature shape {feature.shape} != ({head.input_dim},)")
    return float(score_batch(head, feature[None, :])[0])


@dataclass(frozen=True)
class CandidateSet:
    """Frames surviving screening, in stream order, with their scores."""

    indices: tuple[int, ...]
    tau_s: float
    scores: tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(self.indices))
        object.__setattr__(self, "scores", tuple(self.scores))
        if list(self.indices) != sorted(set(self.indices)):
            raise DataError("candidate indices must be sorted and unique")

    def __len__(self) -> int:
        return len(self.indices)


def screen(stream: ExamStream, head: SelectorHead, tau_s: float = DEFAULT_TAU_S) -> CandidateSet:
    """Retain exactly the frames whose score is >= tau_s, preserving order."""
    if not (0.0 <= tau_s <= 1.0):
        raise DataError(f"tau_s must be in [0, 1], got {tau_s}")
    if not stream.frames:
        return CandidateSet(indices=(), tau_s=tau_s)
    scores = score_batch(head, stream.feature_matrix())
    keep = scores >= tau_s
    indices = tuple(stream.frames[i].frame_index for i in np.flatnonzero(keep))
    return CandidateSet(indices=indices, tau_s=tau_s, scores=tuple(scores[keep].tolist()))


def bce_loss_and_grad(head: SelectorHead, features: np.ndarray, labels: np.ndarray):
    """Mean binary cross-entropy and its exact gradient for one batch.

    Returns (loss, grads) where grads is a dict with keys w1, b1, w2, b2
    shaped like the head parameters.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    n = features.shape[0]
    if n == 0:
        raise DataError("empty batch")

    z1 = features @ head.w1.T + head.b1        # (n, h)
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ head.w2.T + head.b2              # (n, 1)
    s = _sigmoid(z2[:, 0])

    sc = np.clip(s, SCORE_EPS, 1.0 - SCORE_EPS)
    loss = float(-np.mean(labels * np.log(sc) + (1.0 - labels) * np.log(1.0 - sc)))

    # logistic + BCE collapses to dL/dz2 = (s - y) / n
    dz2 = (s - labels)[:, None] / n            # (n, 1)
    dw2 = dz2.T @ a1                           # (1, h)
    db2 = float(dz2.sum())
    da1 = dz2 @ head.w2                        # (n, h)
    dz1 = da1 * (z1 > 0)
    dw1 = dz1.T @ features                     # (h, d)
    db1 = dz1.sum(axis=0)
    return loss, {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2}


def train_head(
    features: np.ndarray,
    labels: np.ndarray,
    hidden_dim: int = DEFAULT_HIDDEN_DIM,
    epochs: int = 300,
    learning_rate: float = 0.5,
    batch_size: int = 0,
    seed: int = 0,
) -> SelectorHead:
    """Gradient-descent training on (feature, binary-label) pairs.

    batch_size 0 means full batch. Deterministic for a fixed seed; raises
    TrainingError naming the epoch if the loss goes non-finite.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    classes = set(np.unique(labels).tolist())
    if epochs > 0 and not classes >= {0.0, 1.0}:
        raise DataError(f"training set must contain both classes, got labels {sorted(classes)}")

    head = init_head(features.shape[1], hidden_dim, seed=seed)
    rng = np.random.default_rng(seed + 1)
    n = features.shape[0]
    loss = None
    for epoch in range(epochs):
        if batch_size and batch_size < n:
            order = rng.permutation(n)
            for start in range(0, n, batch_size):
                idx = order[start:start + batch_size]
                loss, grads = bce_loss_and_grad(head, features[idx], labels[idx])
                _apply_step(head, grads, learning_rate)
                if not np.isfinite(loss):
                    raise TrainingError(f"loss diverged at epoch {epoch}")
        else:
            loss, grads = bce_loss_and_grad(head, features, labels)
            if not np.isfinite(loss):
                raise TrainingError(f"loss diverged at epoch {epoch}")
            _apply_step(head, grads, learning_rate)
    head.epochs_trained = epochs
    if epochs > 0:
        head.final_loss = float(bce_loss_and_grad(head, features, labels)[0])
    return head


def _apply_step(head: SelectorHead, grads: dict, lr: float) -> None:
    head.w1 -= lr * grads["w1"]
    head.b1 -= lr * grads["b1"]
    head.w2 -= lr * grads["w2"]
    head.b2 -= lr * grads["b2"]


# ------------------------------------------------------------- persistence

def head_to_json(head: SelectorHead) -> str:
    doc = {
        "input_dim": head.input_dim,
        "hidden_dim": head.hidden_dim,
        "w1": head.w1.tolist(),
        "b1": head.b1.tolist(),
        "w2": head.w2.tolist(),
        "b2": head.b2,
        "metadata": {
            "seed": head.seed,
            "epochs": head.epochs_trained,
            "final_loss": head.final_loss,
        },
    }
    return json.dumps(doc) + "\n"


def write_head(head: SelectorHead, path) -> None:
    from .io import atomic_write_text
    atomic_write_text(path, head_to_json(head))


def head_from_json(text: str) -> SelectorHead:
    doc = json.loads(text)
    meta = doc.get("metadata", {})
    head = SelectorHead(
        w1=doc["w1"], b1=doc["b1"], w2=doc["w2"], b2=doc["b2"],
        seed=meta.get("seed"),
        epochs_trained=int(meta.get("epochs", 0)),
        final_loss=meta.get("final_loss"),
    )
    if head.w1.shape != (doc["hidden_dim"], doc["input_dim"]):
        raise DataError("selector head file dims inconsistent with weight shapes")
    return head


def read_head(path) -> SelectorHead:
    return head_from_json(Path(path).read_text(encoding="utf-8"))
