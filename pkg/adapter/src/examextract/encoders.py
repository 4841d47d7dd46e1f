"""Frame encoders and classifiers, addressed by registry identifier.

The grid encoders are self-contained and deterministic: downsample the
frame to a fixed color grid and flatten. They exist so the adapter works
offline and in tests. The resnet18 entry delegates to torchvision and
needs its pretrained weights available locally; no weights are vendored
here. The "demo" classifier is a fixed random projection with a softmax,
a wiring placeholder only, with no clinical meaning.
"""

from __future__ import annotations

import numpy as np

from .schema import NUM_CLASSES


class EncoderUnavailable(RuntimeError):
    pass


class GridEncoder:
    """Mean-color grid features: resize to (g, g), flatten RGB, scale to [0, 1]."""

    def __init__(self, grid: int):
        self.grid = grid
        self.dim = grid * grid * 3

    def encode(self, frames: np.ndarray) -> np.ndarray:
        import cv2
        out = np.empty((frames.shape[0], self.dim), dtype=np.float64)
        for i, frame in enumerate(frames):
            small = cv2.resize(frame, (self.grid, self.grid), interpolation=cv2.INTER_AREA)
            out[i] = small.astype(np.float64).ravel() / 255.0
        return out


class TorchvisionEncoder:
    """Pooled features from a pretrained torchvision backbone (local weights only)."""

    def __init__(self, arch: str, dim: int):
        self.arch = arch
        self.dim = dim
        self._model = None

    def _load(self):
        try:
            import torch
            import torchvision
        except ImportError as exc:
            raise EncoderUnavailable(
                f"encoder {self.arch!r} needs torch/torchvision installed: {exc}"
            ) from exc
        try:
            model = getattr(torchvision.models, self.arch)(weights="DEFAULT")
        except Exception as exc:
            raise EncoderUnavailable(
                f"encoder {self.arch!r} could not load pretrained weights "
                f"(offline and not cached?): {exc}"
            ) from exc
        model.fc = torch.nn.Identity()
        model.eval()
        self._model = model
        return model

    def encode(self, frames: np.ndarray) -> np.ndarray:
        import torch
        model = self._model or self._load()
        x = torch.from_numpy(frames.astype(np.float32) / 255.0).permute(0, 3, 1, 2)
        x = torch.nn.functional.interpolate(x, size=(224, 224), mode="bilinear",
                                            align_corners=False)
        mean = torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1)
        std = torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1)
        with torch.no_grad():
            feats = model((x - mean) / std)
        return feats.numpy().astype(np.float64)


ENCODERS = {
    "grid8": lambda: GridEncoder(8),
    "grid16": lambda: GridEncoder(16),
    "resnet18": lambda: TorchvisionEncoder("resnet18", 512),
}


def get_encoder(name: str):
    if name not in ENCODERS:
        raise EncoderUnavailable(
            f"unknown encoder {name!r}; available: {', '.join(sorted(ENCODERS))}"
        )
    return ENCODERS[name]()


class DemoClassifier:
    """Seeded random projection + softmax over the 12 classes. A stand-in
    that exercises the lesion_dist plumbing; never a diagnostic model."""

    name = "demo"

    def __init__(self, feature_dim: int, seed: int = 2024):
        rng = np.random.default_rng(seed)
        self.w = rng.standard_normal((feature_dim, NUM_CLASSES)) / np.sqrt(feature_dim)

    def predict(self, features: np.ndarray) -> np.ndarray:
        logits = features @ self.w
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        return e / e.sum(axis=1, keepdims=True)


CLASSIFIERS = {"demo": DemoClassifier}


def get_classifier(name: str, feature_dim: int):
    if name not in CLASSIFIERS:
        raise EncoderUnavailable(
            f"unknown classifier {name!r}; available: {', '.join(sorted(CLASSIFIERS))}"
        )
    return CLASSIFIERS[name](feature_dim)
