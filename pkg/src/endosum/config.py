"""Run configuration: one INI-style file, strict schema, every threshold in
one place. Unknown sections or keys are rejected so typos cannot silently
fall back to defaults.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields as dc_fields
from pathlib import Path

from .model import ConfigError
from .simulate import SimConfig

SCHEMA_VERSION = 1


@dataclass
class RunConfig:
    # run
    seed: int = 0
    out_dir: str = "runs/out"
    num_patients: int = 1
    workers: int = 1

    # selector
    tau_s: float = 0.5                # screening threshold
    hidden_dim: int = 64
    epochs: int = 300
    learning_rate: float = 0.5
    batch_size: int = 0               # 0 = full batch
    train_exams: int = 2
    negatives_per_positive: float = 3.0

    # tokenizer
    lambda_time: float = 0.05
    sinusoid_base: float = 10000.0
    time_scale_sec: float = 60.0
    position_source: str = "seconds"  # or frame_index
    normalize_visual: bool = True

    # weaver
    sigma_coarse: float = 0.55
    sigma_fine: float = 0.75
    gap_max_sec: float = 600.0

    # converger
    tau_agree: float = 0.4
    tau_min: float = 0.5
    medoid_metric: str = "euclidean"

    # eval (clinical protocol constants)
    window_sec: float = 300.0         # temporal match window around a keyframe
    conflict_window_sec: float = 20.0 # different labels this close invalidate both
    tau_grid_sec: tuple[float, ...] = (30.0, 60.0, 120.0, 300.0, 600.0)
    baseline_tau: float = 0.5
    baseline_suppression_sec: float = 10.0

    # simulator
    sim: SimConfig = field(default_factory=SimConfig)

    def validate(self) -> None:
        unit = {
            "tau_s": self.tau_s, "tau_agree": self.tau_agree, "tau_min": self.tau_min,
            "baseline_tau": self.baseline_tau,
        }
        for name, v in unit.items():
            if not (0.0 <= v <= 1.0):
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        for name, v in (("sigma_coarse", self.sigma_coarse), ("sigma_fine", self.sigma_fine)):
            if not (-1.0 <= v <= 1.0):
                raise ConfigError(f"{name} must be in [-1, 1], got {v}")
        if self.sigma_fine < self.sigma_coarse:
            raise ConfigError("sigma_fine must be >= sigma_coarse")
        if self.gap_max_sec <= 0 or self.window_sec <= 0 or self.conflict_window_sec < 0:
            raise ConfigError("time windows must be positive")
        if self.position_source not in ("seconds", "frame_index"):
            raise ConfigError(f"position_source must be seconds|frame_index, got {self.position_source}")
        if self.medoid_metric not in ("euclidean", "cosine"):
            raise ConfigError(f"medoid_metric must be euclidean|cosine, got {self.medoid_metric}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.lambda_time < 0:
            raise ConfigError("lambda_time must be >= 0")
        self.sim.validate()


_SECTION_FIELDS = {
    "run": ("seed", "out_dir", "num_patients", "workers"),
    "selector": ("tau_s", "hidden_dim", "epochs", "learning_rate", "batch_size",
                 "train_exams", "negatives_per_positive"),
    "tokenizer": ("lambda_time", "sinusoid_base", "time_scale_sec",
                  "position_source", "normalize_visual"),
    "weaver": ("sigma_coarse", "sigma_fine", "gap_max_sec"),
    "converger": ("tau_agree", "tau_min", "medoid_metric"),
    "eval": ("window_sec", "conflict_window_sec", "tau_grid_sec",
             "baseline_tau", "baseline_suppression_sec"),
}

_SIM_FIELDS = (
    "num_frames", "frames_per_sec", "num_events", "event_duration_frames",
    "feature_dim", "num_classes", "sigma_vis", "drift_rate", "confusion_noise",
    "normal_confidence", "blur_fraction", "miss_fraction", "corrupt_peak",
    "dirichlet_strength", "paired_events", "pair_gap_sec", "min_separation_sec",
    "max_event_fraction", "world_seed", "seed",
)


def _parse_value(raw: str, current):
    if isinstance(current, bool):
        low = raw.strip().lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, tuple):
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        elem = current[0] if current else 0.0
        cast = int if isinstance(elem, int) else float
        return tuple(cast(p) for p in parts)
    return raw.strip()


def load_config(path) -> RunConfig:
    """Parse and validate a config file; unknown sections/keys are errors."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    text = Path(path).read_text(encoding="utf-8")
    parser.read_string(text)

    cfg = RunConfig()
    seen_version = False

    for section in parser.sections():
        if section == "meta":
            for key, raw in parser.items(section):
                if key == "schema_version":
                    if int(raw) != SCHEMA_VERSION:
                        raise ConfigError(
                            f"unsupported schema_version {raw}; this build reads {SCHEMA_VERSION}"
                        )
                    seen_version = True
                else:
                    raise ConfigError(f"[meta]: unknown key {key!r}")
            continue
        if section == "simulator":
            sim_kwargs = {}
            for key, raw in parser.items(section):
                if key not in _SIM_FIELDS:
                    raise ConfigError(f"[simulator]: unknown key {key!r}")
                current = getattr(cfg.sim, key)
                sim_kwargs[key] = _parse_value(raw, current)
            cfg.sim = SimConfig(**{**_sim_as_dict(cfg.sim), **sim_kwargs})
            continue
        if section not in _SECTION_FIELDS:
            raise ConfigError(f"unknown config section [{section}]")
        allowed = _SECTION_FIELDS[section]
        for key, raw in parser.items(section):
            if key not in allowed:
                raise ConfigError(f"[{section}]: unknown key {key!r}")
            setattr(cfg, key, _parse_value(raw, getattr(cfg, key)))

    if not seen_version:
        raise ConfigError("config must declare [meta] schema_version")
    cfg.validate()
    return cfg


def _sim_as_dict(sim: SimConfig) -> dict:
    return {f.name: getattr(sim, f.name) for f in dc_fields(SimConfig)}


def default_config_text() -> str:
    """A fully commented config with every default spelled out once."""
    return f"""[meta]
schema_version = {SCHEMA_VERSION}

[run]
seed = 0
out_dir = runs/out
num_patients = 4
workers = 1

[selector]
tau_s = 0.5                 ; screening threshold on the frame score
hidden_dim = 64
epochs = 300
learning_rate = 0.5
batch_size = 0              ; 0 = full batch
train_exams = 2
negatives_per_positive = 3.0

[tokenizer]
lambda_time = 0.05          ; weight of the temporal half in token affinity
sinusoid_base = 10000.0
time_scale_sec = 60.0       ; position unit when position_source = seconds
position_source = seconds   ; seconds | frame_index
normalize_visual = true

[weaver]
sigma_coarse = 0.55         ; cut threshold for coarse segmentation
sigma_fine = 0.75           ; stop threshold for fine agglomeration
gap_max_sec = 600.0         ; forced coarse cut at larger time gaps

[converger]
tau_agree = 0.4             ; member agreement threshold during refinement
tau_min = 0.5               ; minimum context confidence to survive pruning
medoid_metric = euclidean   ; euclidean | cosine

[eval]
window_sec = 300.0          ; +/- matching window around annotated keyframes
conflict_window_sec = 20.0  ; differing labels this close are both invalid
tau_grid_sec = 30, 60, 120, 300, 600
baseline_tau = 0.5
baseline_suppression_sec = 10.0

[simulator]
num_frames = 100000
frames_per_sec = 2.0
num_events = 6
event_duration_frames = 80, 200
feature_dim = 384
num_classes = 12
sigma_vis = 0.4
drift_rate = 0.003
confusion_noise = 0.2
normal_confidence = 0.92
blur_fraction = 0.15
miss_fraction = 0.12
corrupt_peak = 0.85, 0.95
dirichlet_strength = 0.1
paired_events = 4
pair_gap_sec = 45, 110
min_separation_sec = 1200.0
max_event_fraction = 0.1
world_seed = 12345
seed = 0
"""
