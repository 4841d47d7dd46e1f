import pytest
from dataclasses import replace

from endosum.config import RunConfig
from endosum.pipeline import train_selector


def small_run_config() -> RunConfig:
    """20k-frame world shared by the integration tests: fast but fully
    featured (noise, drift, corruption, close event pairs)."""
    cfg = RunConfig()
    cfg.sim = replace(cfg.sim, num_frames=20_000, num_events=5,
                      min_separation_sec=400.0)
    cfg.train_exams = 1
    cfg.epochs = 200
    return cfg


@pytest.fixture(scope="session")
def small_world():
    cfg = small_run_config()
    head = train_selector(cfg)
    return cfg, head
