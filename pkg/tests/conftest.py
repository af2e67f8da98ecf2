"""Shared test helpers."""

import pytest

from procplan.config import RunConfig, StageParams


def make_tiny_config(**top_level) -> RunConfig:
    """A config small enough for integration tests to train in seconds."""
    cfg = RunConfig()
    cfg.data.videos_per_task = 4
    cfg.data.obs_dim = 8
    cfg.data.text_dim = 4
    cfg.schedule.steps = 20
    cfg.vae = StageParams(epochs=2, steps_per_epoch=10, batch_size=16, peak_lr=1e-3)
    cfg.classifier = StageParams(epochs=2, steps_per_epoch=10, batch_size=16, peak_lr=1e-3)
    cfg.diffusion = StageParams(
        epochs=2, steps_per_epoch=10, batch_size=8, peak_lr=5e-4, warmup_epochs=1
    )
    for key, value in top_level.items():
        setattr(cfg, key, value)
    cfg.validate()
    return cfg


@pytest.fixture()
def tiny_config():
    return make_tiny_config()
