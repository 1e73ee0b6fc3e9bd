"""Shared fixtures for the WFEN test suite"""

import numpy as np
import pytest

from wfen.config import RunConfig, WFENConfig, WFENSettings
from wfen.tensor import float64_mode, get_default_dtype, set_default_dtype


@pytest.fixture(autouse=True)
def restore_default_dtype():
    """Every test starts and ends in 32-bit mode"""
    previous = get_default_dtype()
    set_default_dtype(np.float32)
    yield
    set_default_dtype(previous)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def f64():
    with float64_mode():
        yield


@pytest.fixture
def tiny_config():
    return WFENConfig(tiny=True)


@pytest.fixture
def settings(tmp_path):
    return WFENSettings(
        threads=2, log_level="WARNING", show_progress=False, output_dir=str(tmp_path)
    )


@pytest.fixture
def tiny_run_config(tmp_path):
    """Desk-scale run: tiny network, 32px synthetic images, a handful of steps"""
    return RunConfig.model_validate(
        {
            "model": {"tiny": True},
            "train": {
                "steps": 3,
                "batch_size": 2,
                "num_images": 4,
                "image_size": 32,
                "log_every": 1,
            },
            "eval": {"num_images": 2},
            "io": {"output_dir": str(tmp_path / "run")},
        }
    )
