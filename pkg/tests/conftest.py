import os

import numpy as np
import pytest
import torch

from rgbdsod.config import RunConfig
from rgbdsod.data import generate_synthetic_dataset

torch.set_num_threads(1)


@pytest.fixture
def toy_cfg() -> RunConfig:
    return RunConfig()


@pytest.fixture
def tiny_cfg() -> RunConfig:
    """Smaller than toy: 32x32 input, embed 8. Used where many forward passes are needed."""
    return RunConfig(input_size=32, embed_dim=8, num_heads=(1, 1, 2, 2), decoder_width=8,
                     depths=(1, 2, 1, 1), window_size=4)


@pytest.fixture(scope="session")
def synth_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    generate_synthetic_dataset(8, 3, 64, root / "train")
    generate_synthetic_dataset(4, 3, 64, root / "test", start=100)
    return root


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _no_deterministic_env(monkeypatch):
    # tests opt into deterministic mode explicitly
    monkeypatch.delenv("RGBDSOD_DETERMINISTIC", raising=False)
    yield
