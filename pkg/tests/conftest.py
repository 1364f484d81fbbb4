import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.core.config import desk_preset, from_dict  # noqa: E402
from src.ingest.manifest import read_manifest  # noqa: E402
from src.ingest.synthetic import generate_synthetic  # noqa: E402
from src.models.hybrid import build_model  # noqa: E402

# 32×32 inputs, two swin stages, one small dense block: forward+backward in well under a second
TINY = {
    "model": {
        "dense": {"stem_channels": 8, "growth_rate": 4, "block_layers": [2]},
        "swin": {"embed_dim": 8, "depths": [2, 2], "num_heads": [1, 2], "window_size": 4},
        "fusion": {"grid": 2, "fused_dim": 16, "squeeze_ratio": 4},
    },
    "data": {"input_size": 32},
    "train": {"epochs": 2, "batch_size": 8, "checkpoint_every": 1, "progress": False},
}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return from_dict(TINY)


@pytest.fixture
def tiny_model(tiny_config):
    return build_model(tiny_config, seed=0)


@pytest.fixture
def desk_config():
    return desk_preset()


@pytest.fixture(scope="session")
def synthetic_dir(tmp_path_factory):
    """10 images per class at 32×32, shared by the whole session (read-only)."""
    out = tmp_path_factory.mktemp("synth")
    generate_synthetic(str(out), per_class=10, seed=0, size=32)
    return str(out)


@pytest.fixture
def synthetic_manifest(synthetic_dir):
    return read_manifest(os.path.join(synthetic_dir, "manifest.tsv"))
