import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from panomod.autodiff import rng_stream  # noqa: E402
from panomod.config import ModelConfig  # noqa: E402


@pytest.fixture
def rng():
    return rng_stream(1234)


@pytest.fixture
def small_cfg():
    """A model small enough for exhaustive checks at 64-bit."""
    return ModelConfig(erp=(16, 32), face_size=8, patch=4, channels=8, blocks=2, heads=2,
                       modulated_layers=(1,), precision="float64", steps=3)


@pytest.fixture
def smooth_erp():
    """Band-limited field on a 64x128 ERP grid."""
    h, w = 64, 128
    lat = np.pi / 2 - (np.arange(h) + 0.5) / h * np.pi
    lon = (np.arange(w) + 0.5) / w * 2 * np.pi - np.pi
    la, lo = np.meshgrid(lat, lon, indexing="ij")
    return (np.cos(la) * np.cos(lo))[None, None]
