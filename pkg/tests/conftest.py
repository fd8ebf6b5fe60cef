"""
Shared pytest fixtures for the CT Restore test suite.
"""

import numpy as np
import pytest

from app.core.parallel import set_workers
from app.imaging.dataset import pair_dataset
from app.imaging.image import Image
from app.pipeline.config import ExperimentConfig, parse_config_text
from app.tomo.geometry import Geometry


@pytest.fixture(autouse=True)
def single_worker():
    """Kernels run on one worker unless a test asks otherwise."""
    set_workers(1)
    yield
    set_workers(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_geometry():
    """32x32 image, 48 views, unit pixels."""
    return Geometry.for_image(32, n_views=48)


@pytest.fixture
def tiny_pairs():
    """Twelve 16x16 noisy/clean pairs with ground truth."""
    rng = np.random.default_rng(7)
    truth, low, high = [], [], []
    for _ in range(12):
        t = np.clip(rng.uniform(0.2, 0.8) + 0.1 * rng.standard_normal((16, 16)), 0, 1)
        truth.append(Image(t))
        low.append(Image(np.clip(t + 0.08 * rng.standard_normal(t.shape), 0, 1)))
        high.append(Image(np.clip(t + 0.02 * rng.standard_normal(t.shape), 0, 1)))
    return pair_dataset(low, high, truth, train_fraction=0.75, seed=3)


TINY_RUN_FILE = """
[run]
seed = 11
precision = float64

[phantom]
family = disk
count = 3
size = 32
tile = 16
disk_radius = 10
disk_value = 0.8

[geometry]
n_views = 24
n_detectors = 0
pixel_size = 0.05

[network]
preset = vdsr
depth = 3
width = 4

[train]
epochs = 1
batch_size = 4
patch_size = 8
patches_per_image = 2
train_fraction = 0.5

[study]
transfer_grid = 1, 2
transfer_epochs = 1
algorithms = fbp, cgls
"""


@pytest.fixture
def tiny_config(tmp_path) -> ExperimentConfig:
    """Seconds-scale run config writing into a temporary directory."""
    cfg = parse_config_text(TINY_RUN_FILE)
    return cfg.with_overrides(out=str(tmp_path / "run"))
