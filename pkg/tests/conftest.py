"""
Shared fixtures: tiny model settings and a synthetic dataset on disk
"""
import numpy as np
import pytest

from core.models.settings import CkanSettings, DataSettings, GeneratorConfig, TrainConfig
from core.nn.instrumentation import REGISTRY
from core.services.data_service import DatasetService, ImageBuffer


@pytest.fixture(autouse=True)
def clean_counters():
    REGISTRY.reset()
    yield
    REGISTRY.reset()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_generator_config():
    return GeneratorConfig(base_channels=2, num_residual_blocks=1, upscale_factor=2, seed=3)


@pytest.fixture
def tiny_ckan():
    return CkanSettings(chunk_pixels=64, spline_num_basis=5, hidden_width=4)


@pytest.fixture
def random_image(rng):
    def make(height=32, width=32):
        return ImageBuffer(rng.uniform(0.0, 1.0, size=(3, height, width)))
    return make


@pytest.fixture
def dataset(tmp_path):
    """Three 32px procedural images with a scale-2 manifest"""
    return DatasetService.synth_dataset(3, 32, seed=7, out_dir=tmp_path / "hr", scale=2)


@pytest.fixture
def train_config(tmp_path):
    def make(**overrides):
        values = dict(
            epochs=1, patches_per_epoch=2, patch_size=16, seed=5,
            checkpoint_dir=str(tmp_path / "ckpt"), lr_g=1e-3, lr_d=1e-3,
        )
        values.update(overrides)
        return TrainConfig(**values)
    return make


@pytest.fixture
def data_settings():
    return DataSettings()
