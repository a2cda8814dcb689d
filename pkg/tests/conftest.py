import numpy as np
import pytest

from flowsr.datagen import DegradationSpec, make_dataset, norm_constants
from flowsr.model import ArchConfig, init_params
from flowsr.trainer import TrainData

TINY_ARCH = ArchConfig(base_channels=8, n_res_blocks=1, kernel_size=3, time_embed_dim=16)


@pytest.fixture(scope="session")
def toy_data() -> TrainData:
    """8 training pairs of 32x32, mild degradation gap."""
    lr_spec = DegradationSpec(psf_sigma=2.0, gain=80.0, read_sigma=0.02)
    hr_spec = DegradationSpec(psf_sigma=0.8, gain=300.0, read_sigma=0.01)
    samples = make_dataset(8, lr_spec, hr_spec, 32, seed=555)
    mean, std = norm_constants(samples)
    return TrainData(samples=samples, norm_mean=mean, norm_std=std)


@pytest.fixture
def tiny_params():
    return init_params(TINY_ARCH, seed=7)


def random_image(shape=(8, 8), seed=0, dtype=np.float32) -> np.ndarray:
    return np.random.default_rng(seed).normal(size=shape).astype(dtype)
