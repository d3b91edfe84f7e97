import numpy as np
import pytest

from adastyle import ArchConfig, TranslationModel, generate_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture(scope="session")
def tiny_cfg():
    return ArchConfig(image_size=16, base_channels=4, down_blocks=2, translator_blocks=2,
                      style_dim=4, latent_dim=3, activation="adarelu")


@pytest.fixture(scope="session")
def tiny_model(tiny_cfg):
    return TranslationModel(tiny_cfg, seed=1)


@pytest.fixture(scope="session")
def small_dataset():
    return generate_dataset(seed=5, count_per_domain=48)


@pytest.fixture(scope="session")
def eval_dataset():
    # large enough that each domain's test split covers the 32-source
    # controllability protocol
    return generate_dataset(seed=5, count_per_domain=384)
