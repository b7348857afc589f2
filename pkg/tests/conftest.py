import numpy as np
import pytest

from loadtune.dataset import auto_split_spec
from loadtune.forecaster import MODEL_PRESETS, ModelConfig
from loadtune.loadcsv import generate_synthetic
from loadtune.tuner import TuneDatasets


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def desk_config():
    return MODEL_PRESETS["desk"]


@pytest.fixture
def tiny_config():
    """Small enough to train a few epochs in well under a second."""
    return ModelConfig(td_dense_units=8, heads=2, head_dim=4, dense_units=8)


@pytest.fixture(scope="session")
def synthetic_records():
    return generate_synthetic(24 * 30, seed=3)


@pytest.fixture(scope="session")
def split_spec(synthetic_records):
    return auto_split_spec(synthetic_records)


@pytest.fixture
def datasets(synthetic_records, split_spec):
    return TuneDatasets.prepare(synthetic_records, split_spec)
