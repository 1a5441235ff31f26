import random

import numpy as np
import pytest

from scenafuse.Config import ModelConfig, desk_train_config
from scenafuse.dataset_generator import GeneratorConfig, build_vocabulary, generate_dataset, random_grid

# small enough for a full forward / backward in milliseconds
TINY_MODEL = ModelConfig(vocab_size=40, hidden=8, heads=2, blocks=2, max_len=12, d_prime=8,
                         grid_size=2, adapter_heads=2)
TINY_DATA = GeneratorConfig(train=24, dev=12, test=12, grid_size=2, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_model_config():
    return TINY_MODEL


@pytest.fixture
def tiny_train_config():
    return desk_train_config(epochs=1, batch_size=8, dropout=0.0)


@pytest.fixture(scope="session")
def tiny_dataset():
    return generate_dataset(TINY_DATA)


@pytest.fixture(scope="session")
def tiny_vocab(tiny_dataset):
    return build_vocabulary(tiny_dataset)


@pytest.fixture
def outdoor_grid():
    return random_grid(random.Random(0), 2, "outdoor")
