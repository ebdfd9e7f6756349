import numpy as np
import pytest

from helpers import write_tree
from metadrn.data import synth_generate
from metadrn.model import MetaDRN, ModelSpec


@pytest.fixture(scope="session")
def small_dataset():
    """12 synthetic classes, 10 samples each, 32x32, split 8/2/2."""
    return synth_generate(num_classes=12, samples_per_class=10, size=32, seed=7, split_counts=(8, 2, 2))


@pytest.fixture(scope="session")
def tiny_model():
    return MetaDRN(ModelSpec(width_multiplier=1 / 8))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def fss_tree(tmp_path_factory):
    return write_tree(tmp_path_factory.mktemp("fss") / "tree", 1000)
