import numpy as np
import pytest

from rolltune import DatasetSpec, NetworkConfig, build_network, generate


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def tiny_config():
    """Two small blocks; float64 so gradient checks are sharp."""
    return NetworkConfig(widths=(3, 4), input_shape=(1, 8, 6), embedding_dim=4,
                         num_classes=3, convs_per_block=1, precision="float64")


@pytest.fixture
def tiny_params(tiny_config):
    return build_network(tiny_config, seed=7)


@pytest.fixture
def small_config():
    """Five blocks at miniature widths (float32), for scheduler tests."""
    return NetworkConfig(widths=(2, 3, 4, 5, 6), input_shape=(1, 16, 8),
                         embedding_dim=4, num_classes=4)


@pytest.fixture(scope="session")
def micro_spec():
    return DatasetSpec(seed=5, source_classes=4, source_samples=12,
                       target_train_ids=6, target_train_samples=6,
                       target_test_ids=5, query_per_id=1, gallery_per_id=3,
                       image_shape=(1, 16, 8))


@pytest.fixture(scope="session")
def micro_data(micro_spec):
    return generate(micro_spec)
