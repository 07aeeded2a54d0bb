import numpy as np
import pytest

from lite_nvist.autodiff import precision
from lite_nvist.scenes import generate_dataset, load_dataset
from lite_nvist.trainer import load_run_config


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="also run end-to-end tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


# =============================================================================
# Fixtures
# =============================================================================

@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def float64():
    """New tensors are created in double precision for the duration of a test."""
    with precision(np.float64):
        yield


@pytest.fixture(scope="session")
def tiny_cfg():
    return load_run_config("tiny")


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory, tiny_cfg):
    """4 scenes x 3 views of 8x8 images; scenes 1 and 3 are held out."""
    root = tmp_path_factory.mktemp("tiny_data")
    generate_dataset(root, tiny_cfg.data)
    return root


@pytest.fixture
def tiny_dataset(tiny_data):
    return load_dataset(tiny_data)
