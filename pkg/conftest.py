# conftest.py
import numpy as np
import pytest

from src.config import RunConfig, apply_overrides, validate

# small enough that a forward pass takes milliseconds
TINY = {
    "seed": "0",
    "n_classes": "4",
    "image_h": "32",
    "image_w": "32",
    "encoder.channels": "4, 8, 12, 16",
    "encoder.blocks_per_stage": "1",
    "decoder.width": "8",
    "ceaef.reduction": "2",
    "ccnn.kernel": "3",
    "stage1.epochs": "1",
    "stage1.lr": "0.001",
    "stage2.epochs": "1",
    "stage2.lr": "0.0001",
    "augment.random_crop": "false",
    "augment.hflip": "false",
}


def tiny_config(**overrides) -> RunConfig:
    """TINY plus overrides given as dotted keys with '__' for '.' (stage1__epochs=2)."""
    items = dict(TINY)
    items.update({k.replace("__", "."): str(v) for k, v in overrides.items()})
    return validate(apply_overrides(RunConfig(), items))


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run the desk-scale training test")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg():
    return tiny_config()


@pytest.fixture
def make_config():
    return tiny_config
