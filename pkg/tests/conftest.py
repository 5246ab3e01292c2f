import os
import sys

import pytest
import torch

# the modules live flat at the repository root
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run toy-scale training tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)
    yield


@pytest.fixture
def small_cfg():
    """A configuration small enough to train for a few iterations on CPU."""
    from experiment_config import resolve_config
    return resolve_config({
        "batch_size": 4,
        "pretrain_epochs": 1,
        "pretrain_iters_per_epoch": 2,
        "adapt_epochs": 1,
        "adapt_iters_per_epoch": 2,
        "eval_every": 0,
        "checkpoint_every": 1,
        "backbone": {"input_shape": [3, 32, 32], "feature_channels": 8, "depth": 3},
        "codec": {"heatmap_size": [16, 16]},
        "data": {"image_size": 32, "source_count": 8, "target_count": 8, "source_val_count": 4,
                 "target_test_count": 4, "unseen_test_count": 4},
    })
