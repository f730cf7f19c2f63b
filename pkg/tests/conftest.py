import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running end-to-end checks")
