"""Shared fixtures: small random datasets and their assembled designs."""

import logging
import sys
from pathlib import Path

import numpy as np
import pytest

# Add project root to Python path
PROJECT_ROOT = Path(__file__).parent.parent
sys.path.insert(0, str(PROJECT_ROOT))

from fmselect.model_core import RawDataset, build_model  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: Monte Carlo acceptance runs (deselect with -m 'not slow')")


def make_raw(n=4, J=3, m=8, p=2, q=2, seed=0, noise=1.0) -> RawDataset:
    rng = np.random.default_rng(seed)
    grid = np.linspace(0.0, 1.0, m)
    fixed, random, responses = [], [], []
    for _ in range(n):
        X = np.column_stack([np.ones(J), rng.normal(size=(J, p - 1))])
        Z = np.column_stack([np.ones(J), rng.normal(size=(J, q - 1))])
        signal = np.outer(X[:, 0], 2.0 * np.sin(2 * np.pi * grid))
        fixed.append(X)
        random.append(Z)
        responses.append(signal + noise * rng.normal(size=(J, m)))
    return RawDataset(grid=grid, responses=responses, fixed_covariates=fixed, random_covariates=random)


@pytest.fixture(autouse=True)
def reset_logging():
    """Undo handlers installed by CLI runs so caplog sees package records."""
    yield
    package_logger = logging.getLogger("fmselect")
    for handler in list(package_logger.handlers):
        handler.close()
        package_logger.removeHandler(handler)
    package_logger.propagate = True
    package_logger.setLevel(logging.NOTSET)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_raw():
    return make_raw()


@pytest.fixture
def small_model(small_raw):
    return build_model(small_raw, fixed_dims=4, random_dims=4)
