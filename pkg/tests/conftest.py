"""Shared test fixtures for DERL engine tests."""

import numpy as np
import pytest
from unittest.mock import MagicMock, patch

from derl_core.config import MODALITIES, ModelConfig, RunConfig, load_run_config
from derl_core.data import generate_synthetic
from derl_core.model import DerlModel

from tests.fixtures.configs import TINY_DIMS, TINY_LENGTHS, TINY_MODEL, TINY_RUN_OVERRIDES


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def tiny_config():
    """ModelConfig small enough for entry-by-entry gradient checks."""
    return ModelConfig(**TINY_MODEL)


@pytest.fixture
def tiny_model(tiny_config):
    return DerlModel(tiny_config, seed=0)


@pytest.fixture
def tiny_dataset():
    """40 synthetic samples: 28 train / 4 valid / 8 test."""
    return generate_synthetic(40, TINY_LENGTHS, TINY_DIMS, redundancy=0.5, seed=3)


@pytest.fixture
def tiny_run_config():
    """RunConfig matching tiny_config with a 3-epoch budget."""
    return load_run_config(overrides=TINY_RUN_OVERRIDES)


@pytest.fixture
def derl_home(tmp_path, monkeypatch):
    """Point DERL_HOME at a temp dir for engine and tool tests."""
    monkeypatch.setenv("DERL_HOME", str(tmp_path))
    monkeypatch.setenv("DERL_WORKERS", "1")
    return tmp_path


def randomize(model, seed=1, scale=0.3):
    """Overwrite every parameter (zero-initialized ones included) with Gaussian noise."""
    gen = np.random.default_rng(seed)
    for _, p in model.named_parameters():
        if p.data.ndim == 0:
            continue
        p.data[...] = gen.normal(0.0, scale, size=p.shape)


# All resource modules that import DerlEngine
_RESOURCE_MODULES = [
    "derl_core.resources.status",
    "derl_core.resources.data",
    "derl_core.resources.runs",
    "derl_core.resources.evaluation",
]


@pytest.fixture
def mock_engine_class():
    """Patch DerlEngine in all resource modules, yield (mock_class, mock_instance).

    Usage:
        def test_something(mock_engine_class):
            mock_class, mock_instance = mock_engine_class
            mock_instance.count_params.return_value = {...}
            # call the tool function...
    """
    mock_instance = MagicMock()
    mock_class = MagicMock()
    mock_class.from_env.return_value = mock_instance

    patchers = [patch(f"{mod}.DerlEngine", mock_class) for mod in _RESOURCE_MODULES]
    for p in patchers:
        p.start()
    yield mock_class, mock_instance
    for p in patchers:
        p.stop()
