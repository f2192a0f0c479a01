import os

# keep test runs from writing log files; must be set before app.core.config is imported
os.environ.setdefault("SNDE_LOG_TO_FILE", "false")

import numpy as np
import pytest

from app.schemas.model import FineGridConfig
from app.sde import model_core
from app.sde.brownian import BrownianDriver, DriverBatch


def build_spec(name: str = "sin-drift", epsilon: float = 0.1, n: int = 8, T: float = 1.0, w: float = 0.0, **params):
    return model_core.build_model(model_core.lookup(name, **params), epsilon=epsilon, horizon_T=T, n_obs=n, w=w)


@pytest.fixture
def make_spec():
    return build_spec


@pytest.fixture
def sin_spec():
    return build_spec("sin-drift")


@pytest.fixture
def unit_spec():
    return build_spec("unit-sigma")


@pytest.fixture
def small_grid():
    return FineGridConfig(steps_per_interval=8)


@pytest.fixture
def driver(sin_spec, small_grid):
    return BrownianDriver(seed=11, stream_id=0, dt=small_grid.fine_dt(sin_spec))


@pytest.fixture
def batch(sin_spec, small_grid):
    return DriverBatch.replicates(seed=11, count=16, dt=small_grid.fine_dt(sin_spec))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
