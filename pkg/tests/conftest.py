import numpy as np
import pytest

from rpom import fom, kernels, store


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running end-to-end checks")


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    """Run a test once per compiled/pure-Python kernel backend."""
    previous = kernels.BACKEND
    kernels.use_backend(request.param)
    yield request.param
    kernels.use_backend(previous)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_runs():
    """Five coarse heated-side runs (3 train, 1 validation, 1 test)."""
    sc = fom.make_scenario("heated_side", 16, 16)
    sp = fom.SolverParams(t_end=0.004)
    mu, _ = store.design_parameters([[40.0, 80.0]], None, 3, 1, 1, seed=0)
    return [fom.run_simulation(sc, sp, m) for m in mu]


@pytest.fixture(scope="session")
def small_set(small_runs):
    return store.split_set(small_runs, 3, 1, 1, seed=0, ranges=[[40.0, 80.0]])
