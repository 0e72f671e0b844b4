import pytest

from resmac.genie import solve_via
from resmac.model import ModelConfig


@pytest.fixture(scope="session")
def cfg5():
    return ModelConfig(n_max=5, m_cap=15)


@pytest.fixture(scope="session")
def genie10(cfg5):
    return solve_via(cfg5, d=10, support_limit=2, epsilon=1e-6)
