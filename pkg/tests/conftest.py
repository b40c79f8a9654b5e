import numpy as np
import pytest

from nsmdp.inventory import InventoryParams, build_env
from nsmdp.harness import solve_policies


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture(scope="session")
def small_env():
    """Toy inventory instance used across controller/harness tests."""
    params = InventoryParams(capacity=6, order_cost=1.0, holding_cost=5.0,
                             penalty=60.0, demand_rate=2.0, uniform_max=6)
    return build_env(params)


@pytest.fixture(scope="session")
def small_policies(small_env):
    return solve_policies(small_env, beta=0.95)


@pytest.fixture(scope="session")
def paper_env():
    """The capacity-20, penalty-100 instance."""
    params = InventoryParams(capacity=20, order_cost=1.0, holding_cost=5.0,
                             penalty=100.0, demand_rate=2.0)
    return build_env(params)


@pytest.fixture(scope="session")
def paper_policies(paper_env):
    return solve_policies(paper_env, beta=0.99)
