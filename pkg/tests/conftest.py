import numpy as np
import pytest

from quenched_asip import driving, maps


@pytest.fixture(scope="session")
def doubling_family():
    return maps.MapFamily({"doubling": maps.doubling()})


@pytest.fixture(scope="session")
def beta_family():
    return maps.MapFamily({"beta2": maps.beta_map(2), "beta3": maps.beta_map(3)})


@pytest.fixture(scope="session")
def three_branch_family():
    return maps.MapFamily({"three": maps.three_branch()})


@pytest.fixture(scope="session")
def const_doubling():
    return driving.constant("doubling")


@pytest.fixture(scope="session")
def iid_beta():
    return driving.iid(["beta2", "beta3"], seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
