import warnings

import numpy as np
import pytest

from bathnarrow import BathState, build_hamiltonians, sample_bath

warnings.filterwarnings("ignore", message="bath A_z extreme")


@pytest.fixture(scope="session")
def bath7():
    """The workhorse 7-spin bath at 250 mT (sigma0 ~ 22 kHz, T2* ~ 10 us)."""
    return sample_bath(7, 0.011, rng_seed=12)


@pytest.fixture(scope="session")
def hams7(bath7):
    return build_hamiltonians(bath7)


@pytest.fixture(scope="session")
def bath2():
    return sample_bath(2, 0.011, rng_seed=5)


@pytest.fixture(scope="session")
def hams2(bath2):
    return build_hamiltonians(bath2)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


@pytest.fixture()
def thermal7():
    return BathState.thermal(7)
