import numpy as np
import pytest

from fedga import (FRandEffOracle, RunConfig, StepSchedule, banded_connection,
                   sample_frandeff)


@pytest.fixture(scope="session")
def small_oracle():
    """K=5, d=2 random-effects oracle shared across read-only tests."""
    pop = sample_frandeff(5, 2, [2.0, -3.0], 1.0, [1, 2, 3, 4, 5], seed=7)
    return FRandEffOracle(pop)


@pytest.fixture(scope="session")
def small_connection():
    return banded_connection(5, 1)


@pytest.fixture
def small_config(small_oracle, small_connection):
    return RunConfig(
        n=60,
        tau=5,
        connection=small_connection,
        schedule=StepSchedule(eta0=0.3, beta=0.75),
        oracle=small_oracle,
        seed=11,
    )


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(0)
