import numpy as np
import pytest

from ambsde import (
    CondExpEstimator,
    DelaySpec,
    LevyModel,
    ProblemSpec,
    build_grid,
    simulate_ensemble,
)


@pytest.fixture
def grid():
    # T = 1, M = 0.25, dt = 0.005
    return build_grid(1.0, 0.25, 250)


@pytest.fixture
def small_grid():
    return build_grid(0.5, 0.25, 60)


@pytest.fixture
def levy2():
    return LevyModel([1.0, 0.5], [2.0, 1.0], [0.5, 0.25])


def make_problem(grid, driver, terminal, delays=None, levy=None, d=1, C=1.0):
    delays = DelaySpec.constant(0.0) if delays is None else delays
    levy = LevyModel.none() if levy is None else levy
    return ProblemSpec(grid, delays, levy, d, driver, terminal, C)


@pytest.fixture
def estimator():
    return CondExpEstimator()


def ensemble(grid, N=2000, seed=0, levy=None, d=1, workers=1):
    return simulate_ensemble(grid, LevyModel.none() if levy is None else levy, d, N, seed, workers)
