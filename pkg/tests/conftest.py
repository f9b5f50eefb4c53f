"""Shared fixtures: small simulated trials and pools that fit quickly."""

import numpy as np
import pytest

from borrowlab.config import BorrowConfig
from borrowlab.simgen import gen_oneD, generate, make_scenario


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def cfg():
    return BorrowConfig()


@pytest.fixture
def small_linear():
    """Linear mechanism scaled down: 60 treated, 40 controls, 120 external controls."""
    sc = make_scenario("linear", seed=3, n_treated=60, n_control=40, n_pool=120)
    trial, pool = generate(sc)
    return sc, trial, pool


@pytest.fixture
def one_d():
    """One-covariate example with five outliers appended to an 800-point pool."""
    return gen_oneD(seed=11)


@pytest.fixture
def exchangeable_linear():
    sc = make_scenario("linear", seed=5, exchangeable=True)
    return sc, *generate(sc)
