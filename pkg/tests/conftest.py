"""
Shared fixtures: catalog scenarios, a simulated Gaussian dataset and its fit.
"""

import numpy as np
import pytest

from config.scenarios import load_scenario
from core.estimation import fit_model
from core.models.base import ModelSpec, ParameterSet
from core.simulation import generate_dataset


@pytest.fixture(scope="session")
def two_rater():
    return load_scenario("gaussian_two_rater")


@pytest.fixture(scope="session")
def gaussian_data(two_rater):
    return generate_dataset(two_rater.with_sizes([30]), 30, np.random.default_rng(11))


@pytest.fixture(scope="session")
def gaussian_fit(two_rater, gaussian_data):
    return fit_model(gaussian_data, two_rater.spec)


@pytest.fixture
def single_time_spec():
    """One time point, random intercept only: every CCC term is a plain 2 x 2 moment."""
    return ModelSpec(n_times=1, spline_order=0, fixed_order=0)


@pytest.fixture
def single_time_params():
    return ParameterSet(beta=[[0.0], [0.0]], sigma_alpha=[[[1.0, 0.5], [0.5, 1.0]]], dispersion=1.0)
