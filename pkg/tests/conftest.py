"""Shared fixtures.

The estimation stages are the slowest parts of the suite, so datasets,
fitted models, and gain schedules for the stock scenarios are built once
per session and shared read-only.
"""

import numpy as np
import pytest

from modru import config, harness


@pytest.fixture(scope="session")
def truck_sc():
    return config.default_truck_scenario()


@pytest.fixture(scope="session")
def truck_fit(truck_sc):
    """(data, model, eff, fit) for the default truck scenario."""
    data = harness.stage_dataset(truck_sc)
    model, eff, fit = harness.stage_estimate(truck_sc, data)
    return data, model, eff, fit


@pytest.fixture(scope="session")
def truck_model(truck_fit):
    return truck_fit[1]


@pytest.fixture(scope="session")
def truck_schedule(truck_sc, truck_model):
    return harness.stage_schedule(truck_sc, truck_model)


@pytest.fixture(scope="session")
def car_sc():
    return config.default_car_scenario()


@pytest.fixture(scope="session")
def car_fit(car_sc):
    data = harness.stage_dataset(car_sc)
    model, eff, fit = harness.stage_estimate(car_sc, data)
    return data, model, eff, fit


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260815)
