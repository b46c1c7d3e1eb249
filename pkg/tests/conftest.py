"""Shared fixtures: seeded kriging models, small nested multi-fidelity data, fast chains."""
import numpy as np
import pytest

from src.design.batch_select import MhConfig
from src.design.design_gen import lhs_maximin, nested_designs
from src.models.cokriging import MultiFidelityData, fit_cokriging
from src.models.kriging import fit_kriging


def smooth_function(x):
    """Cheap smooth test response on the unit cube."""
    x = np.atleast_2d(x)
    return np.sin(6.0 * x[:, 0]) + 0.5 * np.sum(x ** 2, axis=1)


def coarse_response(x):
    x = np.atleast_2d(x)
    return np.sin(2.0 * np.pi * x[:, 0]) + 0.3 * np.sum(x, axis=1)


def fine_response(x):
    x = np.atleast_2d(x)
    return 1.5 * coarse_response(x) + (x[:, 0] - 0.5) ** 2


def middle_response(x):
    x = np.atleast_2d(x)
    return 1.2 * coarse_response(x) + 0.2 * np.cos(3.0 * x[:, 0])


def two_level_simulator(level, points):
    return coarse_response(points) if level == 1 else fine_response(points)


def three_level_simulator(level, points):
    return (coarse_response, middle_response, fine_response)[level - 1](points)


@pytest.fixture
def make_kriging():
    """Factory for seeded kriging models with fixed length-scales."""

    def build(n=10, d=2, trend="constant", family="squared-exponential", seed=0, theta=None):
        design = lhs_maximin(n, d, iters=200, seed=seed).points
        outputs = smooth_function(design)
        theta = 0.3 if theta is None else theta
        return fit_kriging(design, outputs, trend, family, theta=np.full(d, theta))

    return build


def nested_data(sizes, d, seed=0, simulator=two_level_simulator):
    designs = nested_designs(sizes, d, seed=seed, iters=200)
    outputs = [simulator(level, design) for level, design in enumerate(designs, start=1)]
    return MultiFidelityData(tuple(designs), tuple(outputs))


@pytest.fixture
def two_level_data():
    return nested_data([14, 7], d=2, seed=3)


@pytest.fixture
def two_level_model(two_level_data):
    return fit_cokriging(two_level_data, thetas=[np.full(2, 0.3), np.full(2, 0.4)])


@pytest.fixture
def fast_mh():
    return MhConfig(n_samples=1500, burn_in=300, seed=11)
