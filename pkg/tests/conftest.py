import numpy as np
import pytest

import stochage as sa


@pytest.fixture
def grid1d():
    return sa.Grid(T=0.5, a_max=1.0, n_t=32, n_a=64, extent=(1.0,), n_x=(8,))


@pytest.fixture
def grid2d():
    return sa.Grid(T=0.25, a_max=0.5, n_t=16, n_a=32, extent=(1.0, 1.0), n_x=(6, 5))


def linear_rates(mu=0.3, m0=0.6, alpha=0.2, k0=0.0):
    return sa.VitalRates(
        mu_s=sa.ConstantRate(mu), m0=sa.ConstantRate(m0),
        gamma=sa.ConstantRate(0.0), alpha0=sa.ConstantRate(alpha),
        k0=sa.ConstantRate(k0))


def logistic_rates(gamma=1.0):
    return sa.VitalRates(
        mu_s=sa.LogisticRate(0.1, 0.5, 2.0, 0.5),
        m0=sa.LogisticRate(0.8, -0.5, 1.5, 0.5),
        gamma=sa.ConstantRate(gamma),
        alpha0=sa.ConstantRate(0.1), k0=sa.ConstantRate(0.0))


def smooth_p0(grid, decay=1.0, ripple=0.2):
    if grid.dim == 1:
        return sa.initial_field(
            grid, lambda a, x: np.exp(-decay * a) * (1 + ripple * np.cos(np.pi * x)))
    return sa.initial_field(
        grid, lambda a, x, y: np.exp(-decay * a)
        * (1 + ripple * np.cos(np.pi * x) * np.cos(np.pi * y)))


def build_model(grid, rates=None, amplitudes=None, p0=None):
    rates = rates if rates is not None else linear_rates()
    if amplitudes is None:
        amplitudes = (sa.cosine_amplitude(0.2, (1,) * grid.dim, grid.extent),)
    noise = sa.NoiseSpec(tuple(amplitudes))
    initial = p0 if p0 is not None else smooth_p0(grid)
    return sa.PopulationModel(grid=grid, rates=rates, noise=noise, initial=initial)


@pytest.fixture
def linear_model(grid1d):
    return build_model(grid1d)
