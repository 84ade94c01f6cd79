import numpy as np
import pytest

from gridshield import clear_caches
from gridshield.gridmodel import (
    GridParams,
    MarketParams,
    StorageParams,
    default_grid,
)


@pytest.fixture(autouse=True, scope="session")
def _fresh_caches():
    clear_caches()
    yield
    clear_caches()


@pytest.fixture
def grid() -> GridParams:
    """Reference two-storage, one-market grid (3.5 kW / 6.54 kWh each)."""
    return default_grid()


@pytest.fixture
def grid_1s0m() -> GridParams:
    """Single lossy storage, no market: the forced-input analysis case."""
    return GridParams(
        storages=(StorageParams(p_max=3.5, p_min=-3.5, e_max=6.54, e_min=0.34,
                                eta_d=0.98, eta_c=0.98, mu=0.012, gamma=0.15),),
        markets=(),
        tau=1.0 / 60.0,
        horizon_T=1440,
        islanding_H=60,
    )


def make_storage(rng, *, lossless=False) -> StorageParams:
    p_max = float(rng.uniform(1.0, 5.0))
    e_min = float(rng.uniform(0.0, 1.0))
    return StorageParams(
        p_max=p_max,
        p_min=-float(rng.uniform(1.0, 5.0)),
        e_max=e_min + float(rng.uniform(2.0, 10.0)),
        e_min=e_min,
        eta_d=1.0 if lossless else float(rng.uniform(0.85, 1.0)),
        eta_c=1.0 if lossless else float(rng.uniform(0.85, 1.0)),
        mu=0.0 if lossless else float(rng.uniform(0.0, 0.05)),
        gamma=float(rng.uniform(0.0, 0.5)),
    )


def make_grid_1s(rng, *, islanding_H=10, tau=None) -> GridParams:
    return GridParams(
        storages=(make_storage(rng),),
        markets=(),
        tau=float(rng.uniform(1.0 / 120.0, 0.25)) if tau is None else tau,
        horizon_T=1440,
        islanding_H=islanding_H,
    )


def make_grid(rng, n_storage, n_markets, *, islanding_H=10) -> GridParams:
    return GridParams(
        storages=tuple(make_storage(rng) for _ in range(n_storage)),
        markets=tuple(
            MarketParams(p_max=float(rng.uniform(2.0, 8.0)),
                         p_min=-float(rng.uniform(2.0, 8.0)))
            for _ in range(n_markets)
        ),
        tau=1.0 / 60.0,
        horizon_T=1440,
        islanding_H=islanding_H,
    )


def assert_box_close(hull, lower, upper, tol=1e-7):
    np.testing.assert_allclose(hull.lower, lower, atol=tol)
    np.testing.assert_allclose(hull.upper, upper, atol=tol)
