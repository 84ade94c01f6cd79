"""Physical and economic model of the micro grid.

Sign convention, fixed globally: power injected into the grid is positive,
power withdrawn is negative.  Storage discharge is positive, charge
negative; loads carry negative power, generation positive; market import
(into the grid) is positive.  ``d`` denotes the net load-generation sum.

Units: kW, kWh, hours, currency per kWh.  ``tau`` is the step length in
hours so energy pricing is dimensionally consistent.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .czono import IntervalBox

__all__ = [
    "StorageParams",
    "MarketParams",
    "GridParams",
    "default_grid",
    "build_A",
    "build_B",
    "build_B_split",
    "build_rate_polytope",
    "balance_residual",
    "storage_cost",
    "market_cost",
    "step_dynamics",
]


@dataclass(frozen=True)
class StorageParams:
    """One energy-storage unit.

    p_max >= 0 is the discharge rate limit, p_min <= 0 the charge rate
    limit; the charge state lives in [e_min, e_max]; mu is the per-hour
    self-discharge rate; gamma prices throughput wear.
    """

    p_max: float
    p_min: float
    e_max: float
    e_min: float
    eta_d: float = 1.0
    eta_c: float = 1.0
    mu: float = 0.0
    gamma: float = 0.0

    def __post_init__(self):
        if not (self.p_min <= 0.0 <= self.p_max):
            raise ValueError("need p_min <= 0 <= p_max")
        if not (0.0 <= self.e_min <= self.e_max):
            raise ValueError("need 0 <= e_min <= e_max")
        if not (0.0 < self.eta_d <= 1.0 and 0.0 < self.eta_c <= 1.0):
            raise ValueError("efficiencies must lie in (0, 1]")
        if not (0.0 <= self.mu <= 1.0):
            raise ValueError("self-discharge rate must lie in [0, 1]")
        if self.gamma < 0.0:
            raise ValueError("cost coefficient must be nonnegative")


@dataclass(frozen=True)
class MarketParams:
    """One market connection: p_max >= 0 import limit, p_min <= 0 export limit."""

    p_max: float
    p_min: float

    def __post_init__(self):
        if not (self.p_min <= 0.0 <= self.p_max):
            raise ValueError("need p_min <= 0 <= p_max")


@dataclass(frozen=True)
class GridParams:
    """n storages + m markets, step length tau (hours), day length horizon_T
    steps, islanding horizon islanding_H steps."""

    storages: tuple
    markets: tuple
    tau: float
    horizon_T: int = 1440
    islanding_H: int = 60

    def __post_init__(self):
        object.__setattr__(self, "storages", tuple(self.storages))
        object.__setattr__(self, "markets", tuple(self.markets))
        if len(self.storages) < 1:
            raise ValueError("need at least one storage")
        if self.tau <= 0.0:
            raise ValueError("tau must be positive")
        if self.islanding_H < 1:
            raise ValueError("islanding horizon must be >= 1")
        if self.horizon_T < 1:
            raise ValueError("day horizon must be >= 1")

    @property
    def n_storage(self) -> int:
        return len(self.storages)

    @property
    def n_markets(self) -> int:
        return len(self.markets)

    @property
    def n_inputs(self) -> int:
        return self.n_storage + self.n_markets

    # Stacked parameter vectors, in storage/market order.

    @property
    def storage_p_max(self) -> np.ndarray:
        return np.array([s.p_max for s in self.storages])

    @property
    def storage_p_min(self) -> np.ndarray:
        return np.array([s.p_min for s in self.storages])

    @property
    def e_max(self) -> np.ndarray:
        return np.array([s.e_max for s in self.storages])

    @property
    def e_min(self) -> np.ndarray:
        return np.array([s.e_min for s in self.storages])

    @property
    def market_p_max(self) -> np.ndarray:
        return np.array([mk.p_max for mk in self.markets])

    @property
    def market_p_min(self) -> np.ndarray:
        return np.array([mk.p_min for mk in self.markets])

    def charge_box(self) -> IntervalBox:
        """Admissible charge-state box (the islanding state limit set)."""
        return IntervalBox(self.e_min, self.e_max)

    def input_box(self) -> IntervalBox:
        """Rate box over the unsplit input [p_storage..., p_market...]."""
        return IntervalBox(
            np.concatenate([self.storage_p_min, self.market_p_min]),
            np.concatenate([self.storage_p_max, self.market_p_max]),
        )


def default_grid(n_storage: int = 2, n_markets: int = 1) -> GridParams:
    """Reference micro grid used across tests/CLI defaults: 3.5 kW / 6.54 kWh
    storages at 98 % efficiency, one 5 kW market, minute resolution, one-day
    episodes, one-hour islanding horizon."""
    storage = StorageParams(
        p_max=3.5, p_min=-3.5, e_max=6.54, e_min=0.34,
        eta_d=0.98, eta_c=0.98, mu=0.012, gamma=0.15,
    )
    market = MarketParams(p_max=5.0, p_min=-5.0)
    return GridParams(
        storages=(storage,) * n_storage,
        markets=(market,) * n_markets,
        tau=1.0 / 60.0,
        horizon_T=1440,
        islanding_H=60,
    )


def build_A(params: GridParams) -> np.ndarray:
    """Charge-state decay matrix: diagonal, entries 1 - mu_i * tau."""
    return np.diag(1.0 - params.tau * np.array([s.mu for s in params.storages]))


def build_B(params: GridParams, mode_per_storage: Sequence[int]) -> np.ndarray:
    """Input matrix for a fixed charge/discharge mode per storage.

    mode +1 = discharging (entry -tau/eta_d), -1 = charging (entry
    -tau*eta_c).  Market columns never move charge states and stay zero.
    """
    n, m = params.n_storage, params.n_markets
    mode = np.asarray(mode_per_storage)
    if mode.shape != (n,) or not np.all(np.isin(mode, (-1, 1))):
        raise ValueError("mode must be a length-n vector of +1/-1")
    diag = np.where(
        mode > 0,
        -params.tau / np.array([s.eta_d for s in params.storages]),
        -params.tau * np.array([s.eta_c for s in params.storages]),
    )
    B = np.zeros((n, n + m))
    B[:, :n] = np.diag(diag)
    return B


def build_B_split(params: GridParams) -> np.ndarray:
    """Time-invariant input matrix over the split input [p_dis, p_chg, p_market].

    Splitting storage power into a nonnegative discharge part and a
    nonpositive charge part removes the sign-dependent efficiency switch.
    """
    n, m = params.n_storage, params.n_markets
    eta_d = np.array([s.eta_d for s in params.storages])
    eta_c = np.array([s.eta_c for s in params.storages])
    B = np.zeros((n, 2 * n + m))
    B[:, :n] = np.diag(-params.tau / eta_d)
    B[:, n:2 * n] = np.diag(-params.tau * eta_c)
    return B


def build_rate_polytope(params: GridParams) -> tuple[np.ndarray, np.ndarray]:
    """Rate constraints over the split input as W u <= w.

    Enforces 0 <= p_dis <= p_max, p_min <= p_chg <= 0 and the market box;
    (4n + 2m) rows over (2n + m) variables. The zero vector is always
    feasible (w >= 0).
    """
    n, m = params.n_storage, params.n_markets
    I_n, I_m = np.eye(n), np.eye(m)
    Znn, Znm, Zmn = np.zeros((n, n)), np.zeros((n, m)), np.zeros((m, n))
    W = np.block([
        [I_n, Znn, Znm],
        [Znn, -I_n, Znm],
        [-I_n, Znn, Znm],
        [Znn, I_n, Znm],
        [Zmn, Zmn, I_m],
        [Zmn, Zmn, -I_m],
    ])
    w = np.concatenate([
        params.storage_p_max,
        -params.storage_p_min,
        np.zeros(n),
        np.zeros(n),
        params.market_p_max,
        -params.market_p_min,
    ])
    return W, w


def balance_residual(u, d: float, params: GridParams, islanding: bool = False) -> float:
    """Power-balance residual h.u + d; zero means injections cover the net load.

    In islanded operation the market entries of h are masked to zero: the
    grid connection is severed and storages alone must balance d.
    """
    u = np.asarray(u, dtype=float)
    n, m = params.n_storage, params.n_markets
    if u.shape != (n + m,):
        raise ValueError(f"input must have length {n + m}")
    h = np.ones(n + m)
    if islanding:
        h[n:] = 0.0
    return float(h @ u + d)


def storage_cost(p: float, params: StorageParams, tau: float) -> float:
    """Throughput wear cost tau * gamma * |p| (nonnegative)."""
    return tau * params.gamma * abs(p)


def market_cost(p: float, price_buy: float, price_sell: float, tau: float) -> float:
    """Trading cost: imports (p >= 0) priced at price_buy, exports at price_sell.

    Both branches return a nonnegative cost (tau*price_buy*p and
    tau*(-price_sell*p) respectively); there is no revenue sign flip for
    exports.  Continuous at p = 0 with value 0.
    """
    if p >= 0.0:
        return tau * price_buy * p
    return tau * (-price_sell * p)


def step_dynamics(e, u, params: GridParams) -> np.ndarray:
    """One step of the charge-state dynamics.

    e' = e - tau*eta(p)*p - tau*mu*e per storage, with eta = 1/eta_d when
    discharging (p >= 0) and eta_c when charging.  Market inputs do not
    move charge states.  Bound violations are the caller's to detect; no
    clamping here.
    """
    e = np.atleast_1d(np.asarray(e, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    n = params.n_storage
    if e.shape != (n,):
        raise ValueError(f"charge state must have length {n}")
    if len(u) < n:
        raise ValueError("input vector shorter than storage count")
    p = u[:n]
    eta_d = np.array([s.eta_d for s in params.storages])
    eta_c = np.array([s.eta_c for s in params.storages])
    mu = np.array([s.mu for s in params.storages])
    eta = np.where(p >= 0.0, 1.0 / eta_d, eta_c)
    return e - params.tau * eta * p - params.tau * mu * e
