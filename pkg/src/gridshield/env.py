"""Micro-grid MDP simulator.

A day-scale episode: at each minute the agent proposes storage/market
power set-points, the shield projects them onto the safe action set, the
charge states evolve under the executed action, and the reward combines
operating cost with the shield's correction distance.

Forecast handling follows a bounded-noise model: observations carry
noisy predictions at fixed horizons, while the shield's receding-horizon
safe sets consume a per-step lower-bound series (smoothed truth minus the
horizon-dependent noise amplitude).  Which series feeds the shield is
configurable; see ForecastModel.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .czono import ConstrainedZonotope, EmptySetError
from .gridmodel import (
    GridParams,
    balance_residual,
    market_cost,
    step_dynamics,
    storage_cost,
)
from .lpqp import DEFAULT_TOL, OPTIMAL, LinearProgram, solve_lp
from .reach import (
    EmptySafeSetError,
    ForecastLowerBound,
    IllPosedScenarioError,
    compute_safe_sets,
)
from .shield import (
    Action,
    SafeAction,
    ShieldInfeasibleError,
    project_action,
    project_action_baseline,
    safety_violation,
)

__all__ = [
    "ExogenousSeries",
    "SynthProfile",
    "ForecastModel",
    "ForecastBundle",
    "Observation",
    "StepRecord",
    "EpisodeTrace",
    "MicroGridEnv",
    "load_series",
    "save_series",
    "synth_day",
    "make_forecasts",
    "observation_layout",
    "random_admissible_agent",
    "greedy_agent",
    "run_days",
    "metrics_rows",
    "format_metrics_table",
    "FULL_SHIELD",
    "BASELINE_SHIELD",
]

FULL_SHIELD = "full_shield"
BASELINE_SHIELD = "baseline_shield"

SERIES_HEADER = ("t_min", "load_kw", "pv_kw", "price_buy", "price_sell")


@dataclass(frozen=True)
class ExogenousSeries:
    """Per-minute exogenous data; loads are withdrawals (<= 0), generation
    injections (>= 0).  Episodes consume day blocks of T steps."""

    load: np.ndarray
    generation: np.ndarray
    price_buy: np.ndarray
    price_sell: np.ndarray

    def __post_init__(self):
        arrays = {}
        n = None
        for name in ("load", "generation", "price_buy", "price_sell"):
            a = np.atleast_1d(np.asarray(getattr(self, name), dtype=float)).copy()
            if n is None:
                n = len(a)
            elif len(a) != n:
                raise ValueError("all series must have the same length")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name} contains non-finite values")
            a.flags.writeable = False
            arrays[name] = a
        if np.any(arrays["load"] > 0.0):
            raise ValueError("load must be <= 0 (withdrawal convention)")
        if np.any(arrays["generation"] < 0.0):
            raise ValueError("generation must be >= 0")
        if np.any(arrays["price_buy"] < 0.0) or np.any(arrays["price_sell"] < 0.0):
            raise ValueError("prices must be >= 0")
        for name, a in arrays.items():
            object.__setattr__(self, name, a)

    @property
    def n_steps(self) -> int:
        return len(self.load)

    def net(self) -> np.ndarray:
        """Net load-generation sum d per step (negative = deficit)."""
        return self.load + self.generation

    def tile(self, copies: int) -> "ExogenousSeries":
        return ExogenousSeries(
            np.tile(self.load, copies),
            np.tile(self.generation, copies),
            np.tile(self.price_buy, copies),
            np.tile(self.price_sell, copies),
        )


def load_series(path) -> ExogenousSeries:
    """Read the per-minute CSV (header t_min,load_kw,pv_kw,price_buy,price_sell)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if tuple(h.strip() for h in header) != SERIES_HEADER:
            raise ValueError(
                f"{path}: expected header {','.join(SERIES_HEADER)}, got {','.join(header)}"
            )
        cols = ([], [], [], [])
        for i, row in enumerate(reader):
            if len(row) != 5:
                raise ValueError(f"{path}: row {i}: expected 5 columns, got {len(row)}")
            try:
                values = [float(v) for v in row]
            except ValueError:
                raise ValueError(f"{path}: row {i}: non-numeric value") from None
            if not all(math.isfinite(v) for v in values):
                raise ValueError(f"{path}: row {i}: non-finite value")
            if values[1] > 0.0:
                raise ValueError(f"{path}: row {i}: load_kw must be <= 0")
            if values[2] < 0.0:
                raise ValueError(f"{path}: row {i}: pv_kw must be >= 0")
            if values[3] < 0.0 or values[4] < 0.0:
                raise ValueError(f"{path}: row {i}: prices must be >= 0")
            for c, v in zip(cols, values[1:]):
                c.append(v)
    return ExogenousSeries(*[np.asarray(c) for c in cols])


def save_series(path, series: ExogenousSeries) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SERIES_HEADER)
        for t in range(series.n_steps):
            writer.writerow(
                [
                    t,
                    repr(float(series.load[t])),
                    repr(float(series.generation[t])),
                    repr(float(series.price_buy[t])),
                    repr(float(series.price_sell[t])),
                ]
            )


@dataclass(frozen=True)
class SynthProfile:
    """Shape parameters for the synthetic household day.

    PV follows a sine-squared bell between sunrise and sunset; load is a
    base plus two Gaussian peaks (morning/evening), both with mild noise.
    Prices are constant.
    """

    pv_peak_kw: float = 4.0
    sunrise_h: float = 6.0
    sunset_h: float = 20.0
    load_base_kw: float = 0.3
    load_morning_peak_kw: float = 1.2
    load_morning_h: float = 7.5
    load_evening_peak_kw: float = 1.8
    load_evening_h: float = 19.0
    load_peak_width_h: float = 1.5
    noise_frac: float = 0.08
    price_buy: float = 0.30
    price_sell: float = 0.06

    def max_load_kw(self) -> float:
        return (
            self.load_base_kw
            + self.load_morning_peak_kw
            + self.load_evening_peak_kw
        ) * (1.0 + 3.0 * self.noise_frac)


def synth_day(
    seed: int, profile: SynthProfile = SynthProfile(), n_steps: int = 1440
) -> ExogenousSeries:
    """Deterministic synthetic day: PV bell, double-peak household load,
    constant prices.  Generation is exactly zero outside daylight."""
    rng = np.random.default_rng(seed)
    hours = np.arange(n_steps) / 60.0

    daylight = (hours >= profile.sunrise_h) & (hours <= profile.sunset_h)
    phase = (hours - profile.sunrise_h) / max(profile.sunset_h - profile.sunrise_h, 1e-9)
    pv = np.where(daylight, profile.pv_peak_kw * np.sin(np.pi * np.clip(phase, 0, 1)) ** 2, 0.0)
    pv_noise = 1.0 + profile.noise_frac * rng.standard_normal(n_steps)
    pv = np.where(daylight, np.maximum(pv * pv_noise, 0.0), 0.0)

    def peak(center, height):
        return height * np.exp(-0.5 * ((hours - center) / profile.load_peak_width_h) ** 2)

    load = (
        profile.load_base_kw
        + peak(profile.load_morning_h, profile.load_morning_peak_kw)
        + peak(profile.load_evening_h, profile.load_evening_peak_kw)
    )
    load = load * (1.0 + profile.noise_frac * rng.standard_normal(n_steps))
    load = -np.maximum(load, 0.0)

    prices_b = np.full(n_steps, profile.price_buy)
    prices_s = np.full(n_steps, profile.price_sell)
    return ExogenousSeries(load, pv, prices_b, prices_s)


@dataclass(frozen=True)
class ForecastModel:
    """Forecast synthesis parameters.

    Observation forecasts at the fixed horizons are the smoothed series
    plus uniform noise whose amplitude grows with the horizon
    (growth_law "compound": base*coef^k; "linear": base*(1+(coef-1)*k)).
    shield_source picks the shield's lower-bound series: "per_step" uses
    smoothed truth minus amplitude (an independent noise-free channel);
    "horizon_interp" interpolates the sampled horizon forecasts instead.
    """

    smoothing_window: int = 144
    smoothing_passes: int = 2
    base_amplitude_gen: float = 0.05
    base_amplitude_load: float = 0.01
    growth_coefficient: float = 1.0014
    horizons: tuple = (120, 240, 360, 480)
    growth_law: str = "compound"
    shield_source: str = "per_step"

    def __post_init__(self):
        if self.smoothing_window < 1 or self.smoothing_passes < 0:
            raise ValueError("invalid smoothing parameters")
        if min(self.base_amplitude_gen, self.base_amplitude_load) < 0.0:
            raise ValueError("amplitudes must be >= 0")
        if self.growth_coefficient < 1.0:
            raise ValueError("growth coefficient must be >= 1")
        horizons = tuple(int(h) for h in self.horizons)
        if len(horizons) == 0 or any(h <= 0 for h in horizons) or list(horizons) != sorted(horizons):
            raise ValueError("horizons must be positive and ascending")
        object.__setattr__(self, "horizons", horizons)
        if self.growth_law not in ("compound", "linear"):
            raise ValueError("growth_law must be 'compound' or 'linear'")
        if self.shield_source not in ("per_step", "horizon_interp"):
            raise ValueError("shield_source must be 'per_step' or 'horizon_interp'")

    def amplitude(self, base: float, k) -> np.ndarray:
        """Noise amplitude at horizon offset k (k = 0 gives the base)."""
        k = np.asarray(k, dtype=float)
        if self.growth_law == "compound":
            return base * self.growth_coefficient ** k
        return base * (1.0 + (self.growth_coefficient - 1.0) * k)

    @property
    def max_horizon(self) -> int:
        return max(self.horizons)


def smooth_series(values, window: int, passes: int) -> np.ndarray:
    """Centered moving average, window truncated at the boundaries."""
    v = np.asarray(values, dtype=float)
    n = len(v)
    half_lo = window // 2
    half_hi = window - half_lo
    idx = np.arange(n)
    lo = np.maximum(idx - half_lo, 0)
    hi = np.minimum(idx + half_hi, n)
    for _ in range(passes):
        c = np.concatenate([[0.0], np.cumsum(v)])
        v = (c[hi] - c[lo]) / (hi - lo)
    return v


@dataclass(frozen=True)
class ForecastBundle:
    """Observation forecasts at fixed horizons plus the shield's
    lower-bound series over the islanding window starting at t0."""

    t0: int
    horizons: tuple
    load_hat: np.ndarray
    gen_hat: np.ndarray
    price_buy_hat: np.ndarray
    price_sell_hat: np.ndarray
    d_lower: ForecastLowerBound


class _Forecaster:
    """Precomputed smoothed series + noise bookkeeping for one data set."""

    def __init__(self, series: ExogenousSeries, model: ForecastModel):
        self.series = series
        self.model = model
        self.smoothed_load = smooth_series(
            series.load, model.smoothing_window, model.smoothing_passes
        )
        self.smoothed_gen = smooth_series(
            series.generation, model.smoothing_window, model.smoothing_passes
        )

    def horizon_forecasts(self, t0: int, rng) -> tuple:
        model = self.model
        ks = np.asarray(model.horizons)
        ts = t0 + ks
        if ts.max() >= self.series.n_steps:
            raise ValueError(
                f"forecast horizon out of range: t0={t0} + {ks.max()} beyond series"
            )
        amp_l = model.amplitude(model.base_amplitude_load, ks)
        amp_g = model.amplitude(model.base_amplitude_gen, ks)
        load_hat = self.smoothed_load[ts] + rng.uniform(-amp_l, amp_l)
        gen_hat = self.smoothed_gen[ts] + rng.uniform(-amp_g, amp_g)
        # Prices have no stochastic model here; forecasts pass the series through.
        return load_hat, gen_hat, self.series.price_buy[ts], self.series.price_sell[ts]

    def lower_bound_window(
        self, anchor: int, start: int, H: int, rng=None
    ) -> ForecastLowerBound:
        """d lower bounds for steps [start, start+H), predicted at `anchor`.

        Offsets are measured from the anchor, so re-predicting the same
        window one step later uses smaller amplitudes.
        """
        model = self.model
        if start + H > self.series.n_steps:
            raise ValueError("islanding window out of range")
        ks = np.arange(start - anchor, start - anchor + H)
        amp = model.amplitude(model.base_amplitude_load, ks) + model.amplitude(
            model.base_amplitude_gen, ks
        )
        if model.shield_source == "per_step":
            d_hat = (
                self.smoothed_load[start:start + H]
                + self.smoothed_gen[start:start + H]
            )
        else:
            # Interpolate the (noisy) horizon forecasts the agent also sees.
            if rng is None:
                rng = np.random.default_rng(0)
            load_hat, gen_hat, _, _ = self.horizon_forecasts(anchor, rng)
            d_now = float(self.series.net()[anchor])
            knots_k = np.concatenate([[0.0], np.asarray(model.horizons, dtype=float)])
            knots_v = np.concatenate([[d_now], load_hat + gen_hat])
            d_hat = np.interp(ks.astype(float), knots_k, knots_v)
        return ForecastLowerBound(d_hat - amp)


def make_forecasts(
    series: ExogenousSeries,
    t0: int,
    model: ForecastModel,
    seed,
    islanding_H: int = 60,
) -> ForecastBundle:
    """Forecasts as observed at time t0: noisy horizon predictions plus the
    shield's lower-bound series over [t0, t0+H)."""
    fc = _Forecaster(series, model)
    rng = np.random.default_rng(seed)
    load_hat, gen_hat, pb_hat, ps_hat = fc.horizon_forecasts(t0, rng)
    d_lower = fc.lower_bound_window(t0, t0, islanding_H, rng=np.random.default_rng(seed))
    return ForecastBundle(
        t0=t0,
        horizons=model.horizons,
        load_hat=load_hat,
        gen_hat=gen_hat,
        price_buy_hat=pb_hat,
        price_sell_hat=ps_hat,
        d_lower=d_lower,
    )


@dataclass(frozen=True)
class Observation:
    """What the agent sees at one step."""

    e: np.ndarray
    p_load: float
    p_gen: float
    price_buy: float
    price_sell: float
    forecasts: ForecastBundle

    def vector(self) -> np.ndarray:
        head = np.concatenate(
            [
                self.e,
                [self.p_load, self.p_gen, self.price_buy, self.price_sell],
            ]
        )
        f = self.forecasts
        per_h = np.column_stack(
            [f.load_hat, f.gen_hat, f.price_buy_hat, f.price_sell_hat]
        ).reshape(-1)
        return np.concatenate([head, per_h])


def observation_layout(n_storage: int, horizons) -> list:
    """Field names of Observation.vector(), in order."""
    names = [f"e_{i}" for i in range(n_storage)]
    names += ["p_load", "p_gen", "price_buy", "price_sell"]
    for h in horizons:
        names += [
            f"load_hat_{h}",
            f"gen_hat_{h}",
            f"price_buy_hat_{h}",
            f"price_sell_hat_{h}",
        ]
    return names


@dataclass(frozen=True)
class StepRecord:
    t: int
    e_before: np.ndarray
    proposed: np.ndarray
    safe: np.ndarray
    correction: float
    cost: float
    penalty: float
    reward: float
    violation: float
    shield_time: float
    balance: float
    overlap: float
    target_residual: float
    e_after: np.ndarray


@dataclass
class EpisodeTrace:
    day: int
    seed: int
    mode: str
    beta: float = 0.5
    records: list = field(default_factory=list)
    aborted: bool = False
    abort_info: Optional[dict] = None

    def aggregates(self) -> dict:
        if not self.records:
            return {}
        charges = np.concatenate(
            [[r.e_before for r in self.records], [self.records[-1].e_after]]
        )
        return {
            "steps": len(self.records),
            "max_exec_time": max(r.shield_time for r in self.records),
            "mean_exec_time": float(np.mean([r.shield_time for r in self.records])),
            "min_charge": float(np.min(charges)),
            "max_charge": float(np.max(charges)),
            "max_violation": max(r.violation for r in self.records),
            "cost": float(np.sum([r.cost for r in self.records])),
            "penalty": float(
                np.sum([self.beta * r.correction + r.penalty for r in self.records])
            ),
            "max_balance": max(abs(r.balance) for r in self.records),
            "max_overlap": max(r.overlap for r in self.records),
            "max_target_residual": max(r.target_residual for r in self.records),
        }

    def to_csv(self, path) -> None:
        if not self.records:
            raise ValueError("empty trace")
        n = len(self.records[0].e_before)
        k = len(self.records[0].proposed)
        header = (
            ["t"]
            + [f"e_{i}" for i in range(n)]
            + [f"proposed_{j}" for j in range(k)]
            + [f"safe_{j}" for j in range(k)]
            + [
                "correction",
                "cost",
                "penalty",
                "reward",
                "violation",
                "shield_time",
                "balance",
                "overlap",
                "target_residual",
            ]
            + [f"e_next_{i}" for i in range(n)]
        )
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for r in self.records:
                writer.writerow(
                    [r.t]
                    + [repr(float(v)) for v in r.e_before]
                    + [repr(float(v)) for v in r.proposed]
                    + [repr(float(v)) for v in r.safe]
                    + [
                        repr(float(r.correction)),
                        repr(float(r.cost)),
                        repr(float(r.penalty)),
                        repr(float(r.reward)),
                        repr(float(r.violation)),
                        repr(float(r.shield_time)),
                        repr(float(r.balance)),
                        repr(float(r.overlap)),
                        repr(float(r.target_residual)),
                    ]
                    + [repr(float(v)) for v in r.e_after]
                )


def _sample_point(Z: ConstrainedZonotope, rng) -> np.ndarray:
    """Reproducible (non-uniform) interior point: blend a deep feasible
    factor with a random extreme one."""
    g, q = Z.n_generators, Z.n_constraints
    if g == 0:
        return np.array(Z.center)
    # Deep point: maximize the margin t with |beta_i| <= 1 - t.
    obj = np.zeros(g + 1)
    obj[-1] = 1.0
    ineq = np.block(
        [
            [np.eye(g), np.ones((g, 1))],
            [-np.eye(g), np.ones((g, 1))],
        ]
    )
    rhs = np.ones(2 * g)
    eq_lhs = np.hstack([Z.con_lhs, np.zeros((q, 1))]) if q else None
    eq_rhs = Z.con_rhs if q else None
    lb = np.concatenate([-np.ones(g), [0.0]])
    ub = np.concatenate([np.ones(g), [1.0]])
    deep = solve_lp(
        LinearProgram(obj, eq_lhs=eq_lhs, eq_rhs=eq_rhs, ineq_lhs=ineq, ineq_rhs=rhs, lb=lb, ub=ub)
    )
    if deep.status != OPTIMAL:
        raise EmptySetError("cannot sample from an empty set")
    beta_deep = deep.x[:g]
    # Extreme point: maximize a random linear functional.
    direction = rng.standard_normal(g)
    vert = solve_lp(
        LinearProgram(
            direction,
            eq_lhs=Z.con_lhs if q else None,
            eq_rhs=Z.con_rhs if q else None,
            lb=-np.ones(g),
            ub=np.ones(g),
        )
    )
    if vert.status != OPTIMAL:
        raise EmptySetError("cannot sample from an empty set")
    wgt = rng.uniform()
    beta = (1.0 - wgt) * beta_deep + wgt * vert.x
    return Z.center + Z.generators @ beta


class MicroGridEnv:
    """One-day episodes over a given exogenous data set.

    The series must reach max(horizon) + islanding_H steps beyond each
    episode's end; if it does not, it is tiled cyclically (documented
    wrap-around for late-day forecasts).
    """

    def __init__(
        self,
        params: GridParams,
        forecast_model: ForecastModel = ForecastModel(),
        series: Optional[ExogenousSeries] = None,
        mode: str = FULL_SHIELD,
        alpha: float = 0.5,
        beta: float = 0.5,
        baseline_penalty_coef: float = 1.0,
        tol: float = DEFAULT_TOL,
        synth_profile: SynthProfile = SynthProfile(),
        synth_seed: int = 0,
        n_days: int = 1,
    ):
        if mode not in (FULL_SHIELD, BASELINE_SHIELD):
            raise ValueError(f"unknown shield mode {mode!r}")
        self.params = params
        self.model = forecast_model
        self.mode = mode
        self.alpha = alpha
        self.beta = beta
        self.baseline_penalty_coef = baseline_penalty_coef
        self.tol = tol
        T = params.horizon_T
        if series is None:
            days = [
                synth_day(synth_seed + d, synth_profile, T) for d in range(n_days)
            ]
            series = ExogenousSeries(
                np.concatenate([d.load for d in days]),
                np.concatenate([d.generation for d in days]),
                np.concatenate([d.price_buy for d in days]),
                np.concatenate([d.price_sell for d in days]),
            )
        lookahead = max(forecast_model.max_horizon, params.islanding_H + 1)
        n_episode_days = max(series.n_steps // T, 1)
        needed = n_episode_days * T + lookahead
        if series.n_steps < needed:
            copies = 1 + -(-needed // series.n_steps)  # ceil division
            series = series.tile(copies)
        self.series = series
        self.n_days = n_episode_days
        self._fc = _Forecaster(series, forecast_model)
        self._episode_seed = 0
        self._t = 0
        self._t_end = 0
        self._e: Optional[np.ndarray] = None
        self._done = True
        self.trace: Optional[EpisodeTrace] = None

    # -- helpers ----------------------------------------------------------

    def _target_sets(self, anchor: int, start: int, check_empty: bool):
        fb = self._fc.lower_bound_window(anchor, start, self.params.islanding_H)
        return compute_safe_sets(
            self.params, fb, check_empty=check_empty, tol=self.tol
        )

    def _observe(self) -> Observation:
        t = self._t
        bundle = make_forecasts(
            self.series, t, self.model, [self._episode_seed, t], self.params.islanding_H
        )
        return Observation(
            e=np.array(self._e),
            p_load=float(self.series.load[t]),
            p_gen=float(self.series.generation[t]),
            price_buy=float(self.series.price_buy[t]),
            price_sell=float(self.series.price_sell[t]),
            forecasts=bundle,
        )

    # -- API ---------------------------------------------------------------

    def reset(self, day: int = 0, seed: int = 0) -> Observation:
        if not (0 <= day < self.n_days):
            raise ValueError(f"day {day} outside [0, {self.n_days})")
        T = self.params.horizon_T
        self._episode_seed = int(seed)
        self._t = day * T
        self._t_end = self._t + T
        seq = self._target_sets(self._t, self._t, check_empty=True)
        rng = np.random.default_rng([int(seed), day, 7])
        self._e = _sample_point(seq.sets[0], rng)
        self._done = False
        self.trace = EpisodeTrace(day=day, seed=int(seed), mode=self.mode, beta=self.beta)
        return self._observe()

    def step(self, action: Action, mode: Optional[str] = None):
        if self._done:
            raise RuntimeError("episode finished; call reset")
        mode = self.mode if mode is None else mode
        if mode not in (FULL_SHIELD, BASELINE_SHIELD):
            raise ValueError(f"unknown shield mode {mode!r}")
        params = self.params
        t = self._t
        d_t = float(self.series.load[t] + self.series.generation[t])

        try:
            if mode == FULL_SHIELD:
                target = self._target_sets(t, t + 1, check_empty=False).sets[0]
                safe = project_action(action, self._e, target, d_t, params, tol=self.tol)
            else:
                safe = project_action_baseline(action, self._e, d_t, params, tol=self.tol)
        except (ShieldInfeasibleError, EmptySafeSetError) as err:
            self._done = True
            self.trace.aborted = True
            self.trace.abort_info = {
                "t": t,
                "error": type(err).__name__,
                "message": str(err),
                "diagnostics": getattr(err, "diagnostics", None),
            }
            info = {"aborted": True, "abort_info": self.trace.abort_info}
            return self._observe(), 0.0, True, info

        u = safe.action.vector()
        e_next = step_dynamics(self._e, u, params)

        # Freshest assessment of the state just reached: same window,
        # re-predicted one step later.
        metric_set = self._target_sets(t + 1, t + 1, check_empty=False).sets[0]
        violation = safety_violation(e_next, metric_set)

        cost = 0.0
        for i, st in enumerate(params.storages):
            cost += storage_cost(float(u[i]), st, params.tau)
        n = params.n_storage
        for j in range(params.n_markets):
            cost += market_cost(
                float(u[n + j]),
                float(self.series.price_buy[t]),
                float(self.series.price_sell[t]),
                params.tau,
            )
        penalty = (
            self.baseline_penalty_coef * max(0.0, violation)
            if mode == BASELINE_SHIELD
            else 0.0
        )
        # Single negation so reward + (alpha*cost + beta*correction + penalty)
        # is exactly zero.
        reward = -(self.alpha * cost + self.beta * safe.correction + penalty)

        overlap = float(
            np.max(
                np.minimum(safe.split_input[:n], -safe.split_input[n:2 * n]),
                initial=0.0,
            )
        )
        record = StepRecord(
            t=t,
            e_before=np.array(self._e),
            proposed=action.vector(),
            safe=u,
            correction=safe.correction,
            cost=cost,
            penalty=penalty,
            reward=reward,
            violation=violation,
            shield_time=safe.shield_time,
            balance=balance_residual(u, d_t, params),
            overlap=overlap,
            target_residual=safe.target_residual,
            e_after=np.array(e_next),
        )
        self.trace.records.append(record)

        self._e = e_next
        self._t = t + 1
        self._done = self._t >= self._t_end
        info = {
            "safe_action": u,
            "correction": safe.correction,
            "violation": violation,
            "shield_time": safe.shield_time,
            "cost": cost,
            "penalty": penalty,
            "balance": record.balance,
            "overlap": overlap,
            "target_residual": safe.target_residual,
        }
        return self._observe(), reward, self._done, info


def random_admissible_agent(params: GridParams, seed: int = 0) -> Callable:
    """Uniform proposals over the rate boxes; balancing is the shield's job."""
    rng = np.random.default_rng(seed)
    lo = np.concatenate([params.storage_p_min, params.market_p_min])
    hi = np.concatenate([params.storage_p_max, params.market_p_max])
    n = params.n_storage

    def act(obs: Observation) -> Action:
        v = rng.uniform(lo, hi)
        return Action(v[:n], v[n:])

    return act


def greedy_agent(params: GridParams) -> Callable:
    """Charge on surplus, discharge on deficit, market takes the remainder."""
    n, m = params.n_storage, params.n_markets

    def act(obs: Observation) -> Action:
        d = obs.p_load + obs.p_gen
        need = -d  # total injection required from storages + markets
        per = need / max(n, 1)
        p_storage = np.clip(per, params.storage_p_min, params.storage_p_max)
        rem = need - float(np.sum(p_storage))
        p_market = np.zeros(m)
        if m:
            p_market[0] = np.clip(rem, params.market_p_min[0], params.market_p_max[0])
        return Action(p_storage, p_market)

    return act


_METRIC_ROWS = (
    ("max exec time", "max_exec_time", max),
    ("mean exec time", "mean_exec_time", None),
    ("min charge state", "min_charge", min),
    ("max charge state", "max_charge", max),
    ("max safety violation", "max_violation", max),
    ("mean cost/day", "cost", None),
    ("mean penalty/day", "penalty", None),
)


def metrics_rows(traces) -> dict:
    """Aggregate day traces into the evaluation-table rows."""
    aggs = [t.aggregates() for t in traces if t.records]
    if not aggs:
        raise ValueError("no completed steps to aggregate")
    n_days = len(aggs)
    out = {}
    out["max exec time"] = max(a["max_exec_time"] for a in aggs)
    out["mean exec time"] = float(
        np.sum([a["mean_exec_time"] * a["steps"] for a in aggs])
        / np.sum([a["steps"] for a in aggs])
    )
    out["min charge state"] = min(a["min_charge"] for a in aggs)
    out["max charge state"] = max(a["max_charge"] for a in aggs)
    out["max safety violation"] = max(a["max_violation"] for a in aggs)
    out["mean cost/day"] = float(np.mean([a["cost"] for a in aggs]))
    out["mean penalty/day"] = float(np.mean([a["penalty"] for a in aggs]))
    out["days"] = n_days
    out["aborted days"] = sum(1 for t in traces if t.aborted)
    return out


def format_metrics_table(metrics: dict) -> str:
    rows = [name for name, _, _ in _METRIC_ROWS]
    width = max(len(r) for r in rows)
    lines = []
    for name in rows:
        value = metrics[name]
        if name == "max safety violation":
            lines.append(f"{name:<{width}}  {value:.3e}")
        else:
            lines.append(f"{name:<{width}}  {value:.4f}")
    return "\n".join(lines)


def run_days(
    env: MicroGridEnv,
    agent: Callable,
    n_days: int,
    mode: Optional[str] = None,
    base_seed: int = 0,
) -> tuple:
    """Simulate n_days one-day episodes; returns (metrics, traces)."""
    traces = []
    for day in range(n_days):
        obs = env.reset(day=day % env.n_days, seed=base_seed + day)
        done = False
        while not done:
            a = agent(obs)
            obs, _, done, _ = env.step(a, mode=mode)
        traces.append(env.trace)
    return metrics_rows(traces), traces
