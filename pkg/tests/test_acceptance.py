"""Release gate: one test per headline guarantee.

Each test is a single pass/fail check of a user-facing claim:

1.  safety over 20 synthetic days under the full shield,
2.  safe-set hulls match an independent gridded dynamic program,
3.  the projection is minimal (no feasible point is closer),
4.  every shielded step is feasible end to end,
5.  safe sets shrink monotonically backward under constant forecasts,
6.  per-step shield latency fits the real-time budget,
7.  the rate-only baseline loses the islanding guarantee where the
    full shield provably keeps it,
8.  the documented unit examples reproduce to 1e-9.

The 20-day simulation (criteria 1, 4, 6) runs once as a module fixture;
expect several minutes of wall time.
"""

import dataclasses

import numpy as np
import pytest

from conftest import make_grid, make_grid_1s
from oracles import gridded_safe_hull, hit_and_run

from gridshield.czono import interval_hull, membership_residual
from gridshield.env import (
    FULL_SHIELD,
    BASELINE_SHIELD,
    ExogenousSeries,
    ForecastModel,
    MicroGridEnv,
    greedy_agent,
    metrics_rows,
    run_days,
)
from gridshield.gridmodel import (
    GridParams,
    StorageParams,
    build_A,
    build_B_split,
    build_rate_polytope,
    default_grid,
    market_cost,
    step_dynamics,
    storage_cost,
)
from gridshield.reach import (
    EmptySafeSetError,
    ForecastLowerBound,
    compute_safe_sets,
)
from gridshield.shield import Action, project_action


N_DAYS = 20


@pytest.fixture(scope="module")
def twenty_day_run():
    """Greedy agent + full shield over 20 synthetic days at reference scale."""
    env = MicroGridEnv(default_grid(), mode=FULL_SHIELD, n_days=N_DAYS, synth_seed=0)
    metrics, traces = run_days(env, greedy_agent(env.params), N_DAYS, base_seed=0)
    return env.params, metrics, traces


def all_records(traces):
    return [r for t in traces for r in t.records]


# -- 1. safety ----------------------------------------------------------------


def test_safety_over_twenty_synthetic_days(twenty_day_run):
    params, metrics, traces = twenty_day_run
    assert metrics["days"] == N_DAYS
    assert metrics["aborted days"] == 0
    assert sum(len(t.records) for t in traces) == N_DAYS * 1440
    assert metrics["max safety violation"] <= 1e-6

    charges = np.concatenate(
        [[r.e_before for r in t.records] + [t.records[-1].e_after] for t in traces]
    )
    assert np.min(charges) >= 0.34 - 1e-7
    assert np.max(charges) <= 6.54 + 1e-7


# -- 2. oracle equivalence ------------------------------------------------------


def test_safe_set_hulls_match_gridded_dynamic_program():
    """50 random single-storage configurations against an independent
    forced-input forward simulation over a 1e-3 charge grid."""
    rng = np.random.default_rng(2024)
    checked = 0
    while checked < 50:
        params = make_grid_1s(rng, islanding_H=int(rng.integers(2, 11)))
        st = params.storages[0]
        lo, hi = -0.9 * st.p_max, -0.9 * st.p_min
        d = rng.uniform(lo, hi, params.islanding_H)
        oracle = gridded_safe_hull(
            d,
            e_min=st.e_min,
            e_max=st.e_max,
            p_max=st.p_max,
            p_min=st.p_min,
            eta_d=st.eta_d,
            eta_c=st.eta_c,
            mu=st.mu,
            tau=params.tau,
            pitch=1e-3,
        )
        try:
            seq = compute_safe_sets(params, ForecastLowerBound(d))
        except EmptySafeSetError:
            assert oracle is None
            checked += 1
            continue
        hull = seq.hulls()[0]
        assert oracle is not None
        np.testing.assert_allclose(hull.lower[0], oracle[0], atol=2e-3)
        np.testing.assert_allclose(hull.upper[0], oracle[1], atol=2e-3)
        checked += 1
    assert checked == 50


# -- 3. projection minimality ---------------------------------------------------


def _assemble_projection_qp(X_next, x, d_t, params):
    """The projection feasible set, rebuilt from its documented structure:
    variables [beta; p_dis; p_chg; p_market] with

      G beta - B~ u = A x - c      (target-set membership)
      F beta       = b             (target-set constraints)
      sum(u)       = -d_t          (power balance)
      |beta| <= 1,  W u <= w       (factor box and rate boxes)
    """
    n, m = params.n_storage, params.n_markets
    g, q = X_next.n_generators, X_next.n_constraints
    k = 2 * n + m
    A = build_A(params)
    B_split = build_B_split(params)
    W, w = build_rate_polytope(params)

    eq_rows = [np.hstack([X_next.generators, -B_split])]
    eq_rhs = [A @ x - X_next.center]
    if q:
        eq_rows.append(np.hstack([X_next.con_lhs, np.zeros((q, k))]))
        eq_rhs.append(X_next.con_rhs)
    eq_rows.append(np.concatenate([np.zeros(g), np.ones(k)])[None, :])
    eq_rhs.append([-d_t])
    A_eq = np.vstack(eq_rows)
    b_eq = np.concatenate([np.atleast_1d(r) for r in eq_rhs])

    A_ub = np.block(
        [
            [np.eye(g), np.zeros((g, k))],
            [-np.eye(g), np.zeros((g, k))],
            [np.zeros((W.shape[0], g)), W],
        ]
    )
    b_ub = np.concatenate([np.ones(2 * g), w])

    recombine = np.zeros((n + m, g + k))
    recombine[:n, g:g + n] = np.eye(n)
    recombine[:n, g + n:g + 2 * n] = np.eye(n)
    recombine[n:, g + 2 * n:] = np.eye(m)
    return A_ub, b_ub, A_eq, b_eq, recombine


def _sample_inside(Z, rng, tries=300):
    hull = interval_hull(Z)
    for _ in range(tries):
        x = rng.uniform(hull.lower, hull.upper)
        if membership_residual(Z, x) <= 1e-9:
            return x
    return None


def test_projection_never_beaten_by_feasible_samples():
    """100 shield instances x 100 hit-and-run feasible points: none may be
    closer to the proposal than the shield's own answer (beyond 1e-6)."""
    rng = np.random.default_rng(77)
    instances = 0
    checked = 0
    while instances < 100:
        n = int(rng.integers(1, 3))
        m = int(rng.integers(0, 2))
        params = make_grid(rng, n, m, islanding_H=int(rng.integers(2, 7)))
        cap = np.sum(params.storage_p_max)
        cap_chg = -np.sum(params.storage_p_min)
        d = rng.uniform(-0.5 * cap, 0.5 * cap_chg, params.islanding_H)
        try:
            seq = compute_safe_sets(params, ForecastLowerBound(d))
        except EmptySafeSetError:
            continue
        x = _sample_inside(seq.sets[0], rng)
        if x is None:
            continue
        d_t = float(d[0])
        lo = np.concatenate([params.storage_p_min, params.market_p_min])
        hi = np.concatenate([params.storage_p_max, params.market_p_max])
        v = rng.uniform(lo, hi)
        proposal = Action(v[:n], v[n:])
        target = seq.sets[1]
        sa = project_action(proposal, x, target, d_t, params)

        A_ub, b_ub, A_eq, b_eq, recombine = _assemble_projection_qp(
            target, x, d_t, params
        )
        samples = hit_and_run(A_ub, b_ub, A_eq, b_eq, 100, rng)
        dists = np.linalg.norm(samples @ recombine.T - v, axis=1)
        # The sampled polytope is the split relaxation.  A sample may only
        # beat the projection when its simultaneous charge/discharge fakes
        # the post-step state, i.e. the recombined action is not actually
        # safe under the true sign-switched dynamics.
        for z in samples[dists < sa.correction - 1e-6]:
            e_true = step_dynamics(x, recombine @ z, params)
            assert membership_residual(target, e_true) > 1e-6, (
                f"genuinely safe sampled point beats the projection by "
                f"{sa.correction - float(np.linalg.norm(recombine @ z - v)):.3e}"
            )
        checked += len(samples)
        instances += 1
    assert instances == 100 and checked == 10_000


# -- 4. post-shield feasibility ---------------------------------------------------


def test_every_shielded_step_is_feasible(twenty_day_run):
    params, _, traces = twenty_day_run
    records = all_records(traces)
    assert max(abs(r.balance) for r in records) <= 1e-8

    lo = np.concatenate([params.storage_p_min, params.market_p_min])
    hi = np.concatenate([params.storage_p_max, params.market_p_max])
    safe = np.array([r.safe for r in records])
    assert np.all(safe >= lo - 1e-8)
    assert np.all(safe <= hi + 1e-8)

    assert max(r.target_residual for r in records) <= 1e-6
    assert max(r.overlap for r in records) <= 1e-6


# -- 5. monotone shrinkage ------------------------------------------------------


def test_safe_sets_shrink_backward_under_constant_forecast():
    rng = np.random.default_rng(99)
    configs = 0
    while configs < 20:
        n = int(rng.integers(1, 4))
        m = int(rng.integers(0, 2))
        params = make_grid(rng, n, m, islanding_H=int(rng.integers(3, 11)))
        cap = np.sum(params.storage_p_max)
        cap_chg = -np.sum(params.storage_p_min)
        d_value = float(rng.uniform(-0.3 * cap, 0.3 * cap_chg))
        d = np.full(params.islanding_H, d_value)
        try:
            hulls = compute_safe_sets(params, ForecastLowerBound(d)).hulls()
        except EmptySafeSetError:
            continue
        for s in range(len(hulls) - 1):
            assert np.all(hulls[s].lower >= hulls[s + 1].lower - 1e-9), s
            assert np.all(hulls[s].upper <= hulls[s + 1].upper + 1e-9), s
        configs += 1
    assert configs == 20


# -- 6. performance --------------------------------------------------------------


def test_shield_latency_within_real_time_budget(twenty_day_run):
    _, metrics, traces = twenty_day_run
    assert metrics["mean exec time"] <= 0.1
    assert metrics["max exec time"] <= 1.0


# -- 7. baseline contrast ---------------------------------------------------------


def test_baseline_loses_islanding_guarantee_on_stress_day():
    """Identical seeds, a sustained 4.5 kW deficit (coverable by the 5 kW
    market connection, so the scenario stays well posed), and an agent that
    tries to discharge everything: the rate-only baseline drains the
    storages below the islanding reserve; the full shield does not."""
    params = dataclasses.replace(default_grid(), horizon_T=120)
    T = params.horizon_T
    series = ExogenousSeries(
        np.full(T, -4.5), np.zeros(T), np.full(T, 0.30), np.full(T, 0.06)
    )

    def drainer(obs):
        return Action([3.5, 3.5], [0.0])

    results = {}
    for mode in (FULL_SHIELD, BASELINE_SHIELD):
        env = MicroGridEnv(params, series=series, mode=mode)
        obs = env.reset(seed=13)
        done = False
        while not done:
            obs, _, done, _ = env.step(drainer(obs))
        results[mode] = env.trace

    full, base = results[FULL_SHIELD], results[BASELINE_SHIELD]
    np.testing.assert_array_equal(
        full.records[0].e_before, base.records[0].e_before
    )
    assert not full.aborted and not base.aborted
    assert max(r.violation for r in base.records) > 0.0
    assert max(r.violation for r in full.records) <= 1e-6


# -- 8. unit equalities -----------------------------------------------------------


def test_documented_unit_examples_reproduce():
    tau = 1.0 / 60.0
    st = StorageParams(p_max=3.5, p_min=-3.5, e_max=6.54, e_min=0.34,
                       eta_d=0.98, eta_c=0.98, mu=0.012, gamma=0.15)

    # storage wear cost: |p| * gamma * tau
    assert storage_cost(3.0, st, tau) == pytest.approx(0.0075, abs=1e-9)
    assert storage_cost(-3.0, st, tau) == pytest.approx(0.0075, abs=1e-9)
    assert storage_cost(0.0, st, tau) == 0.0

    # market cost: buying 2 kW at 0.30, selling 2 kW at 0.06
    assert market_cost(2.0, 0.30, 0.06, tau) == pytest.approx(0.01, abs=1e-9)
    assert market_cost(-2.0, 0.30, 0.06, tau) == pytest.approx(0.002, abs=1e-9)
    assert market_cost(0.0, 0.30, 0.06, tau) == 0.0

    # charge dynamics: e = 5 kWh discharging 1 kW for one minute
    params = GridParams(storages=(st,), markets=(), tau=tau,
                        horizon_T=1440, islanding_H=60)
    e_next = step_dynamics([5.0], [1.0], params)[0]
    expected = 5.0 - tau / 0.98 - tau * 0.012 * 5.0
    assert e_next == pytest.approx(expected, abs=1e-9)
    assert e_next == pytest.approx(4.9819931972789115, abs=1e-9)

    # reward: cost 0.01, correction 0.2, alpha = beta = 0.5
    assert -(0.5 * 0.01 + 0.5 * 0.2 + 0.0) == pytest.approx(-0.105, abs=1e-9)

    # and the simulator reward follows exactly that formula
    env = MicroGridEnv(
        default_grid(),
        series=ExogenousSeries(
            np.full(1440, -0.8), np.full(1440, 0.2),
            np.full(1440, 0.30), np.full(1440, 0.06),
        ),
    )
    env.reset(seed=0)
    _, reward, _, info = env.step(Action([0.1, 0.1], [0.0]))
    assert abs(
        reward + env.alpha * info["cost"] + env.beta * info["correction"]
        + info["penalty"]
    ) <= 1e-9
