from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridshield.czono import (
    contains,
    from_interval,
    interval_hull,
    is_empty,
)
from gridshield.gridmodel import (
    GridParams,
    StorageParams,
    build_A,
    build_B,
)
from gridshield.reach import (
    EmptySafeSetError,
    ForecastLowerBound,
    clear_caches,
    compute_safe_sets,
    islanding_input_set,
    one_step_backward,
)

from conftest import assert_box_close, make_grid_1s
from oracles import forced_input_trajectories, gridded_safe_hull


def simple_grid(*, p_max=2.0, p_min=-2.0, e_max=10.0, e_min=0.0, tau=1.0,
                eta_d=1.0, eta_c=1.0, mu=0.0, n=1, H=2) -> GridParams:
    return GridParams(
        storages=(StorageParams(p_max=p_max, p_min=p_min, e_max=e_max,
                                e_min=e_min, eta_d=eta_d, eta_c=eta_c, mu=mu),) * n,
        markets=(),
        tau=tau,
        horizon_T=1440,
        islanding_H=H,
    )


def flb(values) -> ForecastLowerBound:
    return ForecastLowerBound(np.asarray(values, dtype=float))


# ---------------------------------------------------------------------------
# islanding_input_set


def test_input_set_deficit_pins_discharge():
    Z = islanding_input_set(-1.0, simple_grid())
    np.testing.assert_allclose(Z.center, [1.0])
    np.testing.assert_allclose(Z.generators, [[1.0]])
    np.testing.assert_allclose(Z.con_lhs, [[1.0]])
    np.testing.assert_allclose(Z.con_rhs, [0.0])
    assert_box_close(interval_hull(Z), [1.0], [1.0])


def test_input_set_surplus_pins_charge():
    Z = islanding_input_set(1.0, simple_grid())
    assert_box_close(interval_hull(Z), [-1.0], [-1.0])
    assert contains(Z, np.array([-1.0]))


def test_input_set_two_storages_share_deficit():
    Z = islanding_input_set(-1.0, simple_grid(n=2))
    for u in ([1.0, 0.0], [0.0, 1.0], [0.5, 0.5]):
        assert contains(Z, np.array(u))
    assert not contains(Z, np.array([1.0, 1.0]))
    assert not contains(Z, np.array([-0.5, 1.5]))


def test_input_set_markets_pinned_to_zero():
    from gridshield.gridmodel import default_grid

    Z = islanding_input_set(-2.0, default_grid())
    assert Z.dim == 3
    hull = interval_hull(Z)
    assert hull.lower[2] == pytest.approx(0.0, abs=1e-9)
    assert hull.upper[2] == pytest.approx(0.0, abs=1e-9)
    assert contains(Z, np.array([1.0, 1.0, 0.0]))
    assert not contains(Z, np.array([1.0, 0.0, 1.0]))


def test_input_set_beyond_capability_is_empty():
    assert is_empty(islanding_input_set(-5.0, simple_grid()))
    assert is_empty(islanding_input_set(5.0, simple_grid()))
    assert not is_empty(islanding_input_set(-2.0, simple_grid()))


# ---------------------------------------------------------------------------
# one_step_backward


def box_cz(lo, up):
    from gridshield.czono import IntervalBox

    return from_interval(IntervalBox(np.atleast_1d(np.asarray(lo, float)),
                                     np.atleast_1d(np.asarray(up, float))))


def test_backward_interval_shift():
    X = one_step_backward(box_cz(0.0, 10.0), box_cz(1.0, 1.0),
                          np.eye(1), np.array([[-1.0]]))
    assert_box_close(interval_hull(X), [1.0], [11.0])


def test_backward_zero_input_is_inverse_decay():
    X = one_step_backward(box_cz(1.0, 2.0), box_cz(0.0, 0.0),
                          np.array([[0.8]]), np.array([[-1.0]]))
    assert_box_close(interval_hull(X), [1.25], [2.5])


def test_backward_pure_scaling():
    X = one_step_backward(box_cz(0.0, 1.0), box_cz(0.0, 0.0),
                          0.5 * np.eye(1), np.array([[1.0]]))
    assert_box_close(interval_hull(X), [0.0], [2.0])


def test_backward_rejects_non_diagonal_A():
    with pytest.raises(ValueError):
        one_step_backward(box_cz([0, 0], [1, 1]), box_cz([0, 0], [0, 0]),
                          np.array([[1.0, 0.1], [0.0, 1.0]]), np.zeros((2, 2)))


# ---------------------------------------------------------------------------
# compute_safe_sets: worked examples


def test_safe_sets_two_step_deficit():
    g = simple_grid(H=2)
    seq = compute_safe_sets(g, flb([-1.0, -1.0]))
    assert len(seq.sets) == 3
    assert_box_close(interval_hull(seq.sets[0]), [2.0], [10.0])
    assert_box_close(interval_hull(seq.sets[1]), [1.0], [10.0])


def test_safe_sets_one_step_surplus():
    g = simple_grid(H=1)
    seq = compute_safe_sets(g, flb([1.0]))
    assert_box_close(interval_hull(seq.sets[0]), [0.0], [9.0])


def test_safe_sets_zero_net_load_keeps_box():
    g = simple_grid(H=4)
    seq = compute_safe_sets(g, flb([0.0] * 4))
    for Z in seq.sets:
        assert_box_close(interval_hull(Z), [0.0], [10.0])


def test_final_set_is_charge_box_fields():
    g = simple_grid(H=3)
    seq = compute_safe_sets(g, flb([-1.0, 0.5, -0.5]))
    box = from_interval(g.charge_box())
    np.testing.assert_array_equal(seq.sets[-1].center, box.center)
    np.testing.assert_array_equal(seq.sets[-1].generators, box.generators)
    assert seq.sets[-1].n_constraints == 0
    assert seq.forecast_used.d_lower[0] == -1.0


# ---------------------------------------------------------------------------
# errors


def test_unsatisfiable_balance_reports_offset():
    g = simple_grid(H=4)
    with pytest.raises(EmptySafeSetError) as ei:
        compute_safe_sets(g, flb([-1.0, -1.0, -3.0, -1.0]))
    assert ei.value.index == 2
    assert "offset 2" in str(ei.value)


def test_unsatisfiable_surplus_reports_offset():
    g = simple_grid(H=2)
    with pytest.raises(EmptySafeSetError) as ei:
        compute_safe_sets(g, flb([4.0, 0.0]))
    assert ei.value.index == 0


def test_box_exhaustion_is_reported():
    # per-step balance feasible, but the 0.5 kWh box cannot sustain two
    # 1 kW discharge steps
    g = simple_grid(e_max=0.5, H=2)
    with pytest.raises(EmptySafeSetError):
        compute_safe_sets(g, flb([-1.0, -1.0]))


def test_forecast_length_mismatch():
    with pytest.raises(ValueError):
        compute_safe_sets(simple_grid(H=3), flb([-1.0]))


# ---------------------------------------------------------------------------
# equivalence with a naive public-op recursion (exercises the template cache)


def naive_recursion(params: GridParams, d):
    from gridshield.czono import intersect

    A = build_A(params)
    xlim = from_interval(params.charge_box())
    n = params.n_storage
    X = xlim
    out = [X]
    for dv in reversed(d):
        mode = -1 if dv >= 0.0 else 1
        U = islanding_input_set(dv, params)
        B = build_B(params, (mode,) * n)
        X = intersect(one_step_backward(X, U, A, B), xlim)
        out.append(X)
    return list(reversed(out))


@pytest.mark.parametrize("d_series", [
    [-1.0, -0.5, -1.5],
    [1.0, 0.5, 1.5],
    [-1.0, 0.5, -0.5, 0.0, 1.0],   # mode changes inside the window
])
def test_matches_naive_recursion_bitwise(d_series):
    from gridshield.gridmodel import default_grid

    g = GridParams(storages=default_grid().storages,
                   markets=default_grid().markets,
                   tau=1.0 / 60.0, horizon_T=1440, islanding_H=len(d_series))
    clear_caches()
    seq = compute_safe_sets(g, flb(d_series))
    naive = naive_recursion(g, d_series)
    for Z_fast, Z_ref in zip(seq.sets, naive):
        np.testing.assert_array_equal(Z_fast.center, Z_ref.center)
        np.testing.assert_array_equal(Z_fast.generators, Z_ref.generators)
        np.testing.assert_array_equal(Z_fast.con_lhs, Z_ref.con_lhs)
        np.testing.assert_array_equal(Z_fast.con_rhs, Z_ref.con_rhs)


def test_result_cache_returns_identical_objects():
    g = simple_grid(H=3)
    clear_caches()
    s1 = compute_safe_sets(g, flb([-1.0, -1.0, -1.0]))
    s2 = compute_safe_sets(g, flb([-1.0, -1.0, -1.0]))
    assert s1.sets[0] is s2.sets[0]
    clear_caches()
    s3 = compute_safe_sets(g, flb([-1.0, -1.0, -1.0]))
    np.testing.assert_array_equal(s1.sets[0].con_rhs, s3.sets[0].con_rhs)


def test_concurrent_computation_is_safe():
    g = simple_grid(H=5)
    clear_caches()
    rng = np.random.default_rng(0)
    series = [rng.uniform(-1.5, 1.5, 5) for _ in range(16)]

    def work(d):
        return interval_hull(compute_safe_sets(g, flb(d)).sets[0])

    with ThreadPoolExecutor(max_workers=8) as pool:
        hulls = list(pool.map(work, series))
    for d, hull in zip(series, hulls):
        clear_caches()
        ref = interval_hull(compute_safe_sets(g, flb(d)).sets[0])
        np.testing.assert_allclose(hull.lower, ref.lower, atol=1e-9)
        np.testing.assert_allclose(hull.upper, ref.upper, atol=1e-9)


# ---------------------------------------------------------------------------
# oracle agreement and safety semantics (single storage: input is forced)


def storage_kwargs(g: GridParams) -> dict:
    s = g.storages[0]
    return dict(e_min=s.e_min, e_max=s.e_max, p_max=s.p_max, p_min=s.p_min,
                eta_d=s.eta_d, eta_c=s.eta_c, mu=s.mu, tau=g.tau)


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=10, deadline=None)
def test_hull_matches_gridded_dp(seed):
    rng = np.random.default_rng(seed)
    H = int(rng.integers(1, 11))
    g = make_grid_1s(rng, islanding_H=H)
    s = g.storages[0]
    cap = min(s.p_max, -s.p_min) * 0.9
    d = rng.uniform(-cap, cap, H)
    oracle = gridded_safe_hull(d, **storage_kwargs(g))
    try:
        seq = compute_safe_sets(g, flb(d))
    except EmptySafeSetError:
        assert oracle is None
        return
    assert oracle is not None
    hull = interval_hull(seq.sets[0])
    assert hull.lower[0] == pytest.approx(oracle[0], abs=2e-3)
    assert hull.upper[0] == pytest.approx(oracle[1], abs=2e-3)


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=10, deadline=None)
def test_monotone_shrinkage_under_constant_forecast(seed):
    rng = np.random.default_rng(seed)
    H = int(rng.integers(2, 12))
    g = make_grid_1s(rng, islanding_H=H)
    s = g.storages[0]
    dv = float(rng.uniform(-0.9 * s.p_max, 0.9 * (-s.p_min)))
    try:
        seq = compute_safe_sets(g, flb([dv] * H))
    except EmptySafeSetError:
        return
    hulls = [interval_hull(Z) for Z in seq.sets]
    for a, b in zip(hulls, hulls[1:]):
        assert np.all(a.lower >= b.lower - 1e-9)
        assert np.all(a.upper <= b.upper + 1e-9)


def test_safety_semantics_forced_input():
    # inside sets[0]: the (unique) balanced trajectory stays in the box;
    # outside by more than 2e-3: it provably cannot
    rng = np.random.default_rng(42)
    g = make_grid_1s(rng, islanding_H=8)
    s = g.storages[0]
    cap = min(s.p_max, -s.p_min) * 0.8
    d = rng.uniform(-cap, cap, 8)
    seq = compute_safe_sets(g, flb(d))
    hull = interval_hull(seq.sets[0])
    lo, hi = float(hull.lower[0]), float(hull.upper[0])
    kw = storage_kwargs(g)

    inside = rng.uniform(lo, hi, 500)
    assert np.all(forced_input_trajectories(inside, d, **kw))

    outside = []
    if lo - 2e-3 > s.e_min:
        outside.append(np.linspace(s.e_min, lo - 2e-3, 100))
    if hi + 2e-3 < s.e_max:
        outside.append(np.linspace(hi + 2e-3, s.e_max, 100))
    if outside:
        pts = np.concatenate(outside)
        assert not np.any(forced_input_trajectories(pts, d, **kw))
