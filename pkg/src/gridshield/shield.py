"""Safety layer: project proposed actions onto the safe action set.

The projection QP solves, over the joint vector [beta; u_split],

    min || a - Z [beta; u_split] ||^2

subject to the next charge state hitting the safe set (written through
its factor representation), the balance equation, and the rate polytope.
Splitting storage power into discharge (>= 0) and charge (<= 0) parts
makes the efficiency-switched dynamics linear; Z recombines the parts
into the executed action.

The split relaxation admits simultaneous charge/discharge, which the
objective cannot see (only the recombined action enters the distance).
Because burning energy through overlap moves the post-step state, the
projection certifies the *executed* action separately: it steps the true
sign-switched dynamics, checks that state's membership in the safe set
(an LP giving the optimal witness residual), and reports the canonical
overlap-free split, which preserves balance and rate feasibility.

When the certificate shows the relaxation was genuinely exploited (the
optimizer can fake a lower post-state wherever an upper boundary of the
safe set binds -- the physical charge cap, or an energy ceiling the
islanding guarantee imposes mid-range -- since set membership there is a
*superlevel* set of the convex loss term and hence nonconvex in the net
power), the projection falls back to branching on the sign of each
storage's net power: per sign pattern the dynamics are linear, so the
best feasible pattern QP is the exact projection.  The branch count is
2^n_storage, paid only on certified-loose steps.
"""

from __future__ import annotations

import itertools
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .czono import (
    ConstrainedZonotope,
    EmptySetError,
    from_interval,
    membership_residual,
    support,
)
from .gridmodel import (
    GridParams,
    build_A,
    build_B,
    build_B_split,
    build_rate_polytope,
    step_dynamics,
)
from .lpqp import (
    DEFAULT_TOL,
    OPTIMAL,
    LinearProgram,
    SolverFailure,
    solve_lp,
    solve_qp_canonical,
)

__all__ = [
    "Action",
    "SafeAction",
    "ShieldInfeasibleError",
    "project_action",
    "project_action_baseline",
    "safety_violation",
]

# Below this, a split is considered overlap-free (no simultaneous
# charge/discharge beyond solver noise).
_OVERLAP_TOL = 1e-9

# When the solve lands this close to the proposal, the proposal itself is
# checked for admissibility and, if it passes, returned unchanged.  The QP
# gap tolerance only bounds the recovered distance by sqrt(gap) near a
# zero-distance optimum, so without this the projection of an already-safe
# action could drift by ~1e-5 instead of being a fixed point.
_NEAR_FIXED_POINT = 1e-4


class ShieldInfeasibleError(RuntimeError):
    """No admissible balanced input keeps the next state safe."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class Action:
    """Proposed power set-points: storage entries then market entries."""

    p_storage: np.ndarray
    p_market: np.ndarray

    def __post_init__(self):
        ps = np.atleast_1d(np.asarray(self.p_storage, dtype=float))
        pm = np.asarray(self.p_market, dtype=float).reshape(-1)
        if not (np.all(np.isfinite(ps)) and np.all(np.isfinite(pm))):
            raise ValueError("action entries must be finite")
        ps = ps.copy()
        pm = pm.copy()
        ps.flags.writeable = False
        pm.flags.writeable = False
        object.__setattr__(self, "p_storage", ps)
        object.__setattr__(self, "p_market", pm)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.p_storage, self.p_market])

    @staticmethod
    def from_vector(v, n_storage: int, n_markets: int) -> "Action":
        v = np.asarray(v, dtype=float).reshape(-1)
        if len(v) != n_storage + n_markets:
            raise ValueError(f"action vector must have length {n_storage + n_markets}")
        return Action(v[:n_storage], v[n_storage:])


@dataclass(frozen=True)
class SafeAction:
    """Projected action plus the solve diagnostics.

    correction is the Euclidean distance to the proposal; split_input is
    the internal (2n+m) discharge/charge/market solution consistent with
    the action (p_storage = discharge + charge parts); target_residual
    bounds how far the true-dynamics next state is from the safe set's
    factor representation (inf-norm witness residual).
    """

    action: Action
    correction: float
    split_input: np.ndarray
    shield_time: float
    target_residual: float

    def __post_init__(self):
        si = np.asarray(self.split_input, dtype=float).copy()
        si.flags.writeable = False
        object.__setattr__(self, "split_input", si)
        if self.correction < 0.0:
            raise ValueError("correction must be nonnegative")


def _recombine_map(n: int, m: int, g: int) -> np.ndarray:
    """Z: [beta; p_dis; p_chg; p_mkt] -> executed action [p_storage; p_market]."""
    y = 2 * n + m
    Z = np.zeros((n + m, g + y))
    Z[:n, g:g + n] = np.eye(n)
    Z[:n, g + n:g + 2 * n] = np.eye(n)
    Z[n:, g + 2 * n:] = np.eye(m)
    return Z


def _witness_residual(
    X: ConstrainedZonotope, beta: np.ndarray, point: np.ndarray
) -> float:
    """How well beta certifies `point` as a member of X (inf-norm)."""
    r = float(np.max(np.abs(X.center + X.generators @ beta - point)))
    if X.n_constraints:
        r = max(r, float(np.max(np.abs(X.con_lhs @ beta - X.con_rhs))))
    r = max(r, float(np.max(np.abs(beta)) - 1.0))
    return r


class _Assembly:
    """Solver-ready constraint matrices for one safe-set structure.

    Everything here depends only on (params, generators, con_lhs) — the
    per-call pieces are the rhs vectors and the linear objective term.
    Row layout: [next-state rows; factor constraints; balance; beta box
    (two signs); rate polytope], with Z-pin rows spliced after the
    balance row in the stage-2 variant.
    """

    __slots__ = ("anchor", "A_dyn", "Z", "n_eq1", "A1", "P1", "ineq_rhs")

    def __init__(self, params: GridParams, X: ConstrainedZonotope):
        n, m = params.n_storage, params.n_markets
        g, q, y = X.n_generators, X.n_constraints, 2 * n + m
        self.anchor = (X.generators, X.con_lhs)
        self.A_dyn = build_A(params)
        B_split = build_B_split(params)
        W, w = build_rate_polytope(params)
        Z = _recombine_map(n, m, g)
        self.Z = Z

        eq_lhs = np.zeros((n + q + 1, g + y))
        eq_lhs[:n, :g] = X.generators
        eq_lhs[:n, g:] = -B_split
        if q:
            eq_lhs[n:n + q, :g] = X.con_lhs
        eq_lhs[n + q, g:] = 1.0

        ineq_lhs = np.zeros((2 * g + len(w), g + y))
        ineq_lhs[:g, :g] = np.eye(g)
        ineq_lhs[g:2 * g, :g] = -np.eye(g)
        ineq_lhs[2 * g:, g:] = W
        self.ineq_rhs = np.concatenate([np.ones(2 * g), w])

        self.n_eq1 = n + q + 1
        self.A1 = sp.csc_matrix(np.vstack([eq_lhs, ineq_lhs]))
        self.P1 = (2.0 * (sp.csc_matrix(Z).T @ sp.csc_matrix(Z))).tocsc()


class _AssemblyCache:
    """LRU keyed by (params, identity of the shared template arrays).

    Values hold strong references to the keyed arrays (via _Assembly.anchor)
    so an id cannot be recycled while its entry lives.
    """

    def __init__(self, maxsize: int = 8):
        self._lock = threading.Lock()
        self._entries: OrderedDict = OrderedDict()
        self.maxsize = maxsize

    def get(self, params: GridParams, X: ConstrainedZonotope) -> _Assembly:
        key = (params, id(X.generators), id(X.con_lhs))
        with self._lock:
            hit = self._entries.get(key)
            if hit is not None and hit.anchor[0] is X.generators and hit.anchor[1] is X.con_lhs:
                self._entries.move_to_end(key)
                return hit
        asm = _Assembly(params, X)
        with self._lock:
            self._entries[key] = asm
            self._entries.move_to_end(key)
            while len(self._entries) > self.maxsize:
                self._entries.popitem(last=False)
        return asm

    def clear(self):
        with self._lock:
            self._entries.clear()


_ASSEMBLY = _AssemblyCache()

_XLIM_LOCK = threading.Lock()
_XLIM_MEMO: dict = {}


def _charge_box_set(params: GridParams) -> ConstrainedZonotope:
    # Memoized so baseline projections share one assembly per grid.
    with _XLIM_LOCK:
        Z = _XLIM_MEMO.get(params)
        if Z is None:
            Z = from_interval(params.charge_box())
            if len(_XLIM_MEMO) > 32:
                _XLIM_MEMO.clear()
            _XLIM_MEMO[params] = Z
        return Z


def clear_caches() -> None:
    _ASSEMBLY.clear()
    with _XLIM_LOCK:
        _XLIM_MEMO.clear()


def _rates_and_balance_ok(a_vec: np.ndarray, d_t: float, params: GridParams,
                          tol: float) -> bool:
    n = params.n_storage
    if abs(float(np.sum(a_vec)) + d_t) > tol:
        return False
    if np.any(a_vec[:n] > params.storage_p_max + tol) or np.any(
            a_vec[:n] < params.storage_p_min - tol):
        return False
    return not (np.any(a_vec[n:] > params.market_p_max + tol)
                or np.any(a_vec[n:] < params.market_p_min - tol))


def _raise_infeasible(X_next: ConstrainedZonotope, x: np.ndarray, d_t: float) -> None:
    try:
        from .czono import interval_hull

        hull = interval_hull(X_next)
        hull_info = {"lower": hull.lower.tolist(), "upper": hull.upper.tolist()}
    except EmptySetError:
        hull_info = "empty"
    raise ShieldInfeasibleError(
        "no admissible balanced input keeps the next state safe",
        diagnostics={
            "d_t": float(d_t),
            "state": x.tolist(),
            "safe_set_hull": hull_info,
        },
    )


def _exact_sign_projection(
    a_vec: np.ndarray,
    x: np.ndarray,
    X_next: ConstrainedZonotope,
    d_t: float,
    params: GridParams,
    tol: float,
):
    """Exact projection with each storage's net-power sign fixed per branch.

    The split relaxation can hide extra round-trip losses by charging and
    discharging one storage at once, faking a lower post-step state wherever
    an upper boundary of the safe set binds (the physical cap, or an energy
    ceiling the islanding guarantee imposes mid-range).  Fixing the sign of
    every storage's net power makes
    the efficiency-switched dynamics linear on that branch, so enumerating
    the 2^n sign patterns and keeping the closest feasible branch recovers
    the exact nearest safe action.  Returns ``(u_net, beta)`` for the best
    branch, or ``None`` when every branch is infeasible.
    """
    n, m = params.n_storage, params.n_markets
    g = X_next.n_generators
    G, F, b = X_next.generators, X_next.con_lhs, X_next.con_rhs
    q = F.shape[0] if F.size else 0
    state_rhs = build_A(params) @ x - X_next.center

    # Distance is measured on the net action only; factors are free.
    P = sp.block_diag(
        [sp.csc_matrix((g, g)), 2.0 * sp.identity(n + m, format="csc")],
        format="csc",
    )
    q_lin = np.concatenate([np.zeros(g), -2.0 * a_vec])

    eq_beta = np.vstack([G, F.reshape(q, g), np.zeros((1, g))])
    balance_row = np.ones((1, n + m))
    box_rows = sp.vstack(
        [
            sp.hstack([sp.identity(g), sp.csc_matrix((g, n + m))]),
            sp.hstack([-sp.identity(g), sp.csc_matrix((g, n + m))]),
            sp.hstack([sp.csc_matrix((n + m, g)), sp.identity(n + m)]),
            sp.hstack([sp.csc_matrix((n + m, g)), -sp.identity(n + m)]),
        ],
        format="csc",
    )
    n_eq = n + q + 1

    best_dist = np.inf
    best: tuple[np.ndarray, np.ndarray] | None = None
    mkt_hi, mkt_lo = params.market_p_max, params.market_p_min
    for pattern in itertools.product((1, -1), repeat=n):
        modes = np.asarray(pattern, dtype=float)
        hi = np.where(modes > 0, params.storage_p_max, 0.0)
        lo = np.where(modes > 0, 0.0, params.storage_p_min)
        # Quick reject: the balance target must lie in the branch's span.
        if -d_t < float(np.sum(lo) + np.sum(mkt_lo)) - tol:
            continue
        if -d_t > float(np.sum(hi) + np.sum(mkt_hi)) + tol:
            continue
        B_sigma = build_B(params, modes)
        eq_u = np.vstack([-B_sigma, np.zeros((q, n + m)), balance_row])
        A1 = sp.vstack(
            [sp.hstack([sp.csc_matrix(eq_beta), sp.csc_matrix(eq_u)]), box_rows],
            format="csc",
        )
        rhs = np.concatenate(
            [state_rhs, b, [-d_t],
             np.ones(2 * g),
             np.concatenate([hi, mkt_hi]), -np.concatenate([lo, mkt_lo])]
        )
        try:
            sol = solve_qp_canonical(P, q_lin, A1, rhs, n_eq=n_eq, tol=tol)
            z = sol.x if sol.status == OPTIMAL else None
        except SolverFailure:
            # The interior-point solver stalls almost exclusively on
            # marginally infeasible branches (violations of ~1e-5 defeat
            # its infeasibility certificate), typically when the state
            # rides the safe set's boundary.  A simplex feasibility check
            # settles the branch: a provably infeasible branch is
            # discarded, a feasible one is retried with a curvature floor
            # on the factors, keeping the feasible point itself as a last
            # resort.  Dropping a stalled branch is sound -- the caller
            # re-certifies whatever is adopted -- it can only enlarge the
            # correction.
            lp_sol = solve_lp(
                LinearProgram(
                    objective=np.zeros(g + n + m),
                    eq_lhs=A1[:n_eq],
                    eq_rhs=rhs[:n_eq],
                    lb=np.concatenate([-np.ones(g), lo, mkt_lo]),
                    ub=np.concatenate([np.ones(g), hi, mkt_hi]),
                ),
                tol=tol,
            )
            if lp_sol.status != OPTIMAL:
                continue
            z = lp_sol.x
            try:
                ridged = P + 1e-8 * sp.identity(P.shape[0], format="csc")
                sol = solve_qp_canonical(ridged, q_lin, A1, rhs, n_eq=n_eq, tol=tol)
                if sol.status == OPTIMAL:
                    z = sol.x
            except SolverFailure:
                pass
        if z is None:
            continue
        u_net = z[g:]
        dist = float(np.linalg.norm(u_net - a_vec))
        if dist < best_dist:
            best_dist = dist
            best = (u_net, z[:g])
    return best


def _project(
    a: Action,
    x: np.ndarray,
    X_next: ConstrainedZonotope,
    d_t: float,
    params: GridParams,
    tol: float,
) -> SafeAction:
    t_start = time.perf_counter()
    n, m = params.n_storage, params.n_markets
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (n,):
        raise ValueError(f"state must have length {n}")
    a_vec = a.vector()
    if len(a_vec) != n + m:
        raise ValueError("action dimension does not match the grid")

    g = X_next.n_generators
    asm = _ASSEMBLY.get(params, X_next)
    Z = asm.Z
    eq_rhs = np.concatenate([asm.A_dyn @ x - X_next.center, X_next.con_rhs, [-d_t]])

    q1 = -2.0 * (Z.T @ a_vec)
    try:
        sol = solve_qp_canonical(
            asm.P1, q1, asm.A1, np.concatenate([eq_rhs, asm.ineq_rhs]),
            n_eq=asm.n_eq1, tol=tol,
        )
        if sol.status != OPTIMAL:
            _raise_infeasible(X_next, x, d_t)
    except SolverFailure:
        # The relaxed projection is only a fast path.  When the interior-
        # point solve stalls without a verdict, decide the step with the
        # exact sign-branch enumeration instead of crashing it.
        sol = None

    need_exact = sol is None
    if sol is not None:
        u_split = sol.x[g:]
        p_storage = u_split[:n] + u_split[n:2 * n]
        safe = Action(p_storage, u_split[2 * n:])
        safe_vec = safe.vector()
        correction = float(np.linalg.norm(a_vec - safe_vec))

        if correction <= _NEAR_FIXED_POINT and _rates_and_balance_ok(a_vec, d_t, params, tol):
            e_prop = step_dynamics(x, a_vec, params)
            residual_prop = membership_residual(X_next, e_prop)
            if residual_prop <= 10.0 * tol:
                u_canon = np.concatenate(
                    [np.maximum(a_vec[:n], 0.0), np.minimum(a_vec[:n], 0.0), a_vec[n:]]
                )
                return SafeAction(
                    action=Action(a_vec[:n], a_vec[n:]),
                    correction=0.0,
                    split_input=u_canon,
                    shield_time=time.perf_counter() - t_start,
                    target_residual=residual_prop,
                )

        # True (sign-switched) next state for the executed action.
        e_true = step_dynamics(x, safe_vec, params)
        overlap = float(np.max(np.minimum(u_split[:n], -u_split[n:2 * n]), initial=0.0))
        residual = _witness_residual(X_next, sol.x[:g], e_true)

        if overlap > _OVERLAP_TOL or residual > 10.0 * tol:
            # The solver split simultaneous charge/discharge, so its factor
            # certificate speaks for a different post-state than the executed
            # action produces.  The canonical split of the same action keeps
            # balance and rate feasibility (per-component it only shrinks
            # magnitudes), and the true post-state's membership is an LP.
            p_st = safe_vec[:n]
            u_canon = np.concatenate(
                [np.maximum(p_st, 0.0), np.minimum(p_st, 0.0), safe_vec[n:]]
            )
            residual_lp = membership_residual(X_next, e_true)
            if residual_lp <= residual:
                u_split, residual = u_canon, residual_lp
            if residual > 10.0 * tol:
                # The relaxation was genuinely exploited: no split of this
                # net action lands the true dynamics in the safe set.
                need_exact = True

    if need_exact:
        # Re-solve exactly, branching on each storage's net-power sign.
        exact = _exact_sign_projection(a_vec, x, X_next, d_t, params, tol)
        if exact is None:
            _raise_infeasible(X_next, x, d_t)
        u_net, beta = exact
        safe = Action(u_net[:n], u_net[n:])
        safe_vec = safe.vector()
        correction = float(np.linalg.norm(a_vec - safe_vec))
        e_true = step_dynamics(x, safe_vec, params)
        u_split = np.concatenate(
            [np.maximum(u_net[:n], 0.0), np.minimum(u_net[:n], 0.0), u_net[n:]]
        )
        residual = min(
            _witness_residual(X_next, beta, e_true),
            membership_residual(X_next, e_true),
        )

    return SafeAction(
        action=safe,
        correction=correction,
        split_input=u_split,
        shield_time=time.perf_counter() - t_start,
        target_residual=residual,
    )


def project_action(
    a: Action,
    x,
    X_safe_next: ConstrainedZonotope,
    d_t: float,
    params: GridParams,
    tol: float = DEFAULT_TOL,
) -> SafeAction:
    """Nearest action whose successor state provably stays islanding-safe."""
    return _project(a, np.asarray(x, dtype=float), X_safe_next, float(d_t), params, tol)


def project_action_baseline(
    a: Action,
    x,
    d_t: float,
    params: GridParams,
    tol: float = DEFAULT_TOL,
) -> SafeAction:
    """Projection that only keeps the next state inside the charge box
    (plus balance and rate constraints) — no islanding lookahead."""
    X_lim = _charge_box_set(params)
    return _project(a, np.asarray(x, dtype=float), X_lim, float(d_t), params, tol)


def safety_violation(x, X_safe: ConstrainedZonotope) -> float:
    """Minimum total charge the safe set requires minus the actual total.

    Positive means the state cannot guarantee islanding survival.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    min_sum = -support(X_safe, -np.ones(X_safe.dim))
    return float(min_sum - np.sum(x))
