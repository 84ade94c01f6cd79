"""Minimal LP/QP solver contracts.

Everything above this module is solver-agnostic: callers state a problem
and get back an explicit outcome (optimal / infeasible / unbounded), with
numerical failures raised separately as :class:`SolverFailure`.

LPs are maximization problems solved with HiGHS (via scipy); the
projection QP ``min ||a - Z x||^2`` is solved with Clarabel.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

import clarabel

__all__ = [
    "DEFAULT_TOL",
    "OPTIMAL",
    "INFEASIBLE",
    "UNBOUNDED",
    "SolverFailure",
    "LinearProgram",
    "LPSolution",
    "QuadraticProgram",
    "QPSolution",
    "solve_lp",
    "solve_qp",
    "solve_qp_canonical",
]

# Feasibility / KKT residual tolerance used throughout the package.
DEFAULT_TOL = 1e-8

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


class SolverFailure(RuntimeError):
    """Numerical failure (iteration limit, loss of precision).

    Deliberately distinct from an infeasible/unbounded outcome, which is a
    valid answer rather than an error.
    """


def _as_2d(a, ncols: int):
    if a is None:
        return np.zeros((0, ncols))
    if sp.issparse(a):
        return a.tocsc()
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    return a


def _as_1d(a) -> np.ndarray:
    if a is None:
        return np.zeros(0)
    return np.atleast_1d(np.asarray(a, dtype=float))


@dataclass(frozen=True)
class LinearProgram:
    """maximize objective.x  s.t.  eq_lhs x = eq_rhs, ineq_lhs x <= ineq_rhs, lb <= x <= ub."""

    objective: np.ndarray
    eq_lhs: Optional[np.ndarray] = None
    eq_rhs: Optional[np.ndarray] = None
    ineq_lhs: Optional[np.ndarray] = None
    ineq_rhs: Optional[np.ndarray] = None
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None

    def __post_init__(self):
        n = len(np.atleast_1d(self.objective))
        object.__setattr__(self, "objective", _as_1d(self.objective))
        object.__setattr__(self, "eq_lhs", _as_2d(self.eq_lhs, n))
        object.__setattr__(self, "eq_rhs", _as_1d(self.eq_rhs))
        object.__setattr__(self, "ineq_lhs", _as_2d(self.ineq_lhs, n))
        object.__setattr__(self, "ineq_rhs", _as_1d(self.ineq_rhs))
        lb = np.full(n, -np.inf) if self.lb is None else np.broadcast_to(_as_1d(self.lb), (n,)).copy()
        ub = np.full(n, np.inf) if self.ub is None else np.broadcast_to(_as_1d(self.ub), (n,)).copy()
        object.__setattr__(self, "lb", lb)
        object.__setattr__(self, "ub", ub)
        if self.eq_lhs.shape != (len(self.eq_rhs), n):
            raise ValueError("equality block dimension mismatch")
        if self.ineq_lhs.shape != (len(self.ineq_rhs), n):
            raise ValueError("inequality block dimension mismatch")

    @property
    def n_vars(self) -> int:
        return len(self.objective)


@dataclass(frozen=True)
class QuadraticProgram:
    """minimize ||target - map.x||^2  s.t.  eq_lhs x = eq_rhs, ineq_lhs x <= ineq_rhs.

    The objective is convex by construction (Gram form); it is strictly
    convex only in the row space of ``map``.
    """

    target: np.ndarray
    map: np.ndarray
    eq_lhs: Optional[np.ndarray] = None
    eq_rhs: Optional[np.ndarray] = None
    ineq_lhs: Optional[np.ndarray] = None
    ineq_rhs: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "target", _as_1d(self.target))
        m = np.asarray(self.map, dtype=float)
        if m.ndim != 2:
            raise ValueError("map must be a matrix")
        if m.shape[0] != len(self.target):
            raise ValueError("map rows must match target length")
        object.__setattr__(self, "map", m)
        n = m.shape[1]

        def dense(a):
            return a.toarray() if sp.issparse(a) else a

        object.__setattr__(self, "eq_lhs", dense(_as_2d(self.eq_lhs, n)))
        object.__setattr__(self, "eq_rhs", _as_1d(self.eq_rhs))
        object.__setattr__(self, "ineq_lhs", dense(_as_2d(self.ineq_lhs, n)))
        object.__setattr__(self, "ineq_rhs", _as_1d(self.ineq_rhs))
        if self.eq_lhs.shape != (len(self.eq_rhs), n):
            raise ValueError("equality block dimension mismatch")
        if self.ineq_lhs.shape != (len(self.ineq_rhs), n):
            raise ValueError("inequality block dimension mismatch")

    @property
    def n_vars(self) -> int:
        return self.map.shape[1]


@dataclass(frozen=True)
class LPSolution:
    status: str
    x: Optional[np.ndarray] = None
    value: Optional[float] = None


@dataclass(frozen=True)
class QPSolution:
    status: str
    x: Optional[np.ndarray] = None
    distance: Optional[float] = None


def solve_lp(lp: LinearProgram, tol: float = DEFAULT_TOL) -> LPSolution:
    """Solve an LP with HiGHS. Returns an explicit outcome, never None."""
    bounds = np.column_stack([lp.lb, lp.ub])
    res = linprog(
        -lp.objective,
        A_ub=lp.ineq_lhs if lp.ineq_lhs.shape[0] else None,
        b_ub=lp.ineq_rhs if lp.ineq_rhs.size else None,
        A_eq=lp.eq_lhs if lp.eq_lhs.shape[0] else None,
        b_eq=lp.eq_rhs if lp.eq_rhs.size else None,
        bounds=bounds,
        method="highs",
        options={
            "primal_feasibility_tolerance": min(tol, 1e-9),
            "dual_feasibility_tolerance": min(tol, 1e-9),
        },
    )
    if res.status == 0:
        return LPSolution(OPTIMAL, np.asarray(res.x, dtype=float), float(-res.fun))
    if res.status == 2:
        return LPSolution(INFEASIBLE)
    if res.status == 3:
        return LPSolution(UNBOUNDED)
    raise SolverFailure(f"LP solver failed (HiGHS status {res.status}): {res.message}")


def solve_qp_canonical(
    P: "sp.csc_matrix",
    qvec: np.ndarray,
    A: "sp.csc_matrix",
    b: np.ndarray,
    n_eq: int,
    tol: float = DEFAULT_TOL,
) -> QPSolution:
    """Low-level conic entry: min 0.5 x'Px + q'x over Ax (=, <=) b.

    The first ``n_eq`` rows of A are equalities, the rest inequalities.
    Useful when the caller re-solves many problems sharing one assembled
    constraint matrix.  ``distance`` is left unset (the caller owns the
    objective geometry); statuses match solve_qp.
    """
    n_ineq = A.shape[0] - n_eq
    cones = []
    if n_eq:
        cones.append(clarabel.ZeroConeT(n_eq))
    if n_ineq:
        cones.append(clarabel.NonnegativeConeT(n_ineq))

    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_feas = min(tol * 1e-1, 1e-9)
    settings.tol_gap_abs = min(tol * 1e-1, 1e-9)
    settings.tol_gap_rel = min(tol * 1e-1, 1e-9)
    solver = clarabel.DefaultSolver(P, qvec, A, b, cones, settings)
    res = solver.solve()

    status = str(res.status)
    if status in ("Solved", "SolverStatus.Solved"):
        return QPSolution(OPTIMAL, np.asarray(res.x, dtype=float))
    if "PrimalInfeasible" in status:
        return QPSolution(INFEASIBLE)
    if "AlmostSolved" in status:
        # Accept only if the returned point actually meets the contract.
        x = np.asarray(res.x, dtype=float)
        r = A @ x - b
        feas = (np.max(np.abs(r[:n_eq]), initial=0.0) <= tol
                and np.max(r[n_eq:], initial=0.0) <= tol)
        if feas:
            return QPSolution(OPTIMAL, x)
        raise SolverFailure(f"QP solver returned low-accuracy solution ({status})")
    if "DualInfeasible" in status:
        # Cannot happen for a Gram objective bounded below; treat as failure.
        raise SolverFailure("QP solver reported dual infeasibility")
    raise SolverFailure(f"QP solver failed: {status}")


def solve_qp(qp: QuadraticProgram, tol: float = DEFAULT_TOL) -> QPSolution:
    """Project onto the feasible polyhedron: min ||target - map.x||^2.

    Uses Clarabel (interior point). ``distance`` is the Euclidean norm of
    the objective residual at the minimizer.
    """
    if qp.eq_rhs.size == 0 and qp.ineq_rhs.size == 0:
        # Unconstrained least squares.
        x, *_ = np.linalg.lstsq(qp.map, qp.target, rcond=None)
        return QPSolution(OPTIMAL, x, float(np.linalg.norm(qp.target - qp.map @ x)))

    # Gram matrix built sparsely: the projection maps are row-sparse selectors,
    # so this avoids materializing an n x n dense block.
    M_sp = sp.csc_matrix(qp.map)
    P = (2.0 * (M_sp.T @ M_sp)).tocsc()
    qvec = -2.0 * (qp.map.T @ qp.target)

    if qp.eq_rhs.size and qp.ineq_rhs.size:
        A = sp.csc_matrix(np.vstack([qp.eq_lhs, qp.ineq_lhs]))
        b = np.concatenate([qp.eq_rhs, qp.ineq_rhs])
    elif qp.eq_rhs.size:
        A = sp.csc_matrix(qp.eq_lhs)
        b = qp.eq_rhs
    else:
        A = sp.csc_matrix(qp.ineq_lhs)
        b = qp.ineq_rhs

    sol = solve_qp_canonical(P, qvec, A, b, n_eq=len(qp.eq_rhs), tol=tol)
    if sol.status != OPTIMAL:
        return sol
    return QPSolution(
        OPTIMAL, sol.x, float(np.linalg.norm(qp.target - qp.map @ sol.x))
    )
