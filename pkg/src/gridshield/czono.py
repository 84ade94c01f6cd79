"""Constrained zonotope set algebra.

A constrained zonotope is the affine image of a box sliced by linear
equalities::

    Z = { center + generators @ beta : ||beta||_inf <= 1,
          con_lhs @ beta = con_rhs }

The family is closed under linear maps, Minkowski sums and intersections,
which is exactly what backward reachability needs.  Representations are
not unique, so set equality is only ever checked through support
functions or interval hulls, never by comparing fields directly.
"""

from __future__ import annotations

import json
import threading
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .lpqp import (
    DEFAULT_TOL,
    INFEASIBLE,
    OPTIMAL,
    LinearProgram,
    SolverFailure,
    solve_lp,
)

__all__ = [
    "IntervalBox",
    "ConstrainedZonotope",
    "EmptySetError",
    "from_interval",
    "linear_map",
    "minkowski_sum",
    "intersect",
    "is_empty",
    "contains",
    "membership_residual",
    "support",
    "interval_hull",
    "clear_caches",
]


class EmptySetError(ValueError):
    """Raised when an operation needs a non-empty set but got an empty one."""


def _frozen(a) -> np.ndarray:
    # Already-immutable arrays are shared, not copied: safe-set templates
    # reuse their (large) generator/constraint matrices across calls.
    a = np.asarray(a, dtype=float)
    if a.flags.writeable:
        a = a.copy()
        a.flags.writeable = False
    return a


@dataclass(frozen=True)
class IntervalBox:
    """Axis-aligned box [lower, upper] (componentwise)."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = _frozen(np.atleast_1d(self.lower))
        hi = _frozen(np.atleast_1d(self.upper))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower/upper must be 1-D arrays of equal length")
        if np.any(lo > hi):
            raise ValueError("lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def radius(self) -> np.ndarray:
        return 0.5 * (self.upper - self.lower)

    def contains(self, x, tol: float = DEFAULT_TOL) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))


@dataclass(frozen=True)
class ConstrainedZonotope:
    """{center + generators beta : ||beta||_inf <= 1, con_lhs beta = con_rhs}."""

    center: np.ndarray
    generators: np.ndarray
    con_lhs: np.ndarray
    con_rhs: np.ndarray

    def __post_init__(self):
        c = _frozen(np.atleast_1d(self.center))
        G = np.asarray(self.generators, dtype=float)
        if G.ndim != 2:
            G = G.reshape(len(c), -1)
        b = np.atleast_1d(np.asarray(self.con_rhs, dtype=float))
        F = np.asarray(self.con_lhs, dtype=float)
        if F.size == 0:
            F = F.reshape(len(b), G.shape[1])
        if G.shape[0] != len(c):
            raise ValueError("generators must have len(center) rows")
        if F.shape != (len(b), G.shape[1]):
            raise ValueError("con_lhs must be (len(con_rhs), n_generators)")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "generators", _frozen(G))
        object.__setattr__(self, "con_lhs", _frozen(F))
        object.__setattr__(self, "con_rhs", _frozen(b))

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def n_generators(self) -> int:
        return self.generators.shape[1]

    @property
    def n_constraints(self) -> int:
        return len(self.con_rhs)

    # -- serialization: JSON object with keys c/G/F/b, row-major arrays --

    def to_dict(self) -> dict:
        return {
            "c": self.center.tolist(),
            "G": self.generators.tolist(),
            "F": self.con_lhs.tolist(),
            "b": self.con_rhs.tolist(),
        }

    @staticmethod
    def from_dict(d: dict) -> "ConstrainedZonotope":
        c = np.asarray(d["c"], dtype=float)
        G = np.asarray(d["G"], dtype=float)
        F = np.asarray(d["F"], dtype=float)
        b = np.asarray(d["b"], dtype=float)
        if G.ndim != 2:
            G = G.reshape(len(c), -1)
        if F.ndim != 2:
            F = F.reshape(len(np.atleast_1d(b)), G.shape[1] if G.size else 0)
        return ConstrainedZonotope(c, G, F, b)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @staticmethod
    def from_json(s: str) -> "ConstrainedZonotope":
        return ConstrainedZonotope.from_dict(json.loads(s))


def _unchecked_czono(center, generators, con_lhs, con_rhs) -> ConstrainedZonotope:
    """Assemble a ConstrainedZonotope without re-validating.

    All four arguments must already be float64, correctly shaped and
    read-only (typically shared template arrays plus a freshly frozen
    rhs).  Hot loops re-instantiate thousands of sets that differ only in
    con_rhs; skipping __post_init__ avoids re-scanning the big matrices.
    """
    Z = object.__new__(ConstrainedZonotope)
    object.__setattr__(Z, "center", center)
    object.__setattr__(Z, "generators", generators)
    object.__setattr__(Z, "con_lhs", con_lhs)
    object.__setattr__(Z, "con_rhs", con_rhs)
    return Z


class _CscCache:
    """id-keyed LRU of csc views of immutable dense matrices.

    Entries hold a strong reference to the keyed array, so an id can
    never be recycled while its entry is alive.  Only read-only arrays
    may be cached (mutation would silently desynchronize the view).
    """

    def __init__(self, maxsize: int = 64):
        self._lock = threading.Lock()
        self._entries: OrderedDict = OrderedDict()
        self.maxsize = maxsize

    def get(self, arr: np.ndarray):
        key = id(arr)
        with self._lock:
            hit = self._entries.get(key)
            if hit is not None and hit[0] is arr:
                self._entries.move_to_end(key)
                return hit[1]
        mat = sp.csc_matrix(arr)
        with self._lock:
            self._entries[key] = (arr, mat)
            self._entries.move_to_end(key)
            while len(self._entries) > self.maxsize:
                self._entries.popitem(last=False)
        return mat

    def clear(self):
        with self._lock:
            self._entries.clear()


_CSC_CACHE = _CscCache()

# Dense constraint blocks below this entry count are cheaper to pass as-is.
_SPARSE_CUTOFF = 20_000


class _MembershipCache:
    """LRU of the containment-LP constraint matrix per (generators, con_lhs).

    The matrix [[G,-1];[-G,-1];[F,-1];[-F,-1]] over variables [beta; t]
    is shared by every membership query against sets that reuse the same
    template arrays; only the rhs depends on the query point / con_rhs.
    """

    def __init__(self, maxsize: int = 16):
        self._lock = threading.Lock()
        self._entries: OrderedDict = OrderedDict()
        self.maxsize = maxsize

    def get(self, Z: "ConstrainedZonotope"):
        G, F = Z.generators, Z.con_lhs
        cacheable = not (G.flags.writeable or F.flags.writeable)
        key = (id(G), id(F))
        if cacheable:
            with self._lock:
                hit = self._entries.get(key)
                if hit is not None and hit[0] is G and hit[1] is F:
                    self._entries.move_to_end(key)
                    return hit[2]
        k, q, g = Z.dim, Z.n_constraints, Z.n_generators
        ones = np.ones((k, 1))
        rows = [np.hstack([G, -ones]), np.hstack([-G, -ones])]
        if q:
            qones = np.ones((q, 1))
            rows += [np.hstack([F, -qones]), np.hstack([-F, -qones])]
        mat = np.vstack(rows)
        if mat.size >= _SPARSE_CUTOFF:
            mat = sp.csc_matrix(mat)
        if cacheable:
            with self._lock:
                self._entries[key] = (G, F, mat)
                self._entries.move_to_end(key)
                while len(self._entries) > self.maxsize:
                    self._entries.popitem(last=False)
        return mat

    def clear(self):
        with self._lock:
            self._entries.clear()


_MEMBERSHIP_CACHE = _MembershipCache()


def clear_caches() -> None:
    _CSC_CACHE.clear()
    _MEMBERSHIP_CACHE.clear()


def from_interval(box: IntervalBox) -> ConstrainedZonotope:
    """Lift a box to an unconstrained zonotope: center = midpoint, G = diag(radius)."""
    return ConstrainedZonotope(
        center=box.center,
        generators=np.diag(box.radius),
        con_lhs=np.zeros((0, box.dim)),
        con_rhs=np.zeros(0),
    )


def linear_map(M, Z: ConstrainedZonotope) -> ConstrainedZonotope:
    """Image M @ Z; the factor constraints are untouched."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[1] != Z.dim:
        raise ValueError(f"map shape {M.shape} does not act on R^{Z.dim}")
    return ConstrainedZonotope(M @ Z.center, M @ Z.generators, Z.con_lhs, Z.con_rhs)


def minkowski_sum(Z1: ConstrainedZonotope, Z2: ConstrainedZonotope) -> ConstrainedZonotope:
    """Z1 (+) Z2: concatenated generators, block-diagonal constraints."""
    if Z1.dim != Z2.dim:
        raise ValueError("dimension mismatch")
    g1, g2 = Z1.n_generators, Z2.n_generators
    G = np.hstack([Z1.generators, Z2.generators])
    F = np.block([
        [Z1.con_lhs, np.zeros((Z1.n_constraints, g2))],
        [np.zeros((Z2.n_constraints, g1)), Z2.con_lhs],
    ])
    return ConstrainedZonotope(
        Z1.center + Z2.center, G, F, np.concatenate([Z1.con_rhs, Z2.con_rhs])
    )


def intersect(Z1: ConstrainedZonotope, Z2: ConstrainedZonotope) -> ConstrainedZonotope:
    """Z1 ∩ Z2: couple the factor spaces so Z1's point must also realize Z2."""
    if Z1.dim != Z2.dim:
        raise ValueError("dimension mismatch")
    g1, g2 = Z1.n_generators, Z2.n_generators
    G = np.hstack([Z1.generators, np.zeros((Z1.dim, g2))])
    F = np.block([
        [Z1.con_lhs, np.zeros((Z1.n_constraints, g2))],
        [np.zeros((Z2.n_constraints, g1)), Z2.con_lhs],
        [Z1.generators, -Z2.generators],
    ])
    b = np.concatenate([Z1.con_rhs, Z2.con_rhs, Z2.center - Z1.center])
    return ConstrainedZonotope(Z1.center, G, F, b)


def _min_constraint_residual(Z: ConstrainedZonotope) -> float:
    """min over the factor box of ||con_lhs beta - con_rhs||_inf (0 if q = 0)."""
    q, g = Z.n_constraints, Z.n_generators
    if q == 0:
        return 0.0
    if g == 0:
        return float(np.max(np.abs(Z.con_rhs)))
    # Variables [beta; t]: maximize -t  s.t.  |F beta - b| <= t, beta in the box.
    obj = np.zeros(g + 1)
    obj[-1] = -1.0
    A = np.block([
        [Z.con_lhs, -np.ones((q, 1))],
        [-Z.con_lhs, -np.ones((q, 1))],
    ])
    rhs = np.concatenate([Z.con_rhs, -Z.con_rhs])
    lb = np.concatenate([-np.ones(g), [0.0]])
    ub = np.concatenate([np.ones(g), [np.inf]])
    sol = solve_lp(LinearProgram(obj, ineq_lhs=A, ineq_rhs=rhs, lb=lb, ub=ub))
    if sol.status != OPTIMAL:  # compact feasible region: cannot be infeasible/unbounded
        raise SolverFailure(f"residual LP ended with status {sol.status}")
    return float(-sol.value)


def is_empty(Z: ConstrainedZonotope, tol: float = DEFAULT_TOL) -> bool:
    """True iff no factor in the box meets the constraints to within tol."""
    return _min_constraint_residual(Z) > tol


def membership_residual(Z: ConstrainedZonotope, x) -> float:
    """Smallest eps such that x is within eps (inf-norm) of a point of Z
    whose factor also meets the constraints within eps.

    minimize t  s.t.  |G beta + c - x| <= t, |F beta - b| <= t, beta in box.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if len(x) != Z.dim:
        raise ValueError("point dimension mismatch")
    g, q = Z.n_generators, Z.n_constraints
    if g == 0:
        r = float(np.max(np.abs(Z.center - x)))
        if q:
            r = max(r, float(np.max(np.abs(Z.con_rhs))))
        return r
    obj = np.zeros(g + 1)
    obj[-1] = -1.0
    rhs = [x - Z.center, Z.center - x]
    if q:
        rhs += [Z.con_rhs, -Z.con_rhs]
    lb = np.concatenate([-np.ones(g), [0.0]])
    ub = np.concatenate([np.ones(g), [np.inf]])
    sol = solve_lp(
        LinearProgram(
            obj,
            ineq_lhs=_MEMBERSHIP_CACHE.get(Z),
            ineq_rhs=np.concatenate(rhs),
            lb=lb,
            ub=ub,
        )
    )
    if sol.status != OPTIMAL:
        raise SolverFailure(f"containment LP ended with status {sol.status}")
    return float(-sol.value)


def contains(Z: ConstrainedZonotope, x, tol: float = DEFAULT_TOL) -> bool:
    """True iff x is within tol (inf-norm) of a point of Z.

    Residual-minimization LP, so the answer is tolerance-consistent with
    :func:`is_empty` rather than a brittle yes/no feasibility call.
    """
    return membership_residual(Z, x) <= tol


def support(Z: ConstrainedZonotope, direction, tol: float = DEFAULT_TOL) -> float:
    """Support function h(d) = max_{x in Z} d.x.  Raises EmptySetError on empty Z."""
    d = np.atleast_1d(np.asarray(direction, dtype=float))
    if len(d) != Z.dim:
        raise ValueError("direction dimension mismatch")
    g = Z.n_generators
    if g == 0:
        if Z.n_constraints and float(np.max(np.abs(Z.con_rhs))) > tol:
            raise EmptySetError("support of an empty set")
        return float(d @ Z.center)
    F = Z.con_lhs if Z.n_constraints else None
    if F is not None and F.size >= _SPARSE_CUTOFF and not F.flags.writeable:
        F = _CSC_CACHE.get(Z.con_lhs)
    lp = LinearProgram(
        d @ Z.generators,
        eq_lhs=F,
        eq_rhs=Z.con_rhs if Z.n_constraints else None,
        lb=-np.ones(g),
        ub=np.ones(g),
    )
    sol = solve_lp(lp, tol=tol)
    if sol.status == INFEASIBLE:
        raise EmptySetError("support of an empty set")
    if sol.status != OPTIMAL:
        raise SolverFailure(f"support LP ended with status {sol.status}")
    return float(d @ Z.center + sol.value)


def interval_hull(Z: ConstrainedZonotope, tol: float = DEFAULT_TOL) -> IntervalBox:
    """Tightest axis-aligned box containing Z (2·dim support calls)."""
    k = Z.dim
    lo = np.empty(k)
    hi = np.empty(k)
    e = np.zeros(k)
    for i in range(k):
        e[i] = 1.0
        hi[i] = support(Z, e, tol=tol)
        e[i] = -1.0
        lo[i] = -support(Z, e, tol=tol)
        e[i] = 0.0
    # Guard against LP jitter producing a microscopically inverted box.
    lo = np.minimum(lo, hi)
    return IntervalBox(lo, hi)
