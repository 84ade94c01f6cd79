"""Backward-reachable islanding safe sets.

The safe set at time t0 is the set of charge states from which the grid
can survive an H-step islanding event: at every step of the window the
storages alone must cover the forecast net load lower bound while the
charge states stay inside their admissible box.  It is computed by an
H-step backward recursion over constrained zonotopes,

    X[H] = admissible charge box,
    X[s] = A^-1 (X[s+1] (+) (-B_s) U_s)  ∩  box,

where U_s is the balanced islanding input set for the forecast lower
bound at window offset s.

Two caches keep the per-step cost of the receding-horizon loop low:

- a structure cache keyed on the charge/discharge mode pattern of the
  window: for a fixed pattern, everything except the per-step balance
  right-hand sides is identical, so templates are built once and the few
  d-dependent entries are filled per call (bitwise identical to a direct
  build);
- an exact result cache keyed on the forecast values themselves.

Both are bounded (LRU) and safe for concurrent use.
"""

from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .czono import (
    ConstrainedZonotope,
    IntervalBox,
    _unchecked_czono,
    from_interval,
    intersect,
    is_empty,
    linear_map,
    minkowski_sum,
)
from .gridmodel import GridParams, build_A, build_B
from .lpqp import DEFAULT_TOL

__all__ = [
    "ForecastLowerBound",
    "SafeSetSequence",
    "IllPosedScenarioError",
    "EmptySafeSetError",
    "islanding_input_set",
    "one_step_backward",
    "compute_safe_sets",
    "clear_caches",
]

DISCHARGE = 1
CHARGE = -1


class IllPosedScenarioError(RuntimeError):
    """The islanding problem has no solution for the given scenario."""


class EmptySafeSetError(IllPosedScenarioError):
    """Some safe set in the sequence is empty; ``index`` is the largest
    (earliest-built) window offset at which emptiness appears."""

    def __init__(self, index: int, message: str):
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class ForecastLowerBound:
    """Per-step lower bound on the net load-generation sum over the
    islanding window [t0, t0+H); negative values mean a deficit the
    storages must cover."""

    d_lower: np.ndarray

    def __post_init__(self):
        d = np.atleast_1d(np.asarray(self.d_lower, dtype=float))
        if d.ndim != 1 or len(d) == 0:
            raise ValueError("d_lower must be a non-empty 1-D series")
        if not np.all(np.isfinite(d)):
            raise ValueError("d_lower must be finite")
        d = d.copy()
        d.flags.writeable = False
        object.__setattr__(self, "d_lower", d)

    def __len__(self) -> int:
        return len(self.d_lower)


@dataclass(frozen=True)
class SafeSetSequence:
    """sets[0] is the safe set now; sets[H] is the admissible charge box."""

    sets: tuple
    forecast_used: ForecastLowerBound

    def __post_init__(self):
        object.__setattr__(self, "sets", tuple(self.sets))

    @property
    def horizon(self) -> int:
        return len(self.sets) - 1

    def hulls(self) -> list:
        return [None if s is None else _hull(s) for s in self.sets]


def _hull(Z: ConstrainedZonotope) -> IntervalBox:
    from .czono import interval_hull

    return interval_hull(Z)


def _mode_of(d_value: float) -> int:
    # Surplus (d >= 0) must be absorbed: all storages charge; deficit
    # (d < 0) must be covered: all storages discharge.
    return CHARGE if d_value >= 0.0 else DISCHARGE


def _mode_bounds(params: GridParams, mode: int) -> np.ndarray:
    if mode == DISCHARGE:
        storage = params.storage_p_max
    elif mode == CHARGE:
        storage = params.storage_p_min
    else:
        raise ValueError("mode must be +1 (discharge) or -1 (charge)")
    return np.concatenate([storage, params.market_p_max])


def _islanding_mask(params: GridParams) -> np.ndarray:
    return np.concatenate([np.ones(params.n_storage), np.zeros(params.n_markets)])


def _input_set_for_mode(d_value: float, mode: int, params: GridParams) -> ConstrainedZonotope:
    """Balanced islanding inputs with all storages in the given mode.

    The set lives in input space (n+m): storages range over [0, p_max]
    (discharge) or [p_min, 0] (charge), markets are pinned to zero, and a
    single constraint row enforces the islanded balance sum = -d.
    """
    h = _islanding_mask(params)
    uv = _mode_bounds(params, mode)
    hv = h * uv
    center = 0.5 * hv
    G = 0.5 * np.diag(hv)
    F = (0.5 * hv).reshape(1, -1)
    half_sum = 0.5 * float(h @ uv)
    b = np.array([-d_value - half_sum])
    return ConstrainedZonotope(center, G, F, b)


def islanding_input_set(d_lower_t: float, params: GridParams) -> ConstrainedZonotope:
    """Admissible islanding inputs for one step, mode chosen by sign(d).

    May be empty when |d| exceeds the total storage rate capability; use
    ``is_empty`` to detect (compute_safe_sets reports it with the step).
    """
    return _input_set_for_mode(float(d_lower_t), _mode_of(float(d_lower_t)), params)


def one_step_backward(
    X_next: ConstrainedZonotope,
    U_island: ConstrainedZonotope,
    A: np.ndarray,
    B: np.ndarray,
) -> ConstrainedZonotope:
    """Exact preimage {x : A x + B u in X_next for some u in U_island}."""
    A = np.asarray(A, dtype=float)
    diag = np.diag(A)
    if not np.all(np.abs(diag) > 0.0) or np.any(A - np.diag(diag)):
        raise ValueError("A must be diagonal and invertible")
    A_inv = np.diag(1.0 / diag)
    shifted = minkowski_sum(X_next, linear_map(-np.asarray(B, dtype=float), U_island))
    return linear_map(A_inv, shifted)


# ---------------------------------------------------------------------------
# Structure cache: per mode pattern, the whole sequence except the balance
# right-hand sides.


@dataclass(frozen=True)
class _Structure:
    sets: tuple          # template ConstrainedZonotopes, index 0..H
    slots: tuple         # per set: tuple of (row position, window offset)
    half_sums: tuple     # per window offset: 0.5 * h . bound_vector(mode)
    fill_index: tuple = ()   # per set: (row positions, window offsets) as arrays

    def __post_init__(self):
        if not self.fill_index:
            idx = tuple(
                (
                    np.array([p for p, _ in sl], dtype=np.intp),
                    np.array([s for _, s in sl], dtype=np.intp),
                )
                for sl in self.slots
            )
            object.__setattr__(self, "fill_index", idx)


def _build_structure(params: GridParams, modes: tuple) -> _Structure:
    H = len(modes)
    A = build_A(params)
    A_inv = np.diag(1.0 / np.diag(A))
    xlim = from_interval(params.charge_box())
    n = params.n_storage

    sets: list = [None] * (H + 1)
    slots: list = [None] * (H + 1)
    sets[H] = xlim
    slots[H] = ()
    half_sums = []
    B_by_mode = {
        DISCHARGE: build_B(params, (DISCHARGE,) * n),
        CHARGE: build_B(params, (CHARGE,) * n),
    }
    h = _islanding_mask(params)
    for mode in modes:
        half_sums.append(0.5 * float(h @ _mode_bounds(params, mode)))
    for s in range(H - 1, -1, -1):
        U = _input_set_for_mode(0.0, modes[s], params)
        mapped = linear_map(-B_by_mode[modes[s]], U)
        shifted = minkowski_sum(sets[s + 1], mapped)
        back = linear_map(A_inv, shifted)
        # The balance row of U lands right after X[s+1]'s constraint rows;
        # the subsequent intersection only appends rows, so earlier slot
        # positions survive unchanged.
        slots[s] = slots[s + 1] + ((sets[s + 1].n_constraints, s),)
        sets[s] = intersect(back, xlim)
    return _Structure(tuple(sets), tuple(slots), tuple(half_sums))


def _fill_structure(structure: _Structure, d: np.ndarray) -> tuple:
    half = np.asarray(structure.half_sums)
    out = []
    for template, (pos, s) in zip(structure.sets, structure.fill_index):
        if not len(pos):
            out.append(template)
            continue
        b = np.array(template.con_rhs)
        b[pos] = -d[s] - half[s]
        b.flags.writeable = False
        # Template arrays are pre-validated and shared; only b is fresh.
        out.append(
            _unchecked_czono(
                template.center, template.generators, template.con_lhs, b
            )
        )
    return tuple(out)


class _ReachCache:
    def __init__(self, max_structures: int = 16, max_results: int = 64):
        self._lock = threading.Lock()
        self._structures: OrderedDict = OrderedDict()
        self._results: OrderedDict = OrderedDict()
        self.max_structures = max_structures
        self.max_results = max_results

    def structure(self, params: GridParams, modes: tuple) -> _Structure:
        key = (params, modes)
        with self._lock:
            hit = self._structures.get(key)
            if hit is not None:
                self._structures.move_to_end(key)
                return hit
        built = _build_structure(params, modes)
        with self._lock:
            self._structures[key] = built
            self._structures.move_to_end(key)
            while len(self._structures) > self.max_structures:
                self._structures.popitem(last=False)
        return built

    def result(self, key):
        with self._lock:
            hit = self._results.get(key)
            if hit is not None:
                self._results.move_to_end(key)
            return hit

    def store_result(self, key, value) -> None:
        with self._lock:
            self._results[key] = value
            self._results.move_to_end(key)
            while len(self._results) > self.max_results:
                self._results.popitem(last=False)

    def clear(self) -> None:
        with self._lock:
            self._structures.clear()
            self._results.clear()


_CACHE = _ReachCache()


def clear_caches() -> None:
    _CACHE.clear()


def _input_capability_violation(d_value: float, mode: int, params: GridParams) -> float:
    """How far the balanced-input constraint row is from satisfiable.

    Single-row emptiness is exact: |b| <= sum|F| iff some factor in the
    box satisfies it.  Returns the excess (0 when satisfiable).
    """
    h = _islanding_mask(params)
    uv = _mode_bounds(params, mode)
    half_sum = 0.5 * float(h @ uv)
    row_reach = 0.5 * float(np.sum(np.abs(h * uv)))
    return max(0.0, abs(-d_value - half_sum) - row_reach)


def compute_safe_sets(
    params: GridParams,
    forecast: ForecastLowerBound,
    check_empty: bool = True,
    tol: float = DEFAULT_TOL,
) -> SafeSetSequence:
    """Run the backward recursion over the islanding window.

    Raises EmptySafeSetError (with the offending window offset) when the
    balance is unsatisfiable at some step, or — with check_empty — when
    the resulting present-time set is empty for subtler reasons.
    check_empty=False skips the final LP emptiness check for hot loops;
    infeasibility then still surfaces downstream (e.g. in the shield QP).
    """
    d = forecast.d_lower
    H = params.islanding_H
    if len(d) != H:
        raise ValueError(f"forecast length {len(d)} != islanding horizon {H}")
    charging = d >= 0.0
    modes = tuple(CHARGE if c else DISCHARGE for c in charging)

    # Balance capability is checkable exactly without any LP: a single
    # constraint row is satisfiable iff |b| <= sum|F| over the factor box.
    p_min_sum = float(np.sum(params.storage_p_min))
    p_max_sum = float(np.sum(params.storage_p_max))
    half_sum = np.where(charging, 0.5 * p_min_sum, 0.5 * p_max_sum)
    row_reach = np.where(
        charging, 0.5 * np.sum(np.abs(params.storage_p_min)),
        0.5 * np.sum(np.abs(params.storage_p_max)),
    )
    excess = np.abs(-d - half_sum) - row_reach
    bad = np.nonzero(excess > tol)[0]
    if bad.size:
        s = int(bad.max())
        raise EmptySafeSetError(
            s,
            f"islanding balance unsatisfiable at window offset {s}: "
            f"net load lower bound {d[s]:.6g} kW exceeds storage rate "
            f"capability by {float(excess[s]):.6g} kW",
        )

    key = (params, modes, d.tobytes())
    cached = _CACHE.result(key)
    if cached is None:
        structure = _CACHE.structure(params, modes)
        cached = _fill_structure(structure, d)
        _CACHE.store_result(key, cached)
    seq = SafeSetSequence(cached, forecast)

    if check_empty and is_empty(seq.sets[0], tol=tol):
        index = 0
        for s in range(H - 1, 0, -1):
            if is_empty(seq.sets[s], tol=tol):
                index = s
                break
        raise EmptySafeSetError(
            index,
            f"safe set empty from window offset {index}: the admissible "
            "charge box cannot sustain the forecast balance over the window",
        )
    return seq
