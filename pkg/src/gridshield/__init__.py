"""Provably safe economic dispatch for micro grids.

Layers, bottom up:

- :mod:`gridshield.lpqp` — LP/QP solver contracts (HiGHS, Clarabel).
- :mod:`gridshield.czono` — constrained zonotope set algebra.
- :mod:`gridshield.gridmodel` — storage dynamics, limits, costs.
- :mod:`gridshield.reach` — backward-reachable islanding safe sets.
- :mod:`gridshield.shield` — QP projection of proposed actions onto safe ones.
- :mod:`gridshield.env` — day-scale MDP simulator and scenario generation.
- :mod:`gridshield.cli` — safeset / simulate / serve commands.
"""

__version__ = "0.1.0"

from . import czono, gridmodel, lpqp, reach, shield  # noqa: F401

__all__ = ["czono", "gridmodel", "lpqp", "reach", "shield", "clear_caches", "__version__"]


def clear_caches() -> None:
    """Drop every internal memo (safe-set templates, solver assemblies)."""
    czono.clear_caches()
    reach.clear_caches()
    shield.clear_caches()
