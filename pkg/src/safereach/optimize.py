"""Derivative-free box-constrained pattern search (maximization).

Coordinate-direction generalized pattern search: poll ``x +/- mesh * width_i``
along every coordinate, move to the best strictly-improving poll, halve the
mesh when no poll improves.  Polls falling outside the box are projected onto
it.  The search is fully deterministic.
"""

from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from .regions import Box


@dataclass(frozen=True)
class SearchConfig:
    """Pattern-search tuning knobs.

    ``initial_mesh`` and ``mesh_tolerance`` are fractions of the per-dimension
    box width, so the search is scale free.  ``max_evals`` caps objective
    evaluations per start; exhaustion returns the best-so-far with the
    ``truncated`` flag set (not an error).  ``n_starts`` adds extra start
    points evenly spaced along the box diagonal to mitigate multimodality.
    """

    initial_mesh: float = 0.25
    contraction: float = 0.5
    mesh_tolerance: float = 1e-3
    max_evals: int = 200
    n_starts: int = 1
    reentrant_objective: bool = False

    def __post_init__(self):
        if not 0 < self.initial_mesh:
            raise ValueError("initial_mesh must be positive")
        if not 0 < self.contraction < 1:
            raise ValueError("contraction must lie in (0, 1)")
        if not 0 < self.mesh_tolerance:
            raise ValueError("mesh_tolerance must be positive")
        if self.max_evals < 1:
            raise ValueError("max_evals must be a positive integer")
        if self.n_starts < 1:
            raise ValueError("n_starts must be a positive integer")


@dataclass(frozen=True)
class SearchResult:
    x: np.ndarray
    value: float
    truncated: bool
    n_evals: int


def _as_value(raw) -> float:
    """Map objective output to a float; non-finite values count as -inf."""
    v = float(raw)
    return v if np.isfinite(v) else -np.inf


def _search_from(
    objective: Callable[[np.ndarray], float],
    bounds: Box,
    cfg: SearchConfig,
    start: np.ndarray,
) -> SearchResult:
    widths = bounds.widths
    x = bounds.clip(start)
    fx = _as_value(objective(x))
    evals = 1
    truncated = False
    mesh = cfg.initial_mesh

    while mesh >= cfg.mesh_tolerance:
        best_x, best_f = None, fx
        exhausted = False
        for i in range(bounds.ndim):
            if widths[i] == 0.0:
                continue
            for sign in (1.0, -1.0):
                cand = x.copy()
                cand[i] += sign * mesh * widths[i]
                cand = bounds.clip(cand)
                if cand[i] == x[i]:
                    continue  # projection collapsed the poll
                if evals >= cfg.max_evals:
                    exhausted = True
                    break
                fc = _as_value(objective(cand))
                evals += 1
                if fc > best_f:
                    best_x, best_f = cand, fc
            if exhausted:
                break
        if best_x is not None:
            x, fx = best_x, best_f
        if exhausted:
            truncated = True
            break
        if best_x is None:
            mesh *= cfg.contraction

    return SearchResult(x=x, value=fx, truncated=truncated, n_evals=evals)


def pattern_search(
    objective: Callable[[np.ndarray], float],
    bounds: Box,
    cfg: SearchConfig = SearchConfig(),
    start: Sequence[float] | np.ndarray | None = None,
) -> SearchResult:
    """Maximize ``objective`` over a box by generalized pattern search.

    Parameters
    ----------
    objective : callable
        Scalar function of a 1-D vector.  Must be total on the box; a
        non-finite return value is treated as -inf (a failed evaluation).
    bounds : Box
        Feasible box.  Zero-width dimensions are held fixed.
    cfg : SearchConfig
        Mesh, budget, and multi-start settings.
    start : array-like, optional
        Start point, projected onto the box.  Defaults to the minimum-norm
        feasible point (the projection of the origin), which also serves as
        the tie-break for constant objectives.

    Returns
    -------
    SearchResult
        Best point found, its objective value, the truncation flag, and the
        total number of objective evaluations.  The value is never below the
        objective at the start point or at any polled point.
    """
    if start is None:
        start = np.zeros(bounds.ndim)
    start = bounds.clip(np.asarray(start, dtype=float))
    if not bounds.contains(start):
        raise ValueError("start point must lie within bounds")

    starts = [start]
    for j in range(1, cfg.n_starts):
        frac = j / cfg.n_starts
        starts.append(bounds.lower + frac * bounds.widths)

    best: SearchResult | None = None
    total_evals = 0
    any_trunc = False
    for s in starts:
        res = _search_from(objective, bounds, cfg, s)
        total_evals += res.n_evals
        any_trunc = any_trunc or res.truncated
        if best is None or res.value > best.value:
            best = res
    assert best is not None
    return SearchResult(
        x=best.x, value=best.value, truncated=any_trunc, n_evals=total_evals
    )
