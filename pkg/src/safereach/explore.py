"""Variance-driven exploration: relocate the target set to the most uncertain
reachable region.

The next target is a ball of fixed radius centered on the grid node, inside
the safe set eroded by that radius, where the control-marginalized posterior
variance (summed over output dimensions) is largest.  The erosion guarantees
the relocated ball stays inside the safe set.
"""

from dataclasses import dataclass

import numpy as np

from .gp import GpModel, predict_many
from .regions import Ball, Box
from .reachdp import StateGrid


@dataclass(frozen=True)
class ExplorationConfig:
    radius: float = 2.0 * np.pi / 100.0
    trigger_period: int = 1
    control_quadrature_points: int = 11

    def __post_init__(self):
        if not (np.isfinite(self.radius) and self.radius > 0):
            raise ValueError("radius must be positive")
        if self.trigger_period < 1:
            raise ValueError("trigger_period must be a positive integer")
        if self.control_quadrature_points < 1:
            raise ValueError("control_quadrature_points must be a positive integer")


def _control_quadrature(u_bounds: Box, points: int) -> tuple[np.ndarray, float]:
    """Midpoint rule over the control box; weights sum to the box width."""
    if u_bounds.ndim != 1:
        raise ValueError("control quadrature expects a one-dimensional control box")
    lo, hi = u_bounds.lower[0], u_bounds.upper[0]
    width = hi - lo
    nodes = lo + (np.arange(points) + 0.5) * width / points
    return nodes.reshape(-1, 1), width / points


def integrated_variance(
    model: GpModel,
    x,
    u_bounds: Box,
    quadrature: int = 11,
) -> float:
    """Posterior variance at ``x``, summed over output dimensions and
    integrated over the control box by a uniform quadrature."""
    x = np.asarray(x, dtype=float).ravel()
    u_nodes, weight = _control_quadrature(u_bounds, quadrature)
    X = np.hstack([np.tile(x, (len(u_nodes), 1)), u_nodes])
    _, variances = predict_many(model, X)
    return float(np.sum(variances) * weight)


def _integrated_variance_many(
    model: GpModel,
    states: np.ndarray,
    u_bounds: Box,
    quadrature: int,
) -> np.ndarray:
    u_nodes, weight = _control_quadrature(u_bounds, quadrature)
    m, q = states.shape[0], len(u_nodes)
    X = np.hstack(
        [np.repeat(states, q, axis=0), np.tile(u_nodes, (m, 1))]
    )
    _, variances = predict_many(model, X)
    per_point = variances.sum(axis=1).reshape(m, q)
    return per_point.sum(axis=1) * weight


def select_target(
    model: GpModel,
    safe: Box,
    cfg: ExplorationConfig,
    grid: StateGrid,
    u_bounds: Box,
) -> Ball:
    """New target ball centered on the most uncertain admissible grid node.

    Candidates are the grid nodes inside the safe set eroded by the ball
    radius, so the returned ball is contained in the safe set.  Ties resolve
    to the lowest flat node index.

    Raises
    ------
    ValueError
        If the erosion empties the safe set or leaves it without grid nodes.
    """
    try:
        shrunk = safe.erode(cfg.radius)
    except ValueError as err:
        raise ValueError(
            f"exploration radius {cfg.radius} empties the safe set"
        ) from err
    nodes = grid.node_array()
    admissible = shrunk.contains_many(nodes)
    if not np.any(admissible):
        raise ValueError(
            "no grid node lies inside the eroded safe set; "
            "reduce the radius or refine the grid"
        )
    candidates = nodes[admissible]
    scores = _integrated_variance_many(
        model, candidates, u_bounds, cfg.control_quadrature_points
    )
    best = int(np.argmax(scores))  # argmax keeps the first (lowest index) tie
    return Ball(center=candidates[best], radius=cfg.radius)
