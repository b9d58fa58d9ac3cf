"""Grid-based stochastic reach-avoid dynamic programming.

The backward recursion starts from the target-set indicator at the final
stage and at every earlier stage maximizes, over the control box, the
quadrature of (next-stage value) x (GP transition density) over the safe
part of the state grid:

    J_N(x)  = 1_{X_T}(x)
    J_k(x)  = sup_u  sum_{z in S-grid} J_{k+1}(z) * p(z | x, u) * cell_volume

The transition density is a product of univariate Gaussians, one per state
dimension, with mean and variance from the fitted GP posterior (observation
noise included by default).  The quadrature is a left-node Riemann sum; cell
mass on a finite grid can overshoot 1, so stage values are clamped to [0, 1]
with the pre-clamp values and total mass kept as diagnostics.

Stage sweeps evaluate all grid nodes in lockstep, which is the per-node
pattern search executed batched; results are identical up to floating-point
reduction order.  Sweeps are chunked at a fixed size so thread counts (env
var ``SAFEREACH_THREADS``) never change the output.
"""

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .gp import GpModel, predict_many
from .optimize import SearchConfig, pattern_search
from .regions import Ball, Box, Region

SQRT_2PI = math.sqrt(2.0 * math.pi)

# Degenerate (zero) predictive variances make the density a delta function,
# which has no grid representation; variances are floored at this value.
VARIANCE_FLOOR = 1e-30

# Fixed sweep chunk size: results are independent of the thread count.
SWEEP_CHUNK = 256

_AXES = "ijklmn"


def resolve_threads(threads: int | None = None) -> int:
    """Thread count for stage sweeps; 0 or unset means auto."""
    if threads is None:
        raw = os.environ.get("SAFEREACH_THREADS", "0")
        try:
            threads = int(raw)
        except ValueError:
            raise ValueError(f"SAFEREACH_THREADS must be an integer, got {raw!r}")
    if threads < 0:
        raise ValueError("thread count must be nonnegative")
    if threads == 0:
        return min(8, os.cpu_count() or 1)
    return threads


@dataclass(frozen=True)
class StateGrid:
    """Tensor grid of linearly spaced nodes over the state box."""

    nodes: tuple[np.ndarray, ...]

    def __post_init__(self):
        nodes = tuple(np.asarray(n, dtype=float) for n in self.nodes)
        for n in nodes:
            if n.ndim != 1 or n.size < 2 or np.any(np.diff(n) <= 0):
                raise ValueError("grid nodes must be strictly increasing vectors")
            n.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def from_box(cls, box: Box, nn) -> "StateGrid":
        """Linearly spaced grid with ``nn`` nodes per dimension."""
        counts = np.broadcast_to(np.asarray(nn, dtype=int), (box.ndim,))
        if np.any(counts < 2):
            raise ValueError("need at least 2 nodes per dimension")
        return cls(
            tuple(
                np.linspace(box.lower[k], box.upper[k], counts[k])
                for k in range(box.ndim)
            )
        )

    @property
    def ndim(self) -> int:
        return len(self.nodes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(n.size for n in self.nodes)

    @property
    def widths(self) -> np.ndarray:
        return np.array([(n[-1] - n[0]) / (n.size - 1) for n in self.nodes])

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.widths))

    def node_array(self) -> np.ndarray:
        """All grid nodes as rows, C order (last dimension fastest)."""
        mesh = np.meshgrid(*self.nodes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def nearest_index(self, x) -> tuple[int, ...]:
        x = np.asarray(x, dtype=float).ravel()
        return tuple(
            int(_nearest_1d(self.nodes[k], np.array([x[k]]))[0])
            for k in range(self.ndim)
        )

    def nearest_indices(self, X: np.ndarray) -> tuple[np.ndarray, ...]:
        X = np.asarray(X, dtype=float)
        return tuple(_nearest_1d(self.nodes[k], X[:, k]) for k in range(self.ndim))


def _nearest_1d(nodes: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Index of the nearest node per query; ties resolve to the lower index."""
    idx = np.searchsorted(nodes, x)
    idx = np.clip(idx, 1, nodes.size - 1)
    left = nodes[idx - 1]
    right = nodes[idx]
    take_right = (x - left) > (right - x)
    return np.where(take_right, idx, idx - 1)


@dataclass(frozen=True)
class ValueTable:
    """Stage values on the grid, clamped to [0, 1], with diagnostics.

    ``pre_clamp`` holds the raw quadrature values and ``mass`` the total
    transition-density mass over the safe quadrature nodes at the optimal
    action (zero for the terminal stage, which has no transition).
    """

    stage: int
    values: np.ndarray
    pre_clamp: np.ndarray
    mass: np.ndarray

    @property
    def leakage(self) -> np.ndarray:
        """Per-node overshoot of the raw value beyond 1."""
        return np.maximum(self.pre_clamp - 1.0, 0.0)


@dataclass(frozen=True)
class PolicyTable:
    """Optimal controls per stage and grid node: shape (N, *grid.shape, m)."""

    controls: np.ndarray

    @property
    def horizon(self) -> int:
        return self.controls.shape[0]

    def action(self, stage: int, x, grid: StateGrid) -> np.ndarray:
        """Control at the grid node nearest to ``x``."""
        return self.controls[stage][grid.nearest_index(x)]


@dataclass(frozen=True)
class DpSolution:
    tables: tuple[ValueTable, ...]  # index k = 0 .. N
    policy: PolicyTable
    grid: StateGrid


@dataclass(frozen=True)
class McEstimate:
    estimate: float
    stderr: float
    successes: int
    samples: int


def target_indicator(x, target: Region) -> float:
    """1 if ``x`` lies in the (closed) target set, else 0."""
    return 1.0 if target.contains(x) else 0.0


def _indicator_table(grid: StateGrid, target: Region) -> np.ndarray:
    return target.contains_many(grid.node_array()).astype(float).reshape(grid.shape)


class _Quadrature:
    """Per-stage quadrature data: evaluation nodes and weighted value tensors.

    ``left`` evaluates the density at the left node of each grid cell (the
    last node per dimension carries no weight); ``midpoint`` evaluates it at
    cell centers with next-stage values averaged from the cell corners.
    """

    def __init__(
        self,
        grid: StateGrid,
        safe: Box,
        J_next: np.ndarray,
        rule: str = "left",
        renormalize: bool = False,
    ):
        if rule not in ("left", "midpoint"):
            raise ValueError(f"unknown quadrature rule {rule!r}")
        self.renormalize = renormalize
        cellvol = grid.cell_volume

        if rule == "left":
            self.eval_nodes = [n[:-1] for n in grid.nodes]
            J_eval = J_next[tuple(slice(0, -1) for _ in range(grid.ndim))]
        else:
            self.eval_nodes = [0.5 * (n[:-1] + n[1:]) for n in grid.nodes]
            J_eval = J_next
            for axis in range(grid.ndim):
                lo = tuple(
                    slice(0, -1) if a == axis else slice(None)
                    for a in range(grid.ndim)
                )
                hi = tuple(
                    slice(1, None) if a == axis else slice(None)
                    for a in range(grid.ndim)
                )
                J_eval = 0.5 * (J_eval[lo] + J_eval[hi])

        safe_mask = np.ones([n.size for n in self.eval_nodes], dtype=bool)
        for k, nk in enumerate(self.eval_nodes):
            in_k = (nk >= safe.lower[k]) & (nk <= safe.upper[k])
            shape = [1] * grid.ndim
            shape[k] = nk.size
            safe_mask &= in_k.reshape(shape)

        self.weighted_J = np.where(safe_mask, J_eval, 0.0) * cellvol
        self.safe_weights = safe_mask * cellvol
        self.total_weight = float(cellvol)  # per-cell weight for renormalization
        self.ndim = grid.ndim

    def with_eval_values(self, J_eval: np.ndarray) -> "_Quadrature":
        """Copy of this quadrature with values given directly at eval nodes."""
        q = object.__new__(_Quadrature)
        q.renormalize = self.renormalize
        q.eval_nodes = self.eval_nodes
        q.weighted_J = np.where(self.safe_weights > 0, J_eval, 0.0) * self.total_weight
        q.safe_weights = self.safe_weights
        q.total_weight = self.total_weight
        q.ndim = self.ndim
        return q

    def _factors(self, means, variances):
        stds = np.sqrt(np.maximum(variances, VARIANCE_FLOOR))
        out = []
        for k, nk in enumerate(self.eval_nodes):
            z = (nk[None, :] - means[:, k : k + 1]) / stds[:, k : k + 1]
            out.append(np.exp(-0.5 * z * z) / (SQRT_2PI * stds[:, k : k + 1]))
        return out

    def _contract(self, factors, W) -> np.ndarray:
        subs = ",".join("a" + _AXES[k] for k in range(self.ndim))
        subs += "," + _AXES[: self.ndim] + "->a"
        return np.einsum(subs, *factors, W)

    def values(self, means, variances) -> np.ndarray:
        """Raw (pre-clamp) backup values for a batch of posteriors."""
        factors = self._factors(means, variances)
        raw = self._contract(factors, self.weighted_J)
        if self.renormalize:
            total = self.total_weight * np.prod(
                [f.sum(axis=1) for f in factors], axis=0
            )
            raw = raw / np.maximum(total, 1e-300)
        return raw

    def values_and_mass(self, means, variances) -> tuple[np.ndarray, np.ndarray]:
        factors = self._factors(means, variances)
        raw = self._contract(factors, self.weighted_J)
        mass = self._contract(factors, self.safe_weights)
        if self.renormalize:
            total = self.total_weight * np.prod(
                [f.sum(axis=1) for f in factors], axis=0
            )
            raw = raw / np.maximum(total, 1e-300)
            mass = mass / np.maximum(total, 1e-300)
        return raw, mass


def _posterior_batch(model: GpModel, X, U, include_noise: bool):
    XU = np.hstack([np.atleast_2d(X), np.atleast_2d(U)])
    means, variances = predict_many(model, XU)
    if include_noise:
        variances = variances + np.array(
            [h.noise_variance for h in model.hyperparams]
        )
    return means, variances


def transition_density(
    model: GpModel, x, u, z, include_noise: bool = True
) -> float:
    """GP transition density p(z | x, u): product of per-dimension Gaussians.

    The variance of each factor is the GP posterior variance at the stacked
    input (x, u); observation noise is included unless ``include_noise`` is
    false, matching what the dynamic program propagates.
    """
    x = np.asarray(x, dtype=float).ravel()
    u = np.atleast_1d(np.asarray(u, dtype=float))
    z = np.asarray(z, dtype=float).ravel()
    means, variances = _posterior_batch(model, x[None, :], u[None, :], include_noise)
    stds = np.sqrt(np.maximum(variances[0], VARIANCE_FLOOR))
    zz = (z - means[0]) / stds
    return float(np.prod(np.exp(-0.5 * zz * zz) / (SQRT_2PI * stds)))


def _table_values(J_next) -> np.ndarray:
    return J_next.values if isinstance(J_next, ValueTable) else np.asarray(J_next)


def bellman_backup(
    J_next,
    x,
    u,
    model: GpModel,
    grid: StateGrid,
    safe: Box,
    include_noise: bool = True,
    rule: str = "left",
    renormalize: bool = False,
) -> float:
    """One-action backup: safe-grid quadrature of J_next times the density.

    Returns the value clamped to [0, 1]; ``optimal_action`` maximizes this
    quantity over the control box.
    """
    quad = _Quadrature(grid, safe, _table_values(J_next), rule, renormalize)
    x = np.asarray(x, dtype=float).reshape(1, -1)
    u = np.atleast_1d(np.asarray(u, dtype=float)).reshape(1, -1)
    means, variances = _posterior_batch(model, x, u, include_noise)
    raw = quad.values(means, variances)
    return float(np.clip(raw[0], 0.0, 1.0))


def _control_candidates(control_set: np.ndarray) -> np.ndarray:
    """Discrete controls in canonical tie-break order: norm, then lexicographic."""
    U = np.atleast_2d(np.asarray(control_set, dtype=float))
    if U.shape[0] == 1 and U.shape[1] > 1:
        U = U.T
    order = sorted(
        range(U.shape[0]), key=lambda i: (float(np.linalg.norm(U[i])), tuple(U[i]))
    )
    return U[order]


def _search_controls_batch(
    evaluate,
    m: int,
    u_bounds: Box,
    search: SearchConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Lockstep pattern search over the control box for ``m`` states at once.

    ``evaluate(rows, U)`` returns objective values for the given state rows
    at the paired controls.  Per row this reproduces ``pattern_search`` with
    the default minimum-norm start: identical polls, acceptance, and budget.
    """
    mu = u_bounds.ndim
    widths = u_bounds.widths
    u = np.tile(u_bounds.clip(np.zeros(mu)), (m, 1))
    f = evaluate(np.arange(m), u)
    evals = np.ones(m, dtype=int)
    mesh = np.full(m, search.initial_mesh)
    active = (mesh >= search.mesh_tolerance) & bool(np.any(widths > 0))

    while np.any(active):
        best_f = f.copy()
        best_u = u.copy()
        round_exhausted = np.zeros(m, dtype=bool)
        for i in range(mu):
            if widths[i] == 0.0:
                continue
            for sign in (1.0, -1.0):
                rows = np.nonzero(active & ~round_exhausted)[0]
                if rows.size == 0:
                    continue
                cand = u[rows].copy()
                cand[:, i] += sign * mesh[rows] * widths[i]
                cand = np.clip(cand, u_bounds.lower, u_bounds.upper)
                valid = cand[:, i] != u[rows, i]
                newly_exhausted = valid & (evals[rows] >= search.max_evals)
                round_exhausted[rows[newly_exhausted]] = True
                todo = valid & ~newly_exhausted
                if np.any(todo):
                    sub = rows[todo]
                    fc = evaluate(sub, cand[todo])
                    evals[sub] += 1
                    better = fc > best_f[sub]
                    upd = sub[better]
                    best_f[upd] = fc[better]
                    best_u[upd] = cand[todo][better]
        moved = active & (best_f > f)
        u[moved] = best_u[moved]
        f[moved] = best_f[moved]
        stalled = active & ~moved & ~round_exhausted
        mesh[stalled] *= search.contraction
        active &= ~round_exhausted
        active &= mesh >= search.mesh_tolerance
    return u, f


def _evaluate_controls_discrete(
    evaluate,
    m: int,
    candidates: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Exhaustive maximization over a canonical-order discrete control set."""
    best_f = np.full(m, -np.inf)
    best_u = np.zeros((m, candidates.shape[1]))
    rows = np.arange(m)
    for c in candidates:
        fc = evaluate(rows, np.tile(c, (m, 1)))
        better = fc > best_f
        best_f[better] = fc[better]
        best_u[better] = c
    return best_u, best_f


def _make_evaluator(model, X_nodes, quad, include_noise):
    def evaluate(rows: np.ndarray, U: np.ndarray) -> np.ndarray:
        means, variances = _posterior_batch(
            model, X_nodes[rows], U, include_noise
        )
        return np.clip(quad.values(means, variances), 0.0, 1.0)

    return evaluate


def optimal_action(
    J_next,
    x,
    model: GpModel,
    grid: StateGrid,
    safe: Box,
    u_bounds: Box,
    control_set: np.ndarray | None = None,
    search: SearchConfig = SearchConfig(),
    include_noise: bool = True,
    rule: str = "left",
    renormalize: bool = False,
) -> tuple[np.ndarray, float]:
    """Maximize the one-stage backup over the control box at one state.

    With ``control_set`` the maximization is exhaustive over the given
    controls, ties broken by smallest control norm then lexicographically.
    Otherwise the control box is searched by ``optimize.pattern_search``
    started at the minimum-norm feasible control (which also settles ties
    for constant objectives).
    """
    quad = _Quadrature(grid, safe, _table_values(J_next), rule, renormalize)
    X = np.asarray(x, dtype=float).reshape(1, -1)
    evaluate = _make_evaluator(model, X, quad, include_noise)
    if control_set is not None:
        cands = _control_candidates(control_set)
        u, f = _evaluate_controls_discrete(evaluate, 1, cands)
        return u[0], float(f[0])
    u, f = _search_controls_batch(evaluate, 1, u_bounds, search)
    return u[0], float(f[0])


def _sweep_stage(
    model: GpModel,
    grid: StateGrid,
    safe: Box,
    u_bounds: Box,
    J_next: np.ndarray,
    control_set: np.ndarray | None,
    search: SearchConfig,
    include_noise: bool,
    rule: str,
    renormalize: bool,
    threads: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Optimal action at every grid node for one backward stage."""
    quad = _Quadrature(grid, safe, J_next, rule, renormalize)
    X_all = grid.node_array()
    n_nodes = X_all.shape[0]
    mu = u_bounds.ndim
    cands = _control_candidates(control_set) if control_set is not None else None

    def run_chunk(start: int, stop: int):
        X = X_all[start:stop]
        evaluate = _make_evaluator(model, X, quad, include_noise)
        m = stop - start
        if cands is not None:
            u, f = _evaluate_controls_discrete(evaluate, m, cands)
        else:
            u, f = _search_controls_batch(evaluate, m, u_bounds, search)
        means, variances = _posterior_batch(model, X, u, include_noise)
        raw, mass = quad.values_and_mass(means, variances)
        return u, raw, mass

    spans = [
        (s, min(s + SWEEP_CHUNK, n_nodes)) for s in range(0, n_nodes, SWEEP_CHUNK)
    ]
    if threads > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda sp: run_chunk(*sp), spans))
    else:
        parts = [run_chunk(*sp) for sp in spans]

    controls = np.vstack([p[0] for p in parts]).reshape(grid.shape + (mu,))
    pre_clamp = np.concatenate([p[1] for p in parts]).reshape(grid.shape)
    mass = np.concatenate([p[2] for p in parts]).reshape(grid.shape)
    values = np.clip(pre_clamp, 0.0, 1.0)
    return values, pre_clamp, mass, controls


def solve(
    model: GpModel,
    grid: StateGrid,
    safe: Box,
    target: Region,
    u_bounds: Box,
    horizon: int,
    control_set: np.ndarray | None = None,
    search: SearchConfig = SearchConfig(),
    include_noise: bool = True,
    rule: str = "left",
    renormalize: bool = False,
    threads: int | None = None,
) -> DpSolution:
    """Backward reach-avoid recursion over the full grid.

    Returns all stage tables (k = 0..horizon; the last one is the target
    indicator exactly) and the optimal-control table for stages
    0..horizon-1.  Each stage is computed once per node (memoized backward
    sweep); the mathematics matches the naive recursion checked by
    ``cost_algorithm2``.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    nthreads = resolve_threads(threads)
    indicator = _indicator_table(grid, target)
    tables: list[ValueTable] = [
        ValueTable(
            stage=horizon,
            values=indicator,
            pre_clamp=indicator.copy(),
            mass=np.zeros(grid.shape),
        )
    ]
    controls_per_stage = []
    J = indicator
    for k in range(horizon - 1, -1, -1):
        values, pre_clamp, mass, controls = _sweep_stage(
            model, grid, safe, u_bounds, J,
            control_set, search, include_noise, rule, renormalize, nthreads,
        )
        tables.append(ValueTable(stage=k, values=values, pre_clamp=pre_clamp, mass=mass))
        controls_per_stage.append(controls)
        J = values
    tables.reverse()
    controls_per_stage.reverse()
    policy = PolicyTable(controls=np.stack(controls_per_stage, axis=0))
    return DpSolution(tables=tuple(tables), policy=policy, grid=grid)


@dataclass(frozen=True)
class ActionResult:
    control: np.ndarray
    value: float
    tables: tuple[ValueTable, ...]  # stages 1..horizon (grid sweeps only)


def solve_action(
    model: GpModel,
    x0,
    grid: StateGrid,
    safe: Box,
    target: Region,
    u_bounds: Box,
    horizon: int,
    control_set: np.ndarray | None = None,
    search: SearchConfig = SearchConfig(),
    include_noise: bool = True,
    rule: str = "left",
    renormalize: bool = False,
    threads: int | None = None,
) -> ActionResult:
    """Optimal stage-0 action at one state, sweeping the grid only for the
    intermediate stages (for horizon 1 no grid sweep is needed)."""
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    nthreads = resolve_threads(threads)
    indicator = _indicator_table(grid, target)
    tables: list[ValueTable] = [
        ValueTable(
            stage=horizon,
            values=indicator,
            pre_clamp=indicator.copy(),
            mass=np.zeros(grid.shape),
        )
    ]
    J = indicator
    for k in range(horizon - 1, 0, -1):
        values, pre_clamp, mass, _ = _sweep_stage(
            model, grid, safe, u_bounds, J,
            control_set, search, include_noise, rule, renormalize, nthreads,
        )
        tables.append(ValueTable(stage=k, values=values, pre_clamp=pre_clamp, mass=mass))
        J = values
    u, value = optimal_action(
        J, x0, model, grid, safe, u_bounds,
        control_set=control_set, search=search, include_noise=include_noise,
        rule=rule, renormalize=renormalize,
    )
    tables.reverse()
    return ActionResult(control=u, value=value, tables=tuple(tables))


def reach_avoid_success_prob(
    J0: ValueTable,
    grid: StateGrid,
    safe: Box,
    normalized: bool = False,
) -> float:
    """Riemann sum of J_0 over the safe quadrature nodes times cell volume.

    The unnormalized value integrates J_0 over the safe set; the normalized
    variant divides by the quadrature measure of the same node set.
    """
    quad = _Quadrature(grid, safe, J0.values, rule="left")
    total = float(np.sum(quad.weighted_J))
    if not normalized:
        return total
    denom = float(np.sum(quad.safe_weights))
    return total / denom if denom > 0 else 0.0


def monte_carlo_reach_prob(
    model: GpModel,
    policy: PolicyTable,
    x0,
    safe: Box,
    target: Region,
    grid: StateGrid,
    horizon: int,
    samples: int = 10_000,
    seed: int = 0,
    include_noise: bool = True,
) -> McEstimate:
    """Monte-Carlo estimate of the reach-avoid probability under a policy.

    Simulates the GP-predicted stochastic system (each next state drawn from
    the per-dimension posterior Gaussians), counting trajectories that stay
    in the safe set through stage ``horizon - 1`` and land in the target at
    the final stage.  A start outside the safe set counts as failure.
    Off-grid policy lookups use the nearest grid node.  Deterministic for a
    fixed seed.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    if policy.horizon < horizon:
        raise ValueError("policy has fewer stages than the requested horizon")
    rng = np.random.default_rng(seed)
    x0 = np.asarray(x0, dtype=float).ravel()

    if not safe.contains(x0):
        return McEstimate(estimate=0.0, stderr=0.0, successes=0, samples=samples)

    states = np.tile(x0, (samples, 1))
    alive = np.ones(samples, dtype=bool)
    for k in range(horizon):
        idx = np.nonzero(alive)[0]
        if idx.size == 0:
            break
        node_idx = grid.nearest_indices(states[idx])
        controls = policy.controls[k][node_idx]
        means, variances = _posterior_batch(model, states[idx], controls, include_noise)
        stds = np.sqrt(np.maximum(variances, VARIANCE_FLOOR))
        nxt = means + stds * rng.standard_normal(means.shape)
        states[idx] = nxt
        if k < horizon - 1:
            alive[idx] &= safe.contains_many(nxt)
        else:
            alive[idx] &= target.contains_many(nxt)

    successes = int(np.count_nonzero(alive))
    p = successes / samples
    stderr = math.sqrt(p * (1.0 - p) / samples)
    return McEstimate(estimate=p, stderr=stderr, successes=successes, samples=samples)


def cost_algorithm2(
    model: GpModel,
    x0,
    target: Region,
    safe: Box,
    grid: StateGrid,
    u_bounds: Box,
    horizon: int,
    k: int = 0,
    search: SearchConfig = SearchConfig(),
    include_noise: bool = True,
    rule: str = "left",
    renormalize: bool = False,
) -> float:
    """Literal top-down cost recursion with a pattern search at every level.

    At the final stage the quadrature runs over the grid nodes inside the
    safe part of the target set; earlier stages recurse into the integral
    without memoization, so the cost is exponential in the horizon.  Used
    exclusively as a small-scale cross-check of ``solve``; horizons above 2
    are refused.
    """
    if horizon > 2:
        raise ValueError(
            "cost_algorithm2 is a naive cross-check; horizons above 2 are refused"
        )
    if not 0 <= k < horizon:
        raise ValueError("stage index must satisfy 0 <= k < horizon")

    indicator = _indicator_table(grid, target)
    terminal_quad = _Quadrature(grid, safe, indicator, rule, renormalize)

    def stage_value(x: np.ndarray, stage: int) -> float:
        X = x.reshape(1, -1)

        if stage == horizon - 1:
            evaluate = _make_evaluator(model, X, terminal_quad, include_noise)
        else:
            # Next-stage values at the quadrature nodes, recomputed inside
            # every control evaluation exactly as the naive recursion reads.
            def evaluate(rows, U):
                eval_states = np.stack(
                    np.meshgrid(*terminal_quad.eval_nodes, indexing="ij"), axis=-1
                ).reshape(-1, grid.ndim)
                inner = np.array(
                    [stage_value(z, stage + 1) for z in eval_states]
                ).reshape([n.size for n in terminal_quad.eval_nodes])
                quad_k = terminal_quad.with_eval_values(inner)
                return _make_evaluator(model, X, quad_k, include_noise)(rows, U)

        _, value = _search_controls_batch(evaluate, 1, u_bounds, search)
        return float(value[0])

    return stage_value(np.asarray(x0, dtype=float).ravel(), k)


def table_value(
    table: ValueTable,
    grid: StateGrid,
    x,
    method: str = "nearest",
) -> float:
    """Stage value at an arbitrary state: nearest node (default) or
    multilinear interpolation behind the flag."""
    x = np.asarray(x, dtype=float).ravel()
    if method == "nearest":
        return float(table.values[grid.nearest_index(x)])
    if method != "linear":
        raise ValueError(f"unknown lookup method {method!r}")
    idx = []
    weights = []
    for k, nodes in enumerate(grid.nodes):
        i = int(np.clip(np.searchsorted(nodes, x[k]) - 1, 0, nodes.size - 2))
        t = (x[k] - nodes[i]) / (nodes[i + 1] - nodes[i])
        idx.append(i)
        weights.append(np.clip(t, 0.0, 1.0))
    value = 0.0
    for corner in range(2**grid.ndim):
        w = 1.0
        pos = []
        for k in range(grid.ndim):
            bit = (corner >> k) & 1
            w *= weights[k] if bit else (1.0 - weights[k])
            pos.append(idx[k] + bit)
        value += w * float(table.values[tuple(pos)])
    return value
