"""Learning loop: act by reach-avoid DP, record samples, refit the GP.

One run executes ``iterations x steps_per_iteration`` steps.  Each step fits
the GP on everything recorded so far, optionally relocates the target to the
most uncertain region, periodically refits the hyperparameters by marginal
likelihood, solves the reach-avoid program from the current state, and
applies the optimal control to the ground-truth plant.  The dataset starts
from a single seed row (initial state, zero control) and grows by one sample
per step.  Runs are deterministic for a fixed seed.
"""

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .config import (
    RunConfig,
    config_to_dict,
    resolve_initial_hyperparams,
    resolve_mle_bounds,
    resolve_target,
    validate,
)
from .explore import select_target
from .gp import (
    Dataset,
    GpHyperparams,
    GpModel,
    fit,
    log_marginal_likelihood,
    optimize_hyperparams,
    predict_many,
)
from .pendulum import euler_step, wrap_angle
from .reachdp import StateGrid, solve_action
from .regions import Ball


@dataclass(frozen=True)
class StepRecord:
    step: int
    state: np.ndarray
    control: float
    next_state: np.ndarray
    in_safe: bool
    dp_value: float
    wall_time: float


@dataclass(frozen=True)
class RefitRecord:
    step: int
    output_dim: int
    before: GpHyperparams
    after: GpHyperparams
    lml_before: float
    lml_after: float


@dataclass
class EpisodeLog:
    config: RunConfig
    steps: list[StepRecord] = field(default_factory=list)
    refits: list[RefitRecord] = field(default_factory=list)
    violations_per_iteration: list[int] = field(default_factory=list)
    dataset: Dataset | None = None
    final_hyperparams: tuple[GpHyperparams, ...] | None = None

    @property
    def violation_count(self) -> int:
        return sum(self.violations_per_iteration)


def run_learning(cfg: RunConfig) -> EpisodeLog:
    """Execute the full learning loop and return the step-by-step log.

    The in-safe flag of a step refers to the state the applied control
    produced; violations are counted per iteration from those flags.  On a
    violation the state either continues (default) or resets to the initial
    state when ``reset_on_violation`` is set.
    """
    validate(cfg)
    rng = np.random.default_rng(cfg.seed)
    grid = StateGrid.from_box(cfg.state_box, cfg.nn)
    hyps = list(resolve_initial_hyperparams(cfg))
    bounds = resolve_mle_bounds(cfg, grid, tuple(hyps))
    target = resolve_target(cfg, grid)
    threads = cfg.threads if cfg.threads > 0 else None

    state = np.asarray(cfg.init_state, dtype=float)
    if cfg.init_state_jitter > 0.0:
        state = state + cfg.init_state_jitter * rng.uniform(-1.0, 1.0, size=2)

    # Seed sample: the plant's response to the initial state under zero control.
    seed_next = euler_step(state, 0.0, cfg.pendulum, cfg.disturbance)
    dataset = Dataset(
        inputs=np.concatenate([state, [0.0]]).reshape(1, -1),
        targets=seed_next.reshape(1, -1),
    )
    state = _advance(seed_next, cfg)

    log = EpisodeLog(config=cfg)
    violations = [0] * cfg.iterations

    for step in range(1, cfg.total_steps + 1):
        t0 = time.perf_counter()
        model = fit(dataset, tuple(hyps))

        if cfg.explore and step % cfg.exploration.trigger_period == 0:
            target = select_target(
                model, cfg.safe_box, cfg.exploration, grid, cfg.control_box
            )

        if step % cfg.refit_period == 0:
            for i in range(dataset.output_dim):
                sub = dataset.single_output(i)
                lml_before = log_marginal_likelihood(sub, hyps[i])
                refitted = optimize_hyperparams(
                    sub, hyps[i], bounds[i], cfg.mle_search
                )
                lml_after = log_marginal_likelihood(sub, refitted)
                log.refits.append(
                    RefitRecord(step, i, hyps[i], refitted, lml_before, lml_after)
                )
                hyps[i] = refitted
            model = fit(dataset, tuple(hyps))

        action = solve_action(
            model,
            state,
            grid,
            cfg.safe_box,
            target,
            cfg.control_box,
            cfg.horizon,
            search=cfg.dp_search,
            include_noise=cfg.include_noise_in_dp,
            rule=cfg.quadrature_rule,
            renormalize=cfg.renormalize_density,
            threads=threads,
        )
        u = float(action.control[0])

        next_state = euler_step(state, u, cfg.pendulum, cfg.disturbance)
        dataset = dataset.append(np.concatenate([state, [u]]), next_state)
        in_safe = cfg.safe_box.contains(next_state)
        iteration = (step - 1) // cfg.steps_per_iteration
        if not in_safe:
            violations[iteration] += 1
        log.steps.append(
            StepRecord(
                step=step,
                state=state,
                control=u,
                next_state=next_state,
                in_safe=in_safe,
                dp_value=action.value,
                wall_time=time.perf_counter() - t0,
            )
        )

        if not in_safe and cfg.reset_on_violation:
            state = np.asarray(cfg.init_state, dtype=float)
        else:
            state = _advance(next_state, cfg)

    log.violations_per_iteration = violations
    log.dataset = dataset
    log.final_hyperparams = tuple(hyps)
    return log


def _advance(next_state: np.ndarray, cfg: RunConfig) -> np.ndarray:
    if cfg.wrap_angle:
        next_state = wrap_angle(next_state)
    if cfg.clip_to_state_box:
        next_state = cfg.state_box.clip(next_state)
    return next_state


def build_model(dataset: Dataset, hyps) -> GpModel:
    """Fit a model from recorded samples (used by the report path)."""
    return fit(dataset, hyps)


def grid_report(model: GpModel, grid: StateGrid, fixed_u: float = 0.0) -> np.ndarray:
    """Posterior over the state grid at one fixed control.

    Returns an (n_nodes, 8) array with columns x1, x2, mean1, mean2, var1,
    var2, log10var1, log10var2.  The variance columns are the observable
    next-state variances (posterior variance plus observation noise), so an
    empty dataset gives a constant column of signal plus noise variance.
    """
    nodes = grid.node_array()
    X = np.hstack([nodes, np.full((nodes.shape[0], 1), fixed_u)])
    means, variances = predict_many(model, X)
    variances = variances + np.array([h.noise_variance for h in model.hyperparams])
    return np.column_stack([nodes, means, variances, np.log10(variances)])


GRID_REPORT_COLUMNS = [
    "x1", "x2", "mean1", "mean2", "var1", "var2", "log10var1", "log10var2",
]
TRAJECTORY_COLUMNS = ["step", "x1", "x2", "u", "in_safe"]
HYPERPARAMS_COLUMNS = ["step", "output_dim", "param", "before", "after"]
VIOLATIONS_COLUMNS = ["iteration", "violations"]
DATASET_COLUMNS = ["x1", "x2", "u", "y1", "y2"]


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _num(v) -> str:
    return repr(float(v))


def _hyp_param_rows(before: GpHyperparams, after: GpHyperparams):
    yield "noise_variance", before.noise_variance, after.noise_variance
    yield "signal_variance", before.signal_variance, after.signal_variance
    for k in range(before.input_dim):
        yield f"length_scale_{k}", before.length_scales[k], after.length_scales[k]
    for i in range(before.poly_coeffs.shape[0]):
        for j in range(before.poly_coeffs.shape[1]):
            yield f"poly_c_{i}_{j}", before.poly_coeffs[i, j], after.poly_coeffs[i, j]


def export_episode(log: EpisodeLog, outdir) -> dict[str, str]:
    """Write trajectory, hyperparameter, violation, dataset CSVs and the
    run manifest into ``outdir``.  Re-exporting an identical log produces
    byte-identical files."""
    import os

    os.makedirs(outdir, exist_ok=True)
    paths = {}

    paths["trajectory"] = os.path.join(outdir, "trajectory.csv")
    _write_csv(
        paths["trajectory"],
        TRAJECTORY_COLUMNS,
        [
            [s.step, _num(s.state[0]), _num(s.state[1]), _num(s.control),
             int(s.in_safe)]
            for s in log.steps
        ],
    )

    paths["hyperparams"] = os.path.join(outdir, "hyperparams.csv")
    hyp_rows = []
    for r in log.refits:
        hyp_rows.append(
            [r.step, r.output_dim, "log_marginal_likelihood",
             _num(r.lml_before), _num(r.lml_after)]
        )
        for name, b, a in _hyp_param_rows(r.before, r.after):
            hyp_rows.append([r.step, r.output_dim, name, _num(b), _num(a)])
    _write_csv(paths["hyperparams"], HYPERPARAMS_COLUMNS, hyp_rows)

    paths["violations"] = os.path.join(outdir, "violations.csv")
    _write_csv(
        paths["violations"],
        VIOLATIONS_COLUMNS,
        [[i + 1, v] for i, v in enumerate(log.violations_per_iteration)],
    )

    paths["dataset"] = os.path.join(outdir, "dataset.csv")
    if log.dataset is not None:
        rows = [
            [_num(x[0]), _num(x[1]), _num(x[2]), _num(y[0]), _num(y[1])]
            for x, y in zip(log.dataset.inputs, log.dataset.targets)
        ]
    else:
        rows = []
    _write_csv(paths["dataset"], DATASET_COLUMNS, rows)

    paths["manifest"] = os.path.join(outdir, "manifest.txt")
    extra = {"code_version": __version__}
    if log.final_hyperparams is not None:
        for i, hyp in enumerate(log.final_hyperparams, start=1):
            extra[f"final_hyp{i}_noise_variance"] = _num(hyp.noise_variance)
            extra[f"final_hyp{i}_signal_variance"] = _num(hyp.signal_variance)
            extra[f"final_hyp{i}_length_scales"] = ",".join(
                _num(v) for v in hyp.length_scales
            )
            extra[f"final_hyp{i}_poly_coeffs"] = ",".join(
                _num(v) for v in hyp.poly_coeffs.ravel()
            )
    from .config import write_config_file

    write_config_file(log.config, paths["manifest"], extra=extra)
    return paths


def read_dataset_csv(path) -> Dataset:
    """Load a dataset.csv written by ``export_episode``."""
    inputs, targets = [], []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != DATASET_COLUMNS:
            raise ValueError(f"unexpected dataset columns {header}")
        for row in reader:
            vals = [float(v) for v in row]
            inputs.append(vals[:3])
            targets.append(vals[3:])
    if not inputs:
        return Dataset.empty(3, 2)
    return Dataset(np.array(inputs), np.array(targets))


def read_final_hyperparams(manifest_path, degree: int) -> tuple[GpHyperparams, ...]:
    """Recover the fitted hyperparameters recorded in a run manifest."""
    values: dict[str, str] = {}
    with open(manifest_path, "r", encoding="utf-8") as fh:
        for line in fh:
            stripped = line.split("#", 1)[0].strip()
            if stripped and "=" in stripped:
                k, _, v = stripped.partition("=")
                values[k.strip()] = v.strip()
    hyps = []
    for i in (1, 2):
        prefix = f"final_hyp{i}_"
        if prefix + "noise_variance" not in values:
            raise ValueError(f"manifest {manifest_path} has no fitted hyperparameters")
        ls = np.array(
            [float(t) for t in values[prefix + "length_scales"].split(",")]
        )
        pc = np.array(
            [float(t) for t in values[prefix + "poly_coeffs"].split(",")]
        ).reshape(len(ls), degree + 1)
        hyps.append(
            GpHyperparams(
                noise_variance=float(values[prefix + "noise_variance"]),
                signal_variance=float(values[prefix + "signal_variance"]),
                length_scales=ls,
                poly_coeffs=pc,
            )
        )
    return tuple(hyps)


def write_grid_report_csv(report: np.ndarray, path) -> None:
    _write_csv(
        path,
        GRID_REPORT_COLUMNS,
        [[_num(v) for v in row] for row in report],
    )


def mean_grid_variance(model: GpModel, grid: StateGrid, fixed_u: float = 0.0) -> float:
    """Grid-mean posterior (latent) variance summed over output dimensions."""
    nodes = grid.node_array()
    X = np.hstack([nodes, np.full((nodes.shape[0], 1), fixed_u)])
    _, variances = predict_many(model, X)
    return float(variances.sum(axis=1).mean())


def max_grid_variance(
    model: GpModel,
    grid: StateGrid,
    region,
    fixed_u: float = 0.0,
    interior: bool = True,
) -> float:
    """Largest posterior (latent) variance over grid nodes in a region.

    With ``interior`` set, nodes on the region boundary are excluded.  The
    maximum is over output dimensions as well as nodes.
    """
    nodes = grid.node_array()
    if interior:
        strict = np.all(
            (nodes > region.lower) & (nodes < region.upper), axis=1
        )
    else:
        strict = region.contains_many(nodes)
    if not np.any(strict):
        raise ValueError("no grid nodes inside the region")
    X = np.hstack(
        [nodes[strict], np.full((int(strict.sum()), 1), fixed_u)]
    )
    _, variances = predict_many(model, X)
    return float(variances.max())
