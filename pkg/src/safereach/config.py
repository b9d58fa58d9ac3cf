"""Run configuration: defaults, validation, and the flat key=value file format.

Every field of :class:`RunConfig` maps to one documented key in the config
file; CLI flags override file values.  The run manifest written next to the
results uses the same format with every value resolved, so a manifest can be
loaded back as a config.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .explore import ExplorationConfig
from .gp import GpHyperparams, HyperparamBounds, default_hyperparam_bounds
from .optimize import SearchConfig
from .pendulum import DisturbanceSpec, PendulumParams
from .regions import Ball, Box
from .reachdp import StateGrid

STATE_DIM = 2
INPUT_DIM = 3  # angle, angular velocity, control


@dataclass(frozen=True)
class RunConfig:
    """Full experiment configuration; defaults reproduce the benchmark setup."""

    pendulum: PendulumParams = PendulumParams()
    disturbance: DisturbanceSpec = field(
        default_factory=lambda: DisturbanceSpec(
            amplitudes=np.array([0.2, 2.0]), frequencies=np.array([20.0, 3.0])
        )
    )

    state_box: Box = field(
        default_factory=lambda: Box([-math.pi / 2, -10.0], [math.pi / 2, 10.0])
    )
    safe_box: Box = field(
        default_factory=lambda: Box([-math.pi / 4, -10.0], [math.pi / 4, 10.0])
    )
    target_center: tuple[float, float] = (0.0, 0.0)
    target_radius: float = 2.0 * math.pi / 100.0
    snap_target_to_grid: bool = True
    control_box: Box = field(default_factory=lambda: Box([-5.0], [5.0]))

    nn: int = 40
    horizon: int = 2
    include_noise_in_dp: bool = True
    quadrature_rule: str = "left"
    renormalize_density: bool = False
    interpolation: str = "nearest"
    dp_search: SearchConfig = SearchConfig()

    steps_per_iteration: int = 40
    iterations: int = 4
    refit_period: int = 10
    explore: bool = False
    exploration: ExplorationConfig = ExplorationConfig()

    degree: int = 5
    # None selects the built-in defaults derived from the pendulum constants.
    initial_hyperparams: tuple[GpHyperparams, ...] | None = None
    mle_search: SearchConfig = SearchConfig(max_evals=600, n_starts=3)
    mle_scale: float = 1e4
    mle_coeff_halfwidth: float | None = None
    # Observation-noise MLE bounds per output dimension; None entries resolve
    # to a grid-derived floor of (half cell width)^2.
    mle_noise_bounds: tuple[tuple[float | None, float | None], ...] = (
        (None, None),
        (None, None),
    )

    init_state: tuple[float, float] = (0.0, 0.1)
    init_state_jitter: float = 0.0
    reset_on_violation: bool = False
    clip_to_state_box: bool = True
    wrap_angle: bool = False

    seed: int = 0
    threads: int = 0

    @property
    def total_steps(self) -> int:
        return self.steps_per_iteration * self.iterations


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


def default_initial_hyperparams(
    pendulum: PendulumParams, degree: int = 5
) -> tuple[GpHyperparams, GpHyperparams]:
    """Conservative starting hyperparameters for the pendulum experiment.

    The polynomial mean is seeded with the Taylor coefficients of the known
    Forward-Euler model (the sine expanded to the chosen degree), so the
    kernel part only has to absorb the unknown disturbances.
    """
    if degree < 1:
        raise ConfigError("polynomial degree must be at least 1")
    T = pendulum.sample_time
    m, l, b, g = (
        pendulum.mass,
        pendulum.length,
        pendulum.friction,
        pendulum.gravity,
    )

    def rows(entries: dict[int, list[float]]) -> np.ndarray:
        c = np.zeros((INPUT_DIM, degree + 1))
        for i, vals in entries.items():
            vals = vals[: degree + 1]
            c[i, : len(vals)] = vals
        return c

    # next angle = x1 + T x2
    c1 = rows({0: [0.0, 1.0], 1: [0.0, T]})
    # next velocity = (g T / l) sin(x1) + (1 - b T / m) x2 + (T / (m l^2)) u
    gt = g * T / l
    c2 = rows(
        {
            0: [0.0, gt, 0.0, -gt / 6.0, 0.0, gt / 120.0],
            1: [0.0, 1.0 - b * T / m],
            2: [0.0, T / (m * l * l)],
        }
    )
    length_scales = np.array([0.04, 0.25, 100.0])
    h1 = GpHyperparams(
        noise_variance=1e-3,
        signal_variance=0.01,
        length_scales=length_scales,
        poly_coeffs=c1,
    )
    h2 = GpHyperparams(
        noise_variance=1e-3,
        signal_variance=0.25,
        length_scales=length_scales,
        poly_coeffs=c2,
    )
    return (h1, h2)


def resolve_initial_hyperparams(cfg: RunConfig) -> tuple[GpHyperparams, ...]:
    if cfg.initial_hyperparams is not None:
        hyps = cfg.initial_hyperparams
        if len(hyps) != STATE_DIM:
            raise ConfigError("need one hyperparameter set per state dimension")
        return tuple(hyps)
    return default_initial_hyperparams(cfg.pendulum, cfg.degree)


def resolve_mle_bounds(
    cfg: RunConfig, grid: StateGrid, hyps: tuple[GpHyperparams, ...]
) -> tuple[HyperparamBounds, ...]:
    """One MLE box per output dimension, anchored at the initial values.

    The observation-noise lower bound defaults to (half the grid cell width
    of that state dimension)^2: it keeps the grid transition density from
    degenerating below the quadrature resolution.
    """
    out = []
    for i, hyp in enumerate(hyps):
        base = default_hyperparam_bounds(
            hyp, scale=cfg.mle_scale, coeff_halfwidth=cfg.mle_coeff_halfwidth
        )
        lo_cfg, hi_cfg = cfg.mle_noise_bounds[i]
        auto_lo = (0.5 * grid.widths[i]) ** 2
        lo = auto_lo if lo_cfg is None else lo_cfg
        hi = max(0.25, 16.0 * lo) if hi_cfg is None else hi_cfg
        if not lo <= hi:
            raise ConfigError(f"noise bounds for output {i} are empty: [{lo}, {hi}]")
        lower = replace(
            base.lower, noise_variance=min(lo, hyp.noise_variance)
        )
        upper = replace(
            base.upper, noise_variance=max(hi, hyp.noise_variance)
        )
        out.append(HyperparamBounds(lower, upper))
    return tuple(out)


def resolve_target(cfg: RunConfig, grid: StateGrid) -> Ball:
    center = np.asarray(cfg.target_center, dtype=float)
    if cfg.snap_target_to_grid:
        idx = grid.nearest_index(center)
        center = np.array([grid.nodes[k][idx[k]] for k in range(grid.ndim)])
    return Ball(center=center, radius=cfg.target_radius)


def validate(cfg: RunConfig) -> None:
    """Reject inconsistent configurations before a run starts."""
    if cfg.horizon < 1:
        raise ConfigError("horizon must be at least 1")
    if cfg.steps_per_iteration < 1 or cfg.iterations < 1:
        raise ConfigError("steps_per_iteration and iterations must be positive")
    if cfg.refit_period < 1:
        raise ConfigError("refit_period must be a positive integer")
    if cfg.quadrature_rule not in ("left", "midpoint"):
        raise ConfigError(f"unknown quadrature rule {cfg.quadrature_rule!r}")
    if cfg.interpolation not in ("nearest", "linear"):
        raise ConfigError(f"unknown interpolation {cfg.interpolation!r}")
    if not cfg.safe_box.issubset(cfg.state_box):
        raise ConfigError("safe box must be contained in the state box")
    grid = StateGrid.from_box(cfg.state_box, cfg.nn)
    target = resolve_target(cfg, grid)
    lo = target.center - target.radius
    hi = target.center + target.radius
    if not (np.all(lo >= cfg.safe_box.lower) and np.all(hi <= cfg.safe_box.upper)):
        raise ConfigError("target ball must be contained in the safe box")
    if not cfg.state_box.contains(cfg.init_state):
        raise ConfigError("initial state must lie in the state box")
    resolve_initial_hyperparams(cfg)


# ---------------------------------------------------------------------------
# Flat key=value serialization
# ---------------------------------------------------------------------------

_TRUE = {"1", "true", "on", "yes"}
_FALSE = {"0", "false", "off", "no"}


def _parse_bool(s: str) -> bool:
    t = s.strip().lower()
    if t in _TRUE:
        return True
    if t in _FALSE:
        return False
    raise ConfigError(f"expected a boolean, got {s!r}")


def _parse_floats(s: str) -> np.ndarray:
    return np.array([float(tok) for tok in s.replace(",", " ").split()])


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, np.ndarray):
        return ",".join(repr(float(x)) for x in v.ravel())
    return str(v)


def config_to_dict(cfg: RunConfig) -> dict[str, str]:
    """Flatten a config to its documented key=value pairs (fully resolved)."""
    p, d = cfg.pendulum, cfg.disturbance
    hyps = resolve_initial_hyperparams(cfg)
    out: dict[str, str] = {
        "mass": _fmt(p.mass),
        "length": _fmt(p.length),
        "friction": _fmt(p.friction),
        "gravity": _fmt(p.gravity),
        "sample_time": _fmt(p.sample_time),
        "d1_amplitude": _fmt(float(d.amplitudes[0])),
        "d1_frequency": _fmt(float(d.frequencies[0])),
        "d2_amplitude": _fmt(float(d.amplitudes[1])),
        "d2_frequency": _fmt(float(d.frequencies[1])),
        "x1_min": _fmt(float(cfg.state_box.lower[0])),
        "x1_max": _fmt(float(cfg.state_box.upper[0])),
        "x2_min": _fmt(float(cfg.state_box.lower[1])),
        "x2_max": _fmt(float(cfg.state_box.upper[1])),
        "safe_x1_min": _fmt(float(cfg.safe_box.lower[0])),
        "safe_x1_max": _fmt(float(cfg.safe_box.upper[0])),
        "safe_x2_min": _fmt(float(cfg.safe_box.lower[1])),
        "safe_x2_max": _fmt(float(cfg.safe_box.upper[1])),
        "u_min": _fmt(float(cfg.control_box.lower[0])),
        "u_max": _fmt(float(cfg.control_box.upper[0])),
        "target_x1": _fmt(float(cfg.target_center[0])),
        "target_x2": _fmt(float(cfg.target_center[1])),
        "target_radius": _fmt(cfg.target_radius),
        "snap_target_to_grid": _fmt(cfg.snap_target_to_grid),
        "nn": _fmt(cfg.nn),
        "horizon": _fmt(cfg.horizon),
        "include_noise_in_dp": _fmt(cfg.include_noise_in_dp),
        "quadrature_rule": cfg.quadrature_rule,
        "renormalize_density": _fmt(cfg.renormalize_density),
        "interpolation": cfg.interpolation,
        "dp_initial_mesh": _fmt(cfg.dp_search.initial_mesh),
        "dp_contraction": _fmt(cfg.dp_search.contraction),
        "dp_mesh_tolerance": _fmt(cfg.dp_search.mesh_tolerance),
        "dp_max_evals": _fmt(cfg.dp_search.max_evals),
        "dp_starts": _fmt(cfg.dp_search.n_starts),
        "steps_per_iteration": _fmt(cfg.steps_per_iteration),
        "iterations": _fmt(cfg.iterations),
        "refit_period": _fmt(cfg.refit_period),
        "explore": _fmt(cfg.explore),
        "explore_radius": _fmt(cfg.exploration.radius),
        "explore_period": _fmt(cfg.exploration.trigger_period),
        "explore_quadrature_points": _fmt(cfg.exploration.control_quadrature_points),
        "degree": _fmt(cfg.degree),
        "mle_max_evals": _fmt(cfg.mle_search.max_evals),
        "mle_starts": _fmt(cfg.mle_search.n_starts),
        "mle_scale": _fmt(cfg.mle_scale),
        "mle_coeff_halfwidth": (
            "auto" if cfg.mle_coeff_halfwidth is None else _fmt(cfg.mle_coeff_halfwidth)
        ),
        "init_x1": _fmt(float(cfg.init_state[0])),
        "init_x2": _fmt(float(cfg.init_state[1])),
        "init_state_jitter": _fmt(cfg.init_state_jitter),
        "reset_on_violation": _fmt(cfg.reset_on_violation),
        "clip_to_state_box": _fmt(cfg.clip_to_state_box),
        "wrap_angle": _fmt(cfg.wrap_angle),
        "seed": _fmt(cfg.seed),
        "threads": _fmt(cfg.threads),
    }
    for i, (lo, hi) in enumerate(cfg.mle_noise_bounds, start=1):
        out[f"mle_noise_lo_{i}"] = "auto" if lo is None else _fmt(lo)
        out[f"mle_noise_hi_{i}"] = "auto" if hi is None else _fmt(hi)
    for i, hyp in enumerate(hyps, start=1):
        out[f"hyp{i}_noise_variance"] = _fmt(hyp.noise_variance)
        out[f"hyp{i}_signal_variance"] = _fmt(hyp.signal_variance)
        out[f"hyp{i}_length_scales"] = _fmt(hyp.length_scales)
        out[f"hyp{i}_poly_coeffs"] = _fmt(hyp.poly_coeffs)
    return out


def config_from_dict(values: dict[str, str], strict: bool = True) -> RunConfig:
    """Build a config from flat key=value pairs; missing keys keep defaults."""
    base = RunConfig()
    known = set(config_to_dict(base))
    unknown = set(values) - known
    if unknown and strict:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    v = {k: s for k, s in values.items() if k in known}

    def get(key, cast, default):
        return cast(v[key]) if key in v else default

    pend = PendulumParams(
        mass=get("mass", float, base.pendulum.mass),
        length=get("length", float, base.pendulum.length),
        friction=get("friction", float, base.pendulum.friction),
        gravity=get("gravity", float, base.pendulum.gravity),
        sample_time=get("sample_time", float, base.pendulum.sample_time),
    )
    dist = DisturbanceSpec(
        amplitudes=np.array(
            [
                get("d1_amplitude", float, 0.2),
                get("d2_amplitude", float, 2.0),
            ]
        ),
        frequencies=np.array(
            [
                get("d1_frequency", float, 20.0),
                get("d2_frequency", float, 3.0),
            ]
        ),
    )
    state_box = Box(
        [
            get("x1_min", float, float(base.state_box.lower[0])),
            get("x2_min", float, float(base.state_box.lower[1])),
        ],
        [
            get("x1_max", float, float(base.state_box.upper[0])),
            get("x2_max", float, float(base.state_box.upper[1])),
        ],
    )
    safe_box = Box(
        [
            get("safe_x1_min", float, float(base.safe_box.lower[0])),
            get("safe_x2_min", float, float(state_box.lower[1])),
        ],
        [
            get("safe_x1_max", float, float(base.safe_box.upper[0])),
            get("safe_x2_max", float, float(state_box.upper[1])),
        ],
    )
    control_box = Box(
        [get("u_min", float, float(base.control_box.lower[0]))],
        [get("u_max", float, float(base.control_box.upper[0]))],
    )

    def opt_float(key):
        if key not in v or v[key].strip().lower() == "auto":
            return None
        return float(v[key])

    noise_bounds = tuple(
        (opt_float(f"mle_noise_lo_{i}"), opt_float(f"mle_noise_hi_{i}"))
        for i in (1, 2)
    )

    degree = get("degree", int, base.degree)
    hyps = None
    if any(k.startswith("hyp") for k in v):
        defaults = default_initial_hyperparams(pend, degree)
        built = []
        for i, dflt in enumerate(defaults, start=1):
            ls = (
                _parse_floats(v[f"hyp{i}_length_scales"])
                if f"hyp{i}_length_scales" in v
                else dflt.length_scales
            )
            pc = (
                _parse_floats(v[f"hyp{i}_poly_coeffs"]).reshape(INPUT_DIM, degree + 1)
                if f"hyp{i}_poly_coeffs" in v
                else dflt.poly_coeffs
            )
            built.append(
                GpHyperparams(
                    noise_variance=get(
                        f"hyp{i}_noise_variance", float, dflt.noise_variance
                    ),
                    signal_variance=get(
                        f"hyp{i}_signal_variance", float, dflt.signal_variance
                    ),
                    length_scales=ls,
                    poly_coeffs=pc,
                )
            )
        hyps = tuple(built)

    return RunConfig(
        pendulum=pend,
        disturbance=dist,
        state_box=state_box,
        safe_box=safe_box,
        target_center=(
            get("target_x1", float, base.target_center[0]),
            get("target_x2", float, base.target_center[1]),
        ),
        target_radius=get("target_radius", float, base.target_radius),
        snap_target_to_grid=get(
            "snap_target_to_grid", _parse_bool, base.snap_target_to_grid
        ),
        control_box=control_box,
        nn=get("nn", int, base.nn),
        horizon=get("horizon", int, base.horizon),
        include_noise_in_dp=get(
            "include_noise_in_dp", _parse_bool, base.include_noise_in_dp
        ),
        quadrature_rule=get("quadrature_rule", str.strip, base.quadrature_rule),
        renormalize_density=get(
            "renormalize_density", _parse_bool, base.renormalize_density
        ),
        interpolation=get("interpolation", str.strip, base.interpolation),
        dp_search=SearchConfig(
            initial_mesh=get("dp_initial_mesh", float, base.dp_search.initial_mesh),
            contraction=get("dp_contraction", float, base.dp_search.contraction),
            mesh_tolerance=get(
                "dp_mesh_tolerance", float, base.dp_search.mesh_tolerance
            ),
            max_evals=get("dp_max_evals", int, base.dp_search.max_evals),
            n_starts=get("dp_starts", int, base.dp_search.n_starts),
        ),
        steps_per_iteration=get(
            "steps_per_iteration", int, base.steps_per_iteration
        ),
        iterations=get("iterations", int, base.iterations),
        refit_period=get("refit_period", int, base.refit_period),
        explore=get("explore", _parse_bool, base.explore),
        exploration=ExplorationConfig(
            radius=get("explore_radius", float, base.exploration.radius),
            trigger_period=get(
                "explore_period", int, base.exploration.trigger_period
            ),
            control_quadrature_points=get(
                "explore_quadrature_points",
                int,
                base.exploration.control_quadrature_points,
            ),
        ),
        degree=degree,
        initial_hyperparams=hyps,
        mle_search=SearchConfig(
            max_evals=get("mle_max_evals", int, base.mle_search.max_evals),
            n_starts=get("mle_starts", int, base.mle_search.n_starts),
        ),
        mle_scale=get("mle_scale", float, base.mle_scale),
        mle_coeff_halfwidth=opt_float("mle_coeff_halfwidth"),
        mle_noise_bounds=noise_bounds,
        init_state=(
            get("init_x1", float, base.init_state[0]),
            get("init_x2", float, base.init_state[1]),
        ),
        init_state_jitter=get("init_state_jitter", float, base.init_state_jitter),
        reset_on_violation=get(
            "reset_on_violation", _parse_bool, base.reset_on_violation
        ),
        clip_to_state_box=get(
            "clip_to_state_box", _parse_bool, base.clip_to_state_box
        ),
        wrap_angle=get("wrap_angle", _parse_bool, base.wrap_angle),
        seed=get("seed", int, base.seed),
        threads=get("threads", int, base.threads),
    )


def read_config_file(path, strict: bool = True) -> RunConfig:
    """Load a flat key=value config file ('#' starts a comment)."""
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, val = stripped.partition("=")
            values[key.strip()] = val.strip()
    return config_from_dict(values, strict=strict)


def write_config_file(cfg: RunConfig, path, extra: dict[str, str] | None = None):
    """Write the resolved config (plus any informational keys) as key=value."""
    lines = [f"{k}={v}" for k, v in config_to_dict(cfg).items()]
    for k, v in (extra or {}).items():
        lines.append(f"{k}={v}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
