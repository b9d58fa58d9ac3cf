"""Exact Gaussian-process regression with a squared-exponential kernel.

One independent scalar GP is fitted per output dimension over a shared input
space (state and control stacked).  The prior mean is a separable polynomial
of the inputs (sum over input dimensions of per-dimension polynomials), whose
coefficients belong to the hyperparameter vector alongside the noise
variance, the signal variance, and the per-dimension squared characteristic
lengths.  Hyperparameters are fitted by maximizing the marginal likelihood
with a derivative-free pattern search.

Fitted models are immutable: ``fit`` and ``optimize_hyperparams`` return new
values, and ``predict`` is a pure read that is safe to call concurrently.
"""

import math
import warnings
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .optimize import SearchConfig, pattern_search
from .regions import Box

LOG_2PI = math.log(2.0 * math.pi)

# Jitter escalation for a failed Cholesky: start small, multiply by 10 up to
# the cap (both relative to the signal variance), then give up.
JITTER_INITIAL = 1e-10
JITTER_MAX = 1e-4
JITTER_GROWTH = 10.0


class NumericalError(RuntimeError):
    """Cholesky factorization failed even at maximum jitter."""

    def __init__(self, message: str, condition_estimate: float | None = None):
        super().__init__(message)
        self.condition_estimate = condition_estimate


class HyperparamOptimizationWarning(UserWarning):
    """Hyperparameter fitting fell back to the initial values."""


@dataclass(frozen=True)
class GpHyperparams:
    """Kernel and mean parameters of one scalar GP.

    Attributes
    ----------
    noise_variance : float
        Observation noise variance, > 0.
    signal_variance : float
        Kernel signal variance, > 0.
    length_scales : np.ndarray, shape (d,)
        Diagonal of the kernel's scaling matrix, one entry per input
        dimension; each entry is the squared characteristic length, > 0.
    poly_coeffs : np.ndarray, shape (d, degree + 1)
        Mean polynomial coefficients; row i holds the coefficients of the
        powers 0..degree of input dimension i.
    """

    noise_variance: float
    signal_variance: float
    length_scales: np.ndarray
    poly_coeffs: np.ndarray

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.length_scales, dtype=float))
        pc = np.atleast_2d(np.asarray(self.poly_coeffs, dtype=float))
        if not (np.isfinite(self.noise_variance) and self.noise_variance > 0):
            raise ValueError("noise_variance must be positive")
        if not (np.isfinite(self.signal_variance) and self.signal_variance > 0):
            raise ValueError("signal_variance must be positive")
        if ls.ndim != 1 or not np.all(np.isfinite(ls)) or np.any(ls <= 0):
            raise ValueError("length_scales must be a vector of positive reals")
        if pc.ndim != 2 or pc.shape[0] != ls.size or not np.all(np.isfinite(pc)):
            raise ValueError(
                "poly_coeffs must be an (input_dim, degree + 1) matrix of reals"
            )
        ls.setflags(write=False)
        pc.setflags(write=False)
        object.__setattr__(self, "noise_variance", float(self.noise_variance))
        object.__setattr__(self, "signal_variance", float(self.signal_variance))
        object.__setattr__(self, "length_scales", ls)
        object.__setattr__(self, "poly_coeffs", pc)

    @property
    def input_dim(self) -> int:
        return self.length_scales.size

    @property
    def degree(self) -> int:
        return self.poly_coeffs.shape[1] - 1

    @classmethod
    def default(cls, input_dim: int, degree: int = 5) -> "GpHyperparams":
        """Unit kernel with a zero polynomial mean."""
        return cls(
            noise_variance=1e-2,
            signal_variance=1.0,
            length_scales=np.ones(input_dim),
            poly_coeffs=np.zeros((input_dim, degree + 1)),
        )


@dataclass(frozen=True)
class Dataset:
    """Recorded regression samples: input rows and per-output target columns."""

    inputs: np.ndarray   # (n, d)
    targets: np.ndarray  # (n, p)

    def __post_init__(self):
        X = np.asarray(self.inputs, dtype=float)
        Y = np.asarray(self.targets, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if Y.ndim == 1:
            Y = Y.reshape(-1, 1)
        if X.ndim != 2 or Y.ndim != 2:
            raise ValueError("inputs and targets must be 2-D arrays")
        if X.shape[0] != Y.shape[0]:
            raise ValueError(
                f"inputs ({X.shape[0]} rows) and targets ({Y.shape[0]} rows) disagree"
            )
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ValueError("dataset entries must be finite")
        X.setflags(write=False)
        Y.setflags(write=False)
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "targets", Y)

    @classmethod
    def empty(cls, input_dim: int, output_dim: int = 1) -> "Dataset":
        return cls(np.empty((0, input_dim)), np.empty((0, output_dim)))

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def output_dim(self) -> int:
        return self.targets.shape[1]

    def append(self, x, y) -> "Dataset":
        """Return a new dataset with one extra (input, target) row."""
        x = np.asarray(x, dtype=float).reshape(1, -1)
        y = np.asarray(y, dtype=float).reshape(1, -1)
        return Dataset(np.vstack([self.inputs, x]), np.vstack([self.targets, y]))

    def single_output(self, i: int) -> "Dataset":
        """View of the dataset restricted to output dimension ``i``."""
        return Dataset(self.inputs, self.targets[:, i : i + 1])


@dataclass(frozen=True)
class Posterior:
    """Per-output-dimension predictive mean and (latent) variance."""

    mean: np.ndarray
    variance: np.ndarray


def kernel_eval(x, x2, hyp: GpHyperparams) -> float:
    """Squared-exponential covariance of two input vectors.

    Returns ``signal_variance * exp(-0.5 * sum_i (x_i - x2_i)^2 / L_i)``;
    symmetric in its arguments and bounded by the signal variance.
    """
    x = np.asarray(x, dtype=float).ravel()
    x2 = np.asarray(x2, dtype=float).ravel()
    if x.size != hyp.input_dim or x2.size != hyp.input_dim:
        raise ValueError(
            f"kernel inputs must have dimension {hyp.input_dim}, "
            f"got {x.size} and {x2.size}"
        )
    diff = x - x2
    q = float(np.sum(diff * diff / hyp.length_scales))
    return hyp.signal_variance * math.exp(-0.5 * q)


def kernel_matrix(X: np.ndarray, X2: np.ndarray, hyp: GpHyperparams) -> np.ndarray:
    """Cross-covariance matrix K(X, X2) for row-stacked inputs."""
    Xs = np.asarray(X, dtype=float) / np.sqrt(hyp.length_scales)
    X2s = np.asarray(X2, dtype=float) / np.sqrt(hyp.length_scales)
    sq = (
        np.sum(Xs * Xs, axis=1)[:, None]
        - 2.0 * (Xs @ X2s.T)
        + np.sum(X2s * X2s, axis=1)[None, :]
    )
    np.maximum(sq, 0.0, out=sq)
    return hyp.signal_variance * np.exp(-0.5 * sq)


def mean_eval(hyp: GpHyperparams, x) -> float:
    """Polynomial mean at one input: sum over dims of per-dim polynomials."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size != hyp.input_dim:
        raise ValueError(
            f"mean input must have dimension {hyp.input_dim}, got {x.size}"
        )
    return float(poly_mean_many(hyp, x.reshape(1, -1))[0])


def poly_mean_many(hyp: GpHyperparams, X: np.ndarray) -> np.ndarray:
    """Polynomial mean evaluated at every row of ``X``."""
    X = np.asarray(X, dtype=float)
    degree = hyp.degree
    powers = X[:, :, None] ** np.arange(degree + 1)  # (m, d, degree + 1)
    return np.einsum("mdj,dj->m", powers, hyp.poly_coeffs)


def _chol_with_jitter(K: np.ndarray, signal_variance: float) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of K, escalating diagonal jitter on failure."""
    try:
        return cholesky(K, lower=True), 0.0
    except np.linalg.LinAlgError:
        pass
    jitter = JITTER_INITIAL * signal_variance
    cap = JITTER_MAX * signal_variance
    while jitter <= cap:
        try:
            return cholesky(K + jitter * np.eye(K.shape[0]), lower=True), jitter
        except np.linalg.LinAlgError:
            jitter *= JITTER_GROWTH
    cond = None
    try:
        cond = float(np.linalg.cond(K))
    except np.linalg.LinAlgError:
        pass
    raise NumericalError(
        f"Cholesky factorization failed at maximum jitter {cap:g} "
        f"(condition estimate {cond})",
        condition_estimate=cond,
    )


@dataclass(frozen=True)
class GpModel:
    """Fitted multi-output GP: one scalar posterior per output dimension.

    Holds, per output dimension, the hyperparameters, the lower Cholesky
    factor of ``K(X, X) + noise_variance * I`` (plus any jitter applied), the
    solved weight vector alpha, and the explicit inverse used by batched
    prediction.  All members are frozen snapshots.
    """

    hyperparams: tuple[GpHyperparams, ...]
    dataset: Dataset
    chol_factors: tuple[np.ndarray, ...]
    alphas: tuple[np.ndarray, ...]
    gram_inverses: tuple[np.ndarray, ...]
    jitters: tuple[float, ...]

    @property
    def input_dim(self) -> int:
        return self.dataset.input_dim

    @property
    def output_dim(self) -> int:
        return self.dataset.output_dim

    def predict(self, x_star) -> Posterior:
        return predict(self, x_star)

    def predict_many(self, X_star: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return predict_many(self, X_star)


def fit(dataset: Dataset, hyperparams) -> GpModel:
    """Fit one exact GP per output dimension of ``dataset``.

    Parameters
    ----------
    dataset : Dataset
        Training samples.  An empty dataset is allowed; prediction then falls
        back to the prior.
    hyperparams : GpHyperparams or sequence of GpHyperparams
        A single value is shared across output dimensions; a sequence gives
        one per output dimension.

    Raises
    ------
    NumericalError
        If the Gram factorization fails even after jitter escalation.
    """
    if isinstance(hyperparams, GpHyperparams):
        hyps = tuple([hyperparams] * dataset.output_dim)
    else:
        hyps = tuple(hyperparams)
    if len(hyps) != dataset.output_dim:
        raise ValueError(
            f"need one hyperparameter set per output dimension "
            f"({dataset.output_dim}), got {len(hyps)}"
        )
    for h in hyps:
        if h.input_dim != dataset.input_dim:
            raise ValueError(
                f"hyperparameter input dimension {h.input_dim} does not match "
                f"dataset input dimension {dataset.input_dim}"
            )

    chols, alphas, kinvs, jitters = [], [], [], []
    for i, hyp in enumerate(hyps):
        if dataset.n == 0:
            chols.append(np.empty((0, 0)))
            alphas.append(np.empty(0))
            kinvs.append(np.empty((0, 0)))
            jitters.append(0.0)
            continue
        K = kernel_matrix(dataset.inputs, dataset.inputs, hyp)
        K[np.diag_indices_from(K)] += hyp.noise_variance
        L, jitter = _chol_with_jitter(K, hyp.signal_variance)
        resid = dataset.targets[:, i] - poly_mean_many(hyp, dataset.inputs)
        alpha = cho_solve((L, True), resid)
        kinv = cho_solve((L, True), np.eye(dataset.n))
        chols.append(L)
        alphas.append(alpha)
        kinvs.append(kinv)
        jitters.append(jitter)

    return GpModel(
        hyperparams=hyps,
        dataset=dataset,
        chol_factors=tuple(chols),
        alphas=tuple(alphas),
        gram_inverses=tuple(kinvs),
        jitters=tuple(jitters),
    )


def predict_many(model: GpModel, X_star: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior means and latent variances at row-stacked query inputs.

    Returns arrays of shape ``(m, output_dim)``.  The variance excludes the
    observation noise and is clamped at zero from below; with no training
    data it equals the signal variance exactly.
    """
    X_star = np.asarray(X_star, dtype=float)
    if X_star.ndim == 1:
        X_star = X_star.reshape(1, -1)
    if X_star.shape[1] != model.input_dim:
        raise ValueError(
            f"query dimension {X_star.shape[1]} does not match model "
            f"input dimension {model.input_dim}"
        )
    m = X_star.shape[0]
    means = np.empty((m, model.output_dim))
    variances = np.empty((m, model.output_dim))
    for i, hyp in enumerate(model.hyperparams):
        prior_mean = poly_mean_many(hyp, X_star)
        if model.dataset.n == 0:
            means[:, i] = prior_mean
            variances[:, i] = hyp.signal_variance
            continue
        Ks = kernel_matrix(X_star, model.dataset.inputs, hyp)
        means[:, i] = prior_mean + Ks @ model.alphas[i]
        quad = np.sum(Ks * (Ks @ model.gram_inverses[i]), axis=1)
        variances[:, i] = np.maximum(hyp.signal_variance - quad, 0.0)
    return means, variances


def predict(model: GpModel, x_star) -> Posterior:
    """Posterior at a single query input, one (mean, variance) per output dim."""
    means, variances = predict_many(model, np.asarray(x_star, dtype=float))
    return Posterior(mean=means[0], variance=variances[0])


def log_marginal_likelihood(dataset: Dataset, hyperparams) -> float:
    """Log marginal likelihood of the data, summed over output dimensions.

    For each output dimension with residual ``r = y - mean(X)`` and Gram
    matrix ``K + noise_variance * I`` the contribution is
    ``-0.5 r' (K + s I)^-1 r - 0.5 log det(K + s I) - n/2 log(2 pi)``.
    """
    if dataset.n == 0:
        raise ValueError("log marginal likelihood requires a nonempty dataset")
    if isinstance(hyperparams, GpHyperparams):
        hyps = [hyperparams] * dataset.output_dim
    else:
        hyps = list(hyperparams)
    if len(hyps) != dataset.output_dim:
        raise ValueError("need one hyperparameter set per output dimension")

    total = 0.0
    for i, hyp in enumerate(hyps):
        K = kernel_matrix(dataset.inputs, dataset.inputs, hyp)
        K[np.diag_indices_from(K)] += hyp.noise_variance
        L, _ = _chol_with_jitter(K, hyp.signal_variance)
        resid = dataset.targets[:, i] - poly_mean_many(hyp, dataset.inputs)
        alpha = cho_solve((L, True), resid)
        half_logdet = float(np.sum(np.log(np.diag(L))))
        total += (
            -0.5 * float(resid @ alpha) - half_logdet - 0.5 * dataset.n * LOG_2PI
        )
    return total


@dataclass(frozen=True)
class HyperparamBounds:
    """Elementwise box for hyperparameter optimization."""

    lower: GpHyperparams
    upper: GpHyperparams

    def __post_init__(self):
        lo, hi = self.lower, self.upper
        if lo.input_dim != hi.input_dim or lo.degree != hi.degree:
            raise ValueError("bound shapes disagree")
        ok = (
            lo.noise_variance <= hi.noise_variance
            and lo.signal_variance <= hi.signal_variance
            and np.all(lo.length_scales <= hi.length_scales)
            and np.all(lo.poly_coeffs <= hi.poly_coeffs)
        )
        if not ok:
            raise ValueError("lower bound exceeds upper bound")

    def contains(self, hyp: GpHyperparams) -> bool:
        lo, hi = self.lower, self.upper
        return bool(
            lo.noise_variance <= hyp.noise_variance <= hi.noise_variance
            and lo.signal_variance <= hyp.signal_variance <= hi.signal_variance
            and np.all(lo.length_scales <= hyp.length_scales)
            and np.all(hyp.length_scales <= hi.length_scales)
            and np.all(lo.poly_coeffs <= hyp.poly_coeffs)
            and np.all(hyp.poly_coeffs <= hi.poly_coeffs)
        )


def default_hyperparam_bounds(
    init: GpHyperparams,
    scale: float = 1e4,
    coeff_halfwidth: np.ndarray | float | None = None,
) -> HyperparamBounds:
    """Default MLE box: positive parameters within ``[1/scale, scale]`` times
    their initial values; polynomial coefficients within an additive window
    of ``max(0.25 |c|, 0.05)`` (or the given half-width) around theirs."""
    if coeff_halfwidth is None:
        hw = np.maximum(0.25 * np.abs(init.poly_coeffs), 0.05)
    else:
        hw = np.broadcast_to(
            np.asarray(coeff_halfwidth, dtype=float), init.poly_coeffs.shape
        )
    lo = GpHyperparams(
        noise_variance=init.noise_variance / scale,
        signal_variance=init.signal_variance / scale,
        length_scales=init.length_scales / scale,
        poly_coeffs=init.poly_coeffs - hw,
    )
    hi = GpHyperparams(
        noise_variance=init.noise_variance * scale,
        signal_variance=init.signal_variance * scale,
        length_scales=init.length_scales * scale,
        poly_coeffs=init.poly_coeffs + hw,
    )
    return HyperparamBounds(lo, hi)


def _hyp_to_vector(hyp: GpHyperparams) -> np.ndarray:
    """Search-space vector: log of the positive parameters, raw coefficients."""
    return np.concatenate(
        [
            [math.log(hyp.noise_variance), math.log(hyp.signal_variance)],
            np.log(hyp.length_scales),
            hyp.poly_coeffs.ravel(),
        ]
    )


def _hyp_from_vector(v: np.ndarray, template: GpHyperparams) -> GpHyperparams:
    d = template.input_dim
    return GpHyperparams(
        noise_variance=math.exp(v[0]),
        signal_variance=math.exp(v[1]),
        length_scales=np.exp(v[2 : 2 + d]),
        poly_coeffs=v[2 + d :].reshape(template.poly_coeffs.shape),
    )


MLE_SEARCH = SearchConfig(max_evals=600, n_starts=3)


def optimize_hyperparams(
    dataset: Dataset,
    init: GpHyperparams,
    bounds: HyperparamBounds | None = None,
    search: SearchConfig = MLE_SEARCH,
) -> GpHyperparams:
    """Maximize the marginal likelihood over a hyperparameter box.

    The search runs in log space for the positive parameters (noise variance,
    signal variance, length scales) and in linear space for the polynomial
    coefficients, via ``optimize.pattern_search``.  The returned value never
    has a lower marginal likelihood than ``init``.

    If every evaluation fails numerically, ``init`` is returned and a
    ``HyperparamOptimizationWarning`` is issued.
    """
    if dataset.n == 0:
        raise ValueError("hyperparameter optimization requires a nonempty dataset")
    if bounds is None:
        bounds = default_hyperparam_bounds(init)
    if not bounds.contains(init):
        raise ValueError("initial hyperparameters lie outside the bounds")

    box = Box(_hyp_to_vector(bounds.lower), _hyp_to_vector(bounds.upper))
    start = _hyp_to_vector(init)

    def objective(v: np.ndarray) -> float:
        try:
            return log_marginal_likelihood(dataset, _hyp_from_vector(v, init))
        except NumericalError:
            return -np.inf

    result = pattern_search(objective, box, search, start=start)
    if not np.isfinite(result.value):
        warnings.warn(
            "all marginal-likelihood evaluations failed; keeping the "
            "initial hyperparameters",
            HyperparamOptimizationWarning,
        )
        return init
    return _hyp_from_vector(result.x, init)
