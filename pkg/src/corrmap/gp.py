"""Exact Gaussian-process regression with the squared-exponential kernel.

Supports homoscedastic and per-point (heteroscedastic) observation noise,
Cholesky-based fitting with a jitter ladder for ill-conditioned systems,
analytic gradients of the log marginal likelihood, and multi-restart
type-II maximum-likelihood hyperparameter optimisation in log space.

Input points are plain ``(n, d)`` float arrays (1-D arrays are treated as a
single input dimension).  Predictions report the latent function's mean and
variance; callers add observation noise themselves where they need the
predictive distribution of new observations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

__all__ = [
    "KernelParams",
    "Homoscedastic",
    "Heteroscedastic",
    "NoiseModel",
    "TrainingSet",
    "GpPosterior",
    "NumericalError",
    "kernel_eval",
    "kernel_matrix",
    "gp_fit",
    "gp_predict",
    "log_marginal_likelihood",
    "lml_gradient",
    "optimize_hyperparams",
    "optimize_with_noise",
    "save_posterior",
    "load_posterior",
]

# Diagonal boosts tried, in order, when the Cholesky factorisation fails.
JITTER_LADDER = (1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)


class NumericalError(RuntimeError):
    """Linear algebra failed even after exhausting the jitter ladder.

    Attributes
    ----------
    jitters : tuple of float
        Diagonal boosts that were attempted before giving up.
    """

    def __init__(self, message: str, jitters: tuple = ()):
        super().__init__(message)
        self.jitters = tuple(jitters)


def _as_points(x) -> np.ndarray:
    """Coerce input locations to a float (n, d) array."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise ValueError(f"input points must be at most 2-D, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class KernelParams:
    """Hyperparameters of the squared-exponential kernel.

    Parameters
    ----------
    signal_variance : float
        Prior variance of the latent function (output units squared).
    lengthscale : array_like
        One positive lengthscale per input dimension; a scalar is promoted
        to a 1-D problem.
    """

    signal_variance: float
    lengthscale: np.ndarray

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscale, dtype=float))
        object.__setattr__(self, "signal_variance", float(self.signal_variance))
        object.__setattr__(self, "lengthscale", ls)
        if not self.signal_variance > 0:
            raise ValueError("signal_variance must be strictly positive")
        if ls.ndim != 1 or not np.all(ls > 0):
            raise ValueError("lengthscale entries must be strictly positive")

    @property
    def input_dim(self) -> int:
        return self.lengthscale.size


@dataclass(frozen=True)
class Homoscedastic:
    """A single observation-noise variance shared by all training points."""

    variance: float

    def __post_init__(self):
        object.__setattr__(self, "variance", float(self.variance))
        if self.variance < 0:
            raise ValueError("noise variance must be nonnegative")


@dataclass(frozen=True)
class Heteroscedastic:
    """One observation-noise variance per training point."""

    variances: np.ndarray

    def __post_init__(self):
        v = np.atleast_1d(np.asarray(self.variances, dtype=float))
        object.__setattr__(self, "variances", v)
        if np.any(v < 0):
            raise ValueError("noise variances must be nonnegative")


NoiseModel = Union[Homoscedastic, Heteroscedastic]


def noise_diagonal(noise: NoiseModel, n: int) -> np.ndarray:
    """Return the length-``n`` diagonal of the observation-noise covariance."""
    if isinstance(noise, Homoscedastic):
        return np.full(n, noise.variance)
    if noise.variances.size != n:
        raise ValueError(
            f"heteroscedastic noise has {noise.variances.size} entries "
            f"for {n} training points"
        )
    return noise.variances.copy()


@dataclass(frozen=True)
class TrainingSet:
    """Regression data: input points, scalar targets, optional replicates.

    ``replicates`` holds the raw per-point observations (one row per input,
    ``k`` columns) from which per-point noise estimates can be formed; the
    ``targets`` are typically the row means.
    """

    inputs: np.ndarray
    targets: np.ndarray
    replicates: np.ndarray | None = None

    def __post_init__(self):
        x = _as_points(self.inputs)
        y = np.asarray(self.targets, dtype=float).ravel()
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", y)
        if x.shape[0] != y.size:
            raise ValueError(f"{x.shape[0]} inputs but {y.size} targets")
        if self.replicates is not None:
            r = np.asarray(self.replicates, dtype=float)
            if r.ndim != 2 or r.shape[0] != y.size:
                raise ValueError("replicate matrix must have one row per input")
            object.__setattr__(self, "replicates", r)

    @property
    def n_points(self) -> int:
        return self.targets.size

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]


def kernel_eval(x1, x2, params: KernelParams) -> float:
    """Squared-exponential covariance between two points.

    ``k(x1, x2) = signal_variance * exp(-0.5 * sum_d ((x1_d - x2_d) / ls_d)^2)``
    """
    a = np.asarray(x1, dtype=float).ravel()
    b = np.asarray(x2, dtype=float).ravel()
    if a.size != b.size or a.size != params.input_dim:
        raise ValueError(
            f"dimension mismatch: points of size {a.size} and {b.size}, "
            f"kernel of dimension {params.input_dim}"
        )
    z = (a - b) / params.lengthscale
    return params.signal_variance * float(np.exp(-0.5 * np.dot(z, z)))


def kernel_matrix(x1, x2, params: KernelParams) -> np.ndarray:
    """Covariance matrix between two point sets, shape (n1, n2)."""
    a = _as_points(x1)
    b = _as_points(x2)
    if a.shape[1] != params.input_dim or b.shape[1] != params.input_dim:
        raise ValueError("input dimension does not match kernel lengthscale")
    diff = a[:, None, :] - b[None, :, :]
    sq = np.sum((diff / params.lengthscale) ** 2, axis=-1)
    return params.signal_variance * np.exp(-0.5 * sq)


def _chol_with_jitter(k_noisy: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor, boosting the diagonal only on failure."""
    try:
        return cholesky(k_noisy, lower=True), 0.0
    except np.linalg.LinAlgError:
        pass
    eye = np.eye(k_noisy.shape[0])
    for jitter in JITTER_LADDER:
        try:
            return cholesky(k_noisy + jitter * eye, lower=True), jitter
        except np.linalg.LinAlgError:
            continue
    raise NumericalError(
        "covariance matrix is not positive definite at any jitter level",
        jitters=JITTER_LADDER,
    )


@dataclass(frozen=True)
class GpPosterior:
    """Posterior of an exact GP regression.

    Immutable once fitted, so instances can be shared freely across
    threads.  ``chol`` is the lower Cholesky factor of the training
    covariance (kernel + noise + jitter) and ``weights`` the precomputed
    vector solving ``(K + Sigma) w = y - prior_mean``.
    """

    inputs: np.ndarray
    targets: np.ndarray
    params: KernelParams
    noise: NoiseModel
    chol: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    prior_mean: float = 0.0
    jitter: float = 0.0

    def predict(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Latent mean and variance at query points.

        Returns a pair of 1-D arrays (scalars in, scalars out is handled by
        :func:`gp_predict`).  Variances are clipped at zero.
        """
        xq = _as_points(x)
        ks = kernel_matrix(self.inputs, xq, self.params)
        mean = self.prior_mean + ks.T @ self.weights
        v = solve_triangular(self.chol, ks, lower=True)
        var = self.params.signal_variance - np.sum(v * v, axis=0)
        return mean, np.maximum(var, 0.0)


def gp_fit(
    ts: TrainingSet,
    params: KernelParams,
    noise: NoiseModel,
    prior_mean: float = 0.0,
) -> GpPosterior:
    """Fit an exact GP posterior to a training set.

    Jitter from :data:`JITTER_LADDER` is added to the diagonal only when
    the plain Cholesky factorisation fails; well-conditioned problems are
    solved unperturbed.
    """
    if ts.n_points < 1:
        raise ValueError("need at least one training point")
    if ts.input_dim != params.input_dim:
        raise ValueError("training inputs do not match kernel dimension")
    k = kernel_matrix(ts.inputs, ts.inputs, params)
    k[np.diag_indices_from(k)] += noise_diagonal(noise, ts.n_points)
    chol, jitter = _chol_with_jitter(k)
    resid = ts.targets - prior_mean
    weights = cho_solve((chol, True), resid)
    return GpPosterior(
        inputs=ts.inputs,
        targets=ts.targets,
        params=params,
        noise=noise,
        chol=chol,
        weights=weights,
        prior_mean=prior_mean,
        jitter=jitter,
    )


def gp_predict(posterior: GpPosterior, x) -> tuple[float, float]:
    """Latent predictive mean and variance at a single point."""
    mean, var = posterior.predict(x)
    return float(mean[0]), float(var[0])


def _lml_terms(ts: TrainingSet, params: KernelParams, noise: NoiseModel,
               prior_mean: float):
    k = kernel_matrix(ts.inputs, ts.inputs, params)
    k_kernel = k.copy()
    k[np.diag_indices_from(k)] += noise_diagonal(noise, ts.n_points)
    chol, _ = _chol_with_jitter(k)
    resid = ts.targets - prior_mean
    alpha = cho_solve((chol, True), resid)
    lml = (
        -0.5 * float(resid @ alpha)
        - float(np.sum(np.log(np.diag(chol))))
        - 0.5 * ts.n_points * np.log(2.0 * np.pi)
    )
    return lml, chol, alpha, k_kernel


def log_marginal_likelihood(
    ts: TrainingSet,
    params: KernelParams,
    noise: NoiseModel,
    prior_mean: float = 0.0,
) -> float:
    """Type-II (marginal) log likelihood of the data, via Cholesky."""
    return _lml_terms(ts, params, noise, prior_mean)[0]


def lml_gradient(
    ts: TrainingSet,
    params: KernelParams,
    noise: NoiseModel,
    prior_mean: float = 0.0,
    include_noise: bool = False,
) -> np.ndarray:
    """Gradient of the log marginal likelihood in log-hyperparameter space.

    Components are ordered ``[d/dlog signal_variance, d/dlog ls_1, ...,
    d/dlog ls_d]`` with an optional trailing ``d/dlog noise_variance``
    (homoscedastic noise only).
    """
    _, chol, alpha, k_kernel = _lml_terms(ts, params, noise, prior_mean)
    k_inv = cho_solve((chol, True), np.eye(ts.n_points))
    m = np.outer(alpha, alpha) - k_inv

    grads = [0.5 * float(np.sum(m * k_kernel))]
    for d in range(params.input_dim):
        diff = ts.inputs[:, d, None] - ts.inputs[None, :, d]
        dk = k_kernel * (diff / params.lengthscale[d]) ** 2
        grads.append(0.5 * float(np.sum(m * dk)))
    if include_noise:
        if not isinstance(noise, Homoscedastic):
            raise ValueError("noise gradient requires a homoscedastic model")
        grads.append(0.5 * noise.variance * float(np.trace(m)))
    return np.array(grads)


def _data_scales(ts: TrainingSet, prior_mean: float):
    spans = ts.inputs.max(axis=0) - ts.inputs.min(axis=0)
    spans = np.where(spans > 0, spans, 1.0)
    vy = float(np.var(ts.targets - prior_mean))
    return spans, max(vy, 1e-12)


def _optimize_packed(ts, noise, init, prior_mean, restarts, seed, ard,
                     fit_noise):
    n_dim = ts.input_dim
    n_ls = n_dim if ard else 1
    spans, vy = _data_scales(ts, prior_mean)
    span_scale = spans if ard else np.array([float(np.max(spans))])

    bounds = [(np.log(1e-10 * vy), np.log(1e6 * vy))]
    bounds += [(np.log(1e-3 * s), np.log(1e3 * s)) for s in span_scale]
    if fit_noise:
        bounds += [(np.log(1e-12 + 1e-8 * vy), np.log(10.0 * vy + 1e-6))]

    def unpack(theta):
        sv = np.exp(theta[0])
        ls = np.exp(theta[1 : 1 + n_ls])
        if not ard:
            ls = np.repeat(ls, n_dim)
        p = KernelParams(sv, ls)
        nz = Homoscedastic(np.exp(theta[1 + n_ls])) if fit_noise else noise
        return p, nz

    def objective(theta):
        p, nz = unpack(theta)
        try:
            lml = log_marginal_likelihood(ts, p, nz, prior_mean)
            grad = lml_gradient(ts, p, nz, prior_mean, include_noise=fit_noise)
        except (NumericalError, FloatingPointError):
            return 1e25, np.zeros_like(theta)
        if not ard and n_dim > 1:
            # shared lengthscale: fold the per-dimension components together
            grad = np.concatenate(
                [grad[:1], [grad[1 : 1 + n_dim].sum()], grad[1 + n_dim :]]
            )
        return -lml, -grad

    init_ls = init.lengthscale
    if init_ls.size != n_dim:
        init_ls = np.repeat(float(init_ls[0]), n_dim)
    theta0 = [np.log(init.signal_variance)]
    theta0 += list(np.log(init_ls if ard else [float(np.max(init_ls))]))
    if fit_noise:
        base = noise.variance if isinstance(noise, Homoscedastic) else vy
        theta0.append(np.log(max(base, 1e-10)))
    theta0 = np.clip(theta0, [b[0] for b in bounds], [b[1] for b in bounds])

    rng = np.random.default_rng(seed)
    starts = [np.asarray(theta0)]
    for _ in range(restarts):
        t = np.array([rng.uniform(lo, hi) for lo, hi in bounds])
        starts.append(t)

    candidates = []
    f0, _ = objective(starts[0])
    if f0 < 1e24:
        candidates.append((f0, starts[0]))  # the raw init is always in play
    for start in starts:
        res = minimize(objective, start, jac=True, method="L-BFGS-B",
                       bounds=bounds)
        if np.isfinite(res.fun) and res.fun < 1e24:
            candidates.append((float(res.fun), res.x))
    if not candidates:
        raise NumericalError("all hyperparameter restarts failed numerically")
    best = min(candidates, key=lambda c: c[0])
    return unpack(best[1])


def optimize_hyperparams(
    ts: TrainingSet,
    noise: NoiseModel,
    init: KernelParams,
    restarts: int = 5,
    seed: int = 0,
    ard: bool = False,
) -> KernelParams:
    """Maximise the marginal likelihood over kernel hyperparameters.

    Quasi-Newton (L-BFGS-B) search in log space from the supplied
    initialisation plus ``restarts`` random restarts; the returned
    parameters achieve a marginal likelihood at least as high as every
    initialisation tried.  With ``ard=False`` (the default) all input
    dimensions share one lengthscale.
    """
    if ts.n_points < 2:
        raise ValueError("hyperparameter optimisation needs at least 2 points")
    params, _ = _optimize_packed(ts, noise, init, 0.0, restarts, seed, ard,
                                 fit_noise=False)
    return params


def optimize_with_noise(
    ts: TrainingSet,
    init: KernelParams,
    init_noise: float = 1e-2,
    restarts: int = 5,
    seed: int = 0,
    ard: bool = False,
    prior_mean: float = 0.0,
) -> tuple[KernelParams, Homoscedastic]:
    """Jointly maximise the marginal likelihood over kernel and noise.

    Used when no replicate-based noise estimate is available and the
    homoscedastic observation variance itself must be set by type-II
    maximum likelihood.
    """
    if ts.n_points < 2:
        raise ValueError("hyperparameter optimisation needs at least 2 points")
    return _optimize_packed(ts, Homoscedastic(init_noise), init, prior_mean,
                            restarts, seed, ard, fit_noise=True)


def _noise_to_dict(noise: NoiseModel) -> dict:
    if isinstance(noise, Homoscedastic):
        return {"kind": "homoscedastic", "variance": noise.variance}
    return {"kind": "heteroscedastic", "variances": noise.variances.tolist()}


def _noise_from_dict(d: dict) -> NoiseModel:
    if d["kind"] == "homoscedastic":
        return Homoscedastic(d["variance"])
    return Heteroscedastic(np.asarray(d["variances"]))


def save_posterior(posterior: GpPosterior, path) -> None:
    """Serialise a fitted posterior (data, hyperparameters, noise) to JSON."""
    doc = {
        "inputs": posterior.inputs.tolist(),
        "targets": posterior.targets.tolist(),
        "signal_variance": posterior.params.signal_variance,
        "lengthscale": posterior.params.lengthscale.tolist(),
        "noise": _noise_to_dict(posterior.noise),
        "prior_mean": posterior.prior_mean,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)


def load_posterior(path) -> GpPosterior:
    """Rebuild a posterior saved by :func:`save_posterior` (refits exactly)."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    ts = TrainingSet(np.asarray(doc["inputs"]), np.asarray(doc["targets"]))
    params = KernelParams(doc["signal_variance"], np.asarray(doc["lengthscale"]))
    return gp_fit(ts, params, _noise_from_dict(doc["noise"]),
                  prior_mean=doc["prior_mean"])
