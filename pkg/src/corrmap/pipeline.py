"""The correction-map pipeline.

Given a detailed model ``M`` and a cheap reduced model ``m`` sharing some
parameters, the pipeline samples the shared space, marginalises ``M``'s
extra (free) parameters under their prior, and regresses the observed
corrections

    y(theta_m) = M_stat(theta_m; theta_f) - m_stat(theta_m)

with a GP, yielding a random function whose mean corrects the reduced
model and whose spread quantifies the residual error.  On top of the
fitted map sit an averaged confidence-width error estimate, smallest-
correction model selection, and a sampled check of map equivalence.

Models enter as factories ``params_dict -> OdeSystem | ReactionNetwork``
so the same builder serves every sampled parameter point.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence, Union

import numpy as np
from scipy.special import ndtri

from corrmap.gp import (
    GpPosterior,
    Heteroscedastic,
    Homoscedastic,
    KernelParams,
    TrainingSet,
    gp_fit,
    optimize_hyperparams,
    optimize_with_noise,
)
from corrmap.ode import OdeOptions
from corrmap.stats import StatEstimate, StatisticSpec, eval_statistic
from corrmap.variance import (
    EmpiricalPooled,
    Nested,
    PointWise,
    VarianceScheme,
    nested_variance,
    pointwise_variance,
    pooled_variance,
)

__all__ = [
    "UniformBox",
    "Delta",
    "Prior",
    "SamplingDesign",
    "SimulationError",
    "CorrectionMap",
    "MapPrediction",
    "CorrectedPrediction",
    "EpsilonEstimate",
    "SelectionResult",
    "ModelFactory",
    "build_training_set",
    "reduced_statistics",
    "fit_correction",
    "corrected_predict",
    "estimate_epsilon",
    "select_model",
    "check_equivalence",
]

ModelFactory = Callable[[dict], object]


class SimulationError(RuntimeError):
    """A design-point evaluation failed; carries its (i, j) provenance."""

    def __init__(self, message: str, point_index: int, replicate_index: int | None):
        super().__init__(message)
        self.point_index = point_index
        self.replicate_index = replicate_index


@dataclass(frozen=True)
class UniformBox:
    """Uniform prior on an axis-aligned box."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise ValueError("box must have lower < upper per dimension")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(n, self.dim))

    def grid(self, n: int) -> np.ndarray:
        """Right-closed 1-D grid: excludes the lower edge, includes the upper."""
        if self.dim != 1:
            raise ValueError("grid sampling is defined for 1-D boxes only")
        lo, hi = float(self.lower[0]), float(self.upper[0])
        pts = lo + (hi - lo) * np.arange(1, n + 1) / n
        return pts.reshape(-1, 1)

    def contains(self, point) -> bool:
        p = np.atleast_1d(np.asarray(point, dtype=float))
        return bool(np.all(p >= self.lower) and np.all(p <= self.upper))


@dataclass(frozen=True)
class Delta:
    """Point-mass prior at a fixed value."""

    value: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "value",
                           np.atleast_1d(np.asarray(self.value, dtype=float)))

    @property
    def dim(self) -> int:
        return self.value.size

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.tile(self.value, (n, 1))

    def contains(self, point) -> bool:
        p = np.atleast_1d(np.asarray(point, dtype=float))
        return bool(np.allclose(p, self.value))


Prior = Union[UniformBox, Delta]


@dataclass(frozen=True)
class SamplingDesign:
    """How the shared and free parameter spaces are sampled.

    ``k`` replicates of the detailed model are drawn per shared point by
    sampling the free prior; a ``Delta`` free prior collapses to a single
    evaluation at its value (``k`` is forced to 1: more replicates would
    be copies).  ``mode="auto"`` uses a grid for 1-D shared spaces and
    uniform sampling otherwise.
    """

    theta_m_names: tuple[str, ...]
    theta_m_prior: Prior
    n_theta_m: int
    theta_f_names: tuple[str, ...] = ()
    theta_f_prior: Prior | None = None
    k: int = 1
    mode: str = "auto"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "theta_m_names", tuple(self.theta_m_names))
        object.__setattr__(self, "theta_f_names", tuple(self.theta_f_names))
        if self.n_theta_m < 2:
            raise ValueError("need at least 2 shared-parameter points")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if len(self.theta_m_names) != self.theta_m_prior.dim:
            raise ValueError("one shared-parameter name per prior dimension")
        if self.theta_f_names and self.theta_f_prior is None:
            raise ValueError("free-parameter names given without a prior")
        if self.theta_f_prior is not None and \
                len(self.theta_f_names) != self.theta_f_prior.dim:
            raise ValueError("one free-parameter name per prior dimension")
        if self.mode not in ("auto", "grid", "random"):
            raise ValueError("mode must be auto, grid or random")

    @property
    def effective_k(self) -> int:
        if self.theta_f_prior is None or isinstance(self.theta_f_prior, Delta):
            return 1
        return self.k

    def theta_m_points(self) -> np.ndarray:
        mode = self.mode
        if mode == "auto":
            mode = "grid" if self.theta_m_prior.dim == 1 and \
                isinstance(self.theta_m_prior, UniformBox) else "random"
        if mode == "grid":
            if not isinstance(self.theta_m_prior, UniformBox):
                raise ValueError("grid mode requires a box prior")
            return self.theta_m_prior.grid(self.n_theta_m)
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=self.seed, spawn_key=(3,)))
        return self.theta_m_prior.sample(rng, self.n_theta_m)

    def theta_f_samples(self, point_index: int) -> np.ndarray:
        """Free-parameter draws for one shared point, shape (k_eff, d_f)."""
        if self.theta_f_prior is None:
            return np.zeros((1, 0))
        if isinstance(self.theta_f_prior, Delta):
            return self.theta_f_prior.sample(None, 1)
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=self.seed,
                                   spawn_key=(2, point_index)))
        return self.theta_f_prior.sample(rng, self.k)

    def eval_seed(self, which: int, i: int, j: int = 0) -> int:
        """Independent integer seed for one statistic evaluation."""
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(which, i, j))
        return int(ss.generate_state(1, dtype=np.uint64)[0])


def _params_dict(names: Sequence[str], values: np.ndarray) -> dict:
    return {name: float(v) for name, v in zip(names, values)}


def reduced_statistics(
    reduced: ModelFactory,
    spec: StatisticSpec,
    design: SamplingDesign,
    n_runs: int = 100,
    n_jobs: int = 1,
    ode_options: OdeOptions | None = None,
) -> list[StatEstimate]:
    """Reduced-model statistic at every design point (shared seeds with
    :func:`build_training_set`, so values agree bit for bit)."""
    points = design.theta_m_points()
    out = []
    for i, pt in enumerate(points):
        try:
            model = reduced(_params_dict(design.theta_m_names, pt))
            out.append(eval_statistic(model, spec, n_runs=n_runs,
                                      seed=design.eval_seed(0, i),
                                      n_jobs=n_jobs, ode_options=ode_options))
        except Exception as exc:
            raise SimulationError(
                f"reduced model failed at design point {i} ({pt}): {exc}",
                point_index=i, replicate_index=None) from exc
    return out


def build_training_set(
    full: ModelFactory,
    reduced: ModelFactory,
    spec: StatisticSpec,
    design: SamplingDesign,
    n_runs: int = 100,
    n_jobs: int = 1,
    ode_options: OdeOptions | None = None,
) -> TrainingSet:
    """Simulate both models over the design and assemble correction data.

    For each shared point the reduced statistic is evaluated once and the
    detailed statistic once per free-parameter draw; the replicate matrix
    holds the differences and the targets are the row means.  Failures
    carry their (point, replicate) provenance.
    """
    points = design.theta_m_points()
    m_stats = reduced_statistics(reduced, spec, design, n_runs=n_runs,
                                 n_jobs=n_jobs, ode_options=ode_options)
    k_eff = design.effective_k
    replicates = np.empty((len(points), k_eff))
    for i, pt in enumerate(points):
        theta_m = _params_dict(design.theta_m_names, pt)
        draws = design.theta_f_samples(i)
        for j in range(k_eff):
            params = dict(theta_m)
            params.update(_params_dict(design.theta_f_names, draws[j]))
            try:
                model = full(params)
                est = eval_statistic(model, spec, n_runs=n_runs,
                                     seed=design.eval_seed(1, i, j),
                                     n_jobs=n_jobs, ode_options=ode_options)
            except Exception as exc:
                raise SimulationError(
                    f"detailed model failed at point {i}, replicate {j}: {exc}",
                    point_index=i, replicate_index=j) from exc
            replicates[i, j] = est.value - m_stats[i].value
    return TrainingSet(inputs=points, targets=replicates.mean(axis=1),
                       replicates=replicates if k_eff > 1 else None)


@dataclass(frozen=True)
class MapPrediction:
    """Correction-map posterior summary at query points (output scale)."""

    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    latent_mean: np.ndarray
    latent_sd: np.ndarray


@dataclass(frozen=True)
class CorrectionMap:
    """A fitted correction map plus its training provenance.

    When ``log_transform`` is set the GP lives in log space:
    ``correction = exp(latent) + log_shift`` and prediction intervals are
    the log-normal central bands.
    """

    gp: GpPosterior
    scheme: VarianceScheme
    log_transform: bool
    log_shift: float = 0.0
    design: SamplingDesign | None = None
    statistic: StatisticSpec | None = None

    def predict(self, points, alpha: float = 0.95) -> MapPrediction:
        """Posterior mean and central ``alpha``-mass band of the correction."""
        if not 0 < alpha < 1:
            raise ValueError("alpha must be in (0, 1)")
        z = float(ndtri(0.5 + alpha / 2.0))
        mu, var = self.gp.predict(points)
        sd = np.sqrt(var)
        if self.log_transform:
            mean = np.exp(mu + 0.5 * var) + self.log_shift
            lower = np.exp(mu - z * sd) + self.log_shift
            upper = np.exp(mu + z * sd) + self.log_shift
        else:
            mean = mu
            lower = mu - z * sd
            upper = mu + z * sd
        return MapPrediction(mean=mean, lower=lower, upper=upper,
                             latent_mean=mu, latent_sd=sd)

    def mean_at(self, points) -> np.ndarray:
        return self.predict(points).mean


def _transform_targets(ts: TrainingSet, log_transform: bool):
    """Optionally move targets (and replicates) to log space.

    Targets that are not all positive get the shifted log
    ``z = log(y - min(y) + delta)``, ``delta = 1e-6 * range``, whose exact
    inverse is ``y = exp(z) + shift``.
    """
    if not log_transform:
        return ts, 0.0
    values = ts.targets if ts.replicates is None else ts.replicates
    low = float(np.min(values))
    shift = 0.0
    if low <= 0:
        rng_ = float(np.max(values) - low)
        if rng_ <= 0:
            rng_ = max(abs(low), 1.0)
        shift = low - 1e-6 * rng_
    reps = None
    if ts.replicates is not None:
        reps = np.log(ts.replicates - shift)
        targets = reps.mean(axis=1)
    else:
        targets = np.log(ts.targets - shift)
    return TrainingSet(ts.inputs, targets, reps), shift


def _noise_from_scheme(ts: TrainingSet, scheme: VarianceScheme, seed: int):
    """Build the GP noise model (possibly fitting the nested inner GP)."""
    if isinstance(scheme, EmpiricalPooled):
        if scheme.variance is not None:
            return Homoscedastic(scheme.variance)
        if ts.replicates is None:
            return None  # no replicates: noise set by type-II likelihood
        return Homoscedastic(pooled_variance(ts.replicates))
    if isinstance(scheme, PointWise):
        if ts.replicates is None:
            raise ValueError("point-wise scheme needs a replicate matrix")
        return Heteroscedastic(pointwise_variance(ts.replicates).at_train)
    if isinstance(scheme, Nested):
        if ts.replicates is None:
            raise ValueError("nested scheme needs a replicate matrix")
        field = nested_variance(ts.inputs, ts.replicates,
                                inner_noise=scheme.inner_noise, seed=seed)
        return Heteroscedastic(field.at_train)
    raise TypeError(f"unknown variance scheme {type(scheme).__name__}")


def fit_correction(
    ts: TrainingSet,
    scheme: VarianceScheme = EmpiricalPooled(),
    log_transform: bool = False,
    design: SamplingDesign | None = None,
    statistic: StatisticSpec | None = None,
    restarts: int = 5,
    seed: int = 0,
) -> CorrectionMap:
    """Fit the correction map: noise scheme, type-II hyperparameters, GP.

    The GP prior mean is the constant mean of the (transformed) targets,
    i.e. targets are centred before regression and the offset restored on
    prediction.
    """
    work, shift = _transform_targets(ts, log_transform)
    noise = _noise_from_scheme(work, scheme, seed)
    spans = work.inputs.max(axis=0) - work.inputs.min(axis=0)
    init = KernelParams(max(float(np.var(work.targets)), 1e-6),
                        np.where(spans > 0, spans / 3.0, 1.0))
    center = float(np.mean(work.targets))
    if noise is None:
        params, noise = optimize_with_noise(work, init, restarts=restarts,
                                            seed=seed, prior_mean=center)
    else:
        centred = TrainingSet(work.inputs, work.targets - center,
                              work.replicates)
        params = optimize_hyperparams(centred, noise, init, restarts=restarts,
                                      seed=seed)
    gp = gp_fit(work, params, noise, prior_mean=center)
    return CorrectionMap(gp=gp, scheme=scheme, log_transform=log_transform,
                         log_shift=shift, design=design, statistic=statistic)


@dataclass(frozen=True)
class CorrectedPrediction:
    mean: float
    interval: tuple[float, float]
    extrapolated: bool


def corrected_predict(
    cm: CorrectionMap,
    m_value: float,
    theta_m,
    alpha: float = 0.95,
) -> CorrectedPrediction:
    """Corrected detailed-model prediction at one shared point.

    Adds the map's posterior mean to the reduced statistic; the interval
    is the reduced value plus the correction's central ``alpha`` band.
    Querying outside the training domain only flags extrapolation.
    """
    pred = cm.predict(np.atleast_2d(np.asarray(theta_m, dtype=float)), alpha)
    extrapolated = False
    if cm.design is not None:
        extrapolated = not cm.design.theta_m_prior.contains(theta_m)
    return CorrectedPrediction(
        mean=m_value + float(pred.mean[0]),
        interval=(m_value + float(pred.lower[0]), m_value + float(pred.upper[0])),
        extrapolated=extrapolated,
    )


@dataclass(frozen=True)
class EpsilonEstimate:
    """Map error averaged over the shared prior.

    ``epsilon`` is the mean half-width of the map's ``alpha``-mass band
    (the statistical error bound); ``oracle_error`` is the mean absolute
    deviation from a caller-supplied reference when one is given.
    """

    epsilon: float
    alpha: float
    n_points: int
    oracle_error: float | None = None

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must be in (0, 1)")


def _integration_points(cm: CorrectionMap, n_points: int, seed: int):
    if cm.design is None:
        raise ValueError("map has no design provenance; cannot sample its domain")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                       spawn_key=(7,)))
    return cm.design.theta_m_prior.sample(rng, n_points)


def estimate_epsilon(
    cm: CorrectionMap,
    oracle_eval: Callable | None = None,
    alpha: float = 0.95,
    n_points: int = 200,
    seed: int = 0,
) -> EpsilonEstimate:
    """Monte-Carlo estimate of the map's confidence-width error bound.

    Draws ``n_points`` shared points from the design prior and averages
    the half-width of the ``alpha`` band there.  ``oracle_eval`` (a
    function of one shared point returning the true expected correction)
    additionally yields the empirical integrated error as a validation
    number.
    """
    if n_points < 10:
        raise ValueError("need at least 10 integration points")
    pts = _integration_points(cm, n_points, seed)
    pred = cm.predict(pts, alpha)
    eps = float(np.mean(0.5 * (pred.upper - pred.lower)))
    oracle_error = None
    if oracle_eval is not None:
        truth = np.array([float(oracle_eval(p)) for p in pts])
        oracle_error = float(np.mean(np.abs(pred.mean - truth)))
    return EpsilonEstimate(epsilon=eps, alpha=alpha, n_points=n_points,
                           oracle_error=oracle_error)


@dataclass(frozen=True)
class SelectionResult:
    """Outcome of smallest-correction model selection."""

    best_index: int
    integrals: tuple
    epsilons: tuple
    failures: tuple

    def report(self) -> str:
        lines = []
        for i, (integral, eps) in enumerate(zip(self.integrals, self.epsilons)):
            mark = "*" if i == self.best_index else " "
            if integral is None:
                lines.append(f"{mark} candidate {i}: failed "
                             f"({self.failures[i]})")
            else:
                lines.append(f"{mark} candidate {i}: mean |correction| = "
                             f"{integral:.6g}, epsilon = {eps:.6g}")
        return "\n".join(lines)


def select_model(
    full: ModelFactory,
    candidates: Sequence[tuple[ModelFactory, SamplingDesign]],
    spec: StatisticSpec,
    scheme: VarianceScheme = EmpiricalPooled(),
    log_transform: bool = False,
    n_runs: int = 100,
    n_points: int = 200,
    seed: int = 0,
    n_jobs: int = 1,
    ode_options: OdeOptions | None = None,
) -> SelectionResult:
    """Pick the candidate reduction needing the smallest correction.

    Each candidate gets its own map; the score is the Monte-Carlo mean of
    the absolute posterior-mean correction under the shared prior (the
    absolute value prevents signed corrections from cancelling).  Ties
    break toward the smaller confidence-width epsilon.  Candidates whose
    fit fails are excluded and reported.
    """
    if not candidates:
        raise ValueError("need at least one candidate model")
    integrals: list = []
    epsilons: list = []
    failures: list = []
    for idx, (candidate, design) in enumerate(candidates):
        try:
            ts = build_training_set(full, candidate, spec, design,
                                    n_runs=n_runs, n_jobs=n_jobs,
                                    ode_options=ode_options)
            cm = fit_correction(ts, scheme, log_transform, design=design,
                                statistic=spec, seed=seed)
            pts = _integration_points(cm, n_points, seed)
            integrals.append(float(np.mean(np.abs(cm.mean_at(pts)))))
            epsilons.append(estimate_epsilon(cm, n_points=n_points,
                                             seed=seed).epsilon)
            failures.append(None)
        except Exception as exc:  # noqa: BLE001 - candidate exclusion is the contract
            integrals.append(None)
            epsilons.append(None)
            failures.append(f"{type(exc).__name__}: {exc}")
    viable = [i for i, v in enumerate(integrals) if v is not None]
    if not viable:
        raise SimulationError("every candidate model failed to fit",
                              point_index=-1, replicate_index=None)
    best = min(viable, key=lambda i: (integrals[i], epsilons[i]))
    return SelectionResult(best_index=best, integrals=tuple(integrals),
                           epsilons=tuple(epsilons), failures=tuple(failures))


def check_equivalence(
    map1: CorrectionMap,
    map2: CorrectionMap,
    epsilon: float,
    n_points: int = 200,
    seed: int = 0,
) -> bool:
    """Sampled check that two maps agree within ``epsilon`` everywhere.

    The universal quantifier over the continuous shared space is replaced
    by a sup over ``n_points`` Monte-Carlo points from the (common)
    design prior.
    """
    if map1.design is None or map2.design is None:
        raise ValueError("both maps need design provenance")
    p1, p2 = map1.design.theta_m_prior, map2.design.theta_m_prior
    if type(p1) is not type(p2) or p1.dim != p2.dim:
        raise ValueError("maps are defined over different domains")
    if isinstance(p1, UniformBox) and not (
            np.allclose(p1.lower, p2.lower) and np.allclose(p1.upper, p2.upper)):
        raise ValueError("maps are defined over different domains")
    pts = _integration_points(map1, n_points, seed)
    gap = np.abs(map1.mean_at(pts) - map2.mean_at(pts))
    return bool(np.max(gap) <= epsilon)
