"""Observation-variance models for the correction regression.

Three schemes turn a replicate matrix ``y[i, j]`` (row ``i`` = one input
point, ``j`` = one replicate) into the noise model of the outer GP:

* pooled: one variance for the whole input space, estimated by pooling
  the within-row spread of all replicates;
* point-wise: one empirical variance per row, giving heteroscedastic
  regression directly from the data;
* nested: a second GP fitted to the log of the per-row variances, giving
  a smooth, strictly positive variance surface that can be evaluated
  anywhere in the input space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from corrmap.gp import (
    GpPosterior,
    Homoscedastic,
    KernelParams,
    TrainingSet,
    gp_fit,
    optimize_hyperparams,
    optimize_with_noise,
)

__all__ = [
    "VARIANCE_FLOOR",
    "EmpiricalPooled",
    "PointWise",
    "Nested",
    "VarianceScheme",
    "VarianceField",
    "pooled_variance",
    "pointwise_variance",
    "nested_variance",
]

# Zero observation variance breaks the GP noise model on degenerate rows.
VARIANCE_FLOOR = 1e-12


@dataclass(frozen=True)
class EmpiricalPooled:
    """Single pooled variance; ``variance`` overrides estimation when set."""

    variance: float | None = None


@dataclass(frozen=True)
class PointWise:
    """Per-row empirical variance, used as-is at each training point."""


@dataclass(frozen=True)
class Nested:
    """Inner GP over log per-row variances.

    ``inner_noise`` fixes the inner regression's homoscedastic variance;
    when ``None`` it is set by type-II maximum likelihood.
    """

    inner_noise: float | None = None

    def __post_init__(self):
        if self.inner_noise is not None and self.inner_noise < 0:
            raise ValueError("inner noise variance must be nonnegative")


VarianceScheme = EmpiricalPooled | PointWise | Nested


@dataclass(frozen=True)
class VarianceField:
    """Observation variance over the input space.

    ``at_train`` holds the variance attached to each training point.  When
    the field was built by the nested scheme, ``log_gp`` is the inner
    posterior over log variance and ``evaluate`` works anywhere; otherwise
    the field is only defined at the training points.
    """

    at_train: np.ndarray
    log_gp: GpPosterior | None = None

    def evaluate(self, points) -> np.ndarray:
        if self.log_gp is None:
            raise ValueError(
                "this variance field has no smooth model; it is only "
                "defined at its training points"
            )
        mean, _ = self.log_gp.predict(points)
        return np.exp(mean)


def _rows(replicates) -> list[np.ndarray]:
    """Replicate rows as float arrays; accepts a matrix or ragged lists."""
    if isinstance(replicates, np.ndarray):
        if replicates.ndim != 2:
            raise ValueError("replicate matrix must be 2-D (rows = input points)")
        return [np.asarray(row, dtype=float) for row in replicates]
    rows = [np.asarray(row, dtype=float).ravel() for row in replicates]
    if not rows:
        raise ValueError("replicate matrix is empty")
    return rows


def _row_variances(rows: list[np.ndarray], what: str) -> np.ndarray:
    for i, row in enumerate(rows):
        if row.size < 2:
            raise ValueError(
                f"{what} needs 2+ replicates per row, but row {i} has {row.size}"
            )
    return np.array([max(row.var(ddof=1), VARIANCE_FLOOR) for row in rows])


def pooled_variance(replicates) -> float:
    """Pooled within-row variance of a replicate matrix.

    Each row's mean is subtracted before pooling, so only replicate
    scatter (not variation of the signal across rows) contributes.  Uses
    the unbiased estimator with ``total values - number of rows`` degrees
    of freedom.
    """
    rows = _rows(replicates)
    total = sum(row.size for row in rows)
    if total < 2:
        raise ValueError("need at least 2 replicate values to pool a variance")
    dof = total - len(rows)
    if dof < 1:
        raise ValueError("pooling needs at least one row with 2+ replicates")
    ss = sum(float(np.sum((row - row.mean()) ** 2)) for row in rows)
    return ss / dof


def pointwise_variance(replicates) -> VarianceField:
    """Per-row unbiased sample variances, floored at ``VARIANCE_FLOOR``."""
    return VarianceField(at_train=_row_variances(_rows(replicates),
                                                 "point-wise variance"))


def nested_variance(
    inputs,
    replicates,
    inner_noise: float | None = None,
    seed: int = 0,
) -> VarianceField:
    """Smooth variance field from an inner GP over log row variances.

    The per-row sample variances are taken to log space (which enforces
    positivity of the field), regressed against the input points, and the
    field evaluates to ``exp(posterior mean)``.  The inner observation
    noise is fixed to ``inner_noise`` when given, otherwise set by type-II
    maximum likelihood together with the kernel hyperparameters.
    """
    w = np.log(_row_variances(_rows(replicates), "nested variance"))
    ts = TrainingSet(inputs, w)

    spans = ts.inputs.max(axis=0) - ts.inputs.min(axis=0)
    init = KernelParams(max(np.var(w), 1e-4),
                        np.where(spans > 0, spans / 3.0, 1.0))
    # log variances sit far from zero, so centre the inner regression
    center = float(np.mean(w))
    if inner_noise is None:
        params, noise = optimize_with_noise(ts, init, seed=seed,
                                            prior_mean=center)
    else:
        shifted = TrainingSet(ts.inputs, ts.targets - center)
        noise = Homoscedastic(inner_noise)
        params = optimize_hyperparams(shifted, noise, init, seed=seed)
    gp = gp_fit(ts, params, noise, prior_mean=center)
    mean_at_train, _ = gp.predict(ts.inputs)
    return VarianceField(at_train=np.exp(mean_at_train), log_gp=gp)
