"""Statistic estimators over model simulations.

Three statistics are supported, each with a standard error:

* ``MeanAt``: expected value of an observable at a fixed time (ensemble
  mean for stochastic models, single solve for ODEs);
* ``LongRunMean``: time average of one long run over a window, for
  ergodic dynamics (batch-means standard error);
* ``EventuallyAbove``: probability that the observable strictly exceeds a
  threshold at some time in a closed window -- the bounded-eventually
  temporal formula -- estimated over an ensemble with binomial standard
  error.

``n_samples`` reports the number of independent units behind the standard
error: runs for ensemble statistics, 1 for single-run estimates.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Union

import numpy as np

from corrmap.ode import OdeOptions, OdeSystem, integrate
from corrmap.ssa import ReactionNetwork, SsaConfig, ssa_run
from corrmap.trajectory import Trajectory

__all__ = [
    "MeanAt",
    "LongRunMean",
    "EventuallyAbove",
    "StatisticSpec",
    "StatEstimate",
    "eval_statistic",
    "eventually_above",
    "time_average",
    "to_record",
]


@dataclass(frozen=True)
class MeanAt:
    """Expected observable value at time ``t``."""

    observable: str
    t: float

    def __post_init__(self):
        if self.t < 0:
            raise ValueError("t must be nonnegative")


@dataclass(frozen=True)
class LongRunMean:
    """Time-averaged observable over ``[burn_in, horizon]`` of one run."""

    observable: str
    burn_in: float = 1000.0
    horizon: float = 10000.0

    def __post_init__(self):
        if not 0 <= self.burn_in < self.horizon:
            raise ValueError("need 0 <= burn_in < horizon")


@dataclass(frozen=True)
class EventuallyAbove:
    """Probability the observable strictly exceeds ``threshold`` somewhere
    in the closed time window."""

    observable: str
    threshold: float
    window: tuple[float, float] = (0.0, 100.0)

    def __post_init__(self):
        lo, hi = self.window
        if not (0 <= lo < hi):
            raise ValueError("window must satisfy 0 <= lo < hi")
        if self.threshold < 0:
            raise ValueError("threshold must be nonnegative")
        object.__setattr__(self, "window", (float(lo), float(hi)))


StatisticSpec = Union[MeanAt, LongRunMean, EventuallyAbove]


@dataclass(frozen=True)
class StatEstimate:
    value: float
    standard_error: float
    n_samples: int

    def __post_init__(self):
        if self.standard_error < 0:
            raise ValueError("standard error must be nonnegative")


def to_record(spec: StatisticSpec, est: StatEstimate) -> dict:
    """JSON-ready record {spec, value, se, n} of one evaluation."""
    desc = {"kind": type(spec).__name__, **vars(spec)}
    if isinstance(spec, EventuallyAbove):
        desc["window"] = list(spec.window)
    return {"spec": desc, "value": est.value, "se": est.standard_error,
            "n": est.n_samples}


def time_average(traj: Trajectory, observable: str, lo: float, hi: float) -> float:
    """Exact time average of a zero-order-hold record over ``[lo, hi]``."""
    if lo < traj.times[0] or hi > traj.times[-1]:
        raise ValueError(f"window [{lo}, {hi}] not covered by trajectory")
    if hi <= lo:
        raise ValueError("need lo < hi")
    values = traj.column(observable)[:-1].astype(float)
    starts = np.clip(traj.times[:-1], lo, hi)
    ends = np.clip(traj.times[1:], lo, hi)
    return float(np.sum(values * (ends - starts)) / (hi - lo))


def eventually_above(traj: Trajectory, threshold: float,
                     window: tuple[float, float],
                     observable: str | None = None) -> bool:
    """True iff some state holding during the closed window exceeds
    ``threshold`` strictly.

    Expects an event-exact record (states change only at the recorded
    times, each holding right-continuously until the next) that covers the
    whole window.  ``observable`` may be omitted for single-species
    trajectories.
    """
    lo, hi = float(window[0]), float(window[1])
    if hi <= lo or lo < 0:
        raise ValueError("window must satisfy 0 <= lo < hi")
    if traj.times[-1] < hi:
        raise ValueError(
            f"trajectory ends at {traj.times[-1]}, before the window end {hi}"
        )
    if observable is None:
        if len(traj.species) != 1:
            raise ValueError("observable name required for multi-species records")
        observable = traj.species[0]
    values = traj.column(observable).astype(float)
    return _piece_hit(traj.times, values, float(threshold), lo, hi)


def _piece_hit(times, values, threshold, lo, hi) -> bool:
    n = times.size
    if n == 1:
        return bool(values[0] > threshold and lo <= times[0] <= hi)
    starts = times[:-1]
    ends = times[1:]
    vals = values[:-1]
    # half-open pieces [t_i, t_{i+1}) overlapping the closed window
    hit = (vals > threshold) & (starts <= hi) & (ends > lo)
    if bool(np.any(hit)):
        return True
    # the final recorded state holds at the final instant
    return bool(values[-1] > threshold and lo <= times[-1] <= hi)


_MAX_SUBMIT = 64  # chunk size for process-pool ensembles


def _run_for(args):
    net, cfg = args
    return ssa_run(net, cfg)


def _ensemble(net: ReactionNetwork, make_cfg, n_runs: int, n_jobs: int):
    """Yield run trajectories in run-index order (parallelism optional)."""
    if n_jobs <= 1:
        for i in range(n_runs):
            yield ssa_run(net, make_cfg(i))
        return
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        args = ((net, make_cfg(i)) for i in range(n_runs))
        yield from pool.map(_run_for, args, chunksize=max(1, n_runs // (8 * n_jobs)))


def eval_statistic(
    model,
    spec: StatisticSpec,
    n_runs: int = 100,
    seed: int = 0,
    n_jobs: int = 1,
    ode_options: OdeOptions | None = None,
) -> StatEstimate:
    """Estimate a statistic on an ODE system or a reaction network.

    ODE models are deterministic, so ``n_runs`` is ignored there and the
    standard error is zero.  Stochastic evaluation derives one RNG stream
    per run from ``(seed, run index)``, so results do not depend on
    execution order or parallelism.
    """
    if spec.observable not in model.species:
        raise ValueError(
            f"observable {spec.observable!r} absent from model "
            f"(species: {model.species})"
        )
    if isinstance(model, OdeSystem):
        return _eval_ode(model, spec, ode_options or OdeOptions())
    if isinstance(model, ReactionNetwork):
        return _eval_ssa(model, spec, n_runs, seed, n_jobs)
    raise TypeError(f"unsupported model type {type(model).__name__}")


def _eval_ode(model: OdeSystem, spec: StatisticSpec,
              options: OdeOptions) -> StatEstimate:
    if isinstance(spec, MeanAt):
        if spec.t == 0:
            value = float(model.initial_state[model.species.index(spec.observable)])
        else:
            traj = integrate(model, spec.t, options, t_eval=[0.0, spec.t])
            value = float(traj.column(spec.observable)[-1])
        return StatEstimate(value, 0.0, 1)
    if isinstance(spec, LongRunMean):
        grid = np.linspace(spec.burn_in, spec.horizon, 2001)
        traj = integrate(model, spec.horizon, options, t_eval=grid)
        value = float(np.trapezoid(traj.column(spec.observable), traj.times)
                      / (spec.horizon - spec.burn_in))
        return StatEstimate(value, 0.0, 1)
    if isinstance(spec, EventuallyAbove):
        lo, hi = spec.window
        grid = np.linspace(lo, hi, 2001)
        traj = integrate(model, hi, options, t_eval=grid)
        sat = bool(np.any(traj.column(spec.observable) > spec.threshold))
        return StatEstimate(1.0 if sat else 0.0, 0.0, 1)
    raise TypeError(f"unsupported statistic {type(spec).__name__}")


def _eval_ssa(model: ReactionNetwork, spec: StatisticSpec, n_runs: int,
              seed: int, n_jobs: int) -> StatEstimate:
    if isinstance(spec, MeanAt):
        obs_idx = model.species.index(spec.observable)
        if spec.t == 0:
            return StatEstimate(float(model.initial_state[obs_idx]), 0.0, n_runs)

        def cfg(i):
            # two-point grid: the last row is the state holding at t
            return SsaConfig(seed=seed, t_end=spec.t, record="grid",
                             dt=spec.t, run_index=i)
        values = np.array([
            float(traj.states[-1, obs_idx])
            for traj in _ensemble(model, cfg, n_runs, n_jobs)
        ])
        se = float(values.std(ddof=1) / np.sqrt(n_runs)) if n_runs > 1 else 0.0
        return StatEstimate(float(values.mean()), se, n_runs)

    if isinstance(spec, LongRunMean):
        traj = ssa_run(model, SsaConfig(seed=seed, t_end=spec.horizon,
                                        record="events"))
        value = time_average(traj, spec.observable, spec.burn_in, spec.horizon)
        n_batches = 20
        edges = np.linspace(spec.burn_in, spec.horizon, n_batches + 1)
        batches = np.array([
            time_average(traj, spec.observable, a, b)
            for a, b in zip(edges[:-1], edges[1:])
        ])
        se = float(batches.std(ddof=1) / np.sqrt(n_batches))
        return StatEstimate(value, se, 1)

    if isinstance(spec, EventuallyAbove):
        lo, hi = spec.window
        stop = (spec.observable, spec.threshold) if lo == 0.0 else None

        def cfg(i):
            return SsaConfig(seed=seed, t_end=hi, record="events",
                             run_index=i, stop_above=stop)

        hits = 0
        for traj in _ensemble(model, cfg, n_runs, n_jobs):
            if stop is not None:
                # every recorded state holds somewhere in [0, hi]
                hits += int(bool(np.any(traj.column(spec.observable)
                                        > spec.threshold)))
            else:
                hits += int(eventually_above(traj, spec.threshold, spec.window,
                                             spec.observable))
        p = hits / n_runs
        se = float(np.sqrt(p * (1.0 - p) / n_runs))
        return StatEstimate(p, se, n_runs)

    raise TypeError(f"unsupported statistic {type(spec).__name__}")
