"""Experiment configs: parse, run, and write the report files.

An experiment is a plain INI file naming two models (built-ins or network
files), a sampling design, a statistic, and one or more variance schemes.
Running it produces, in the output directory:

* ``training.csv``   -- design points, correction targets, replicates
* ``map-<scheme>.csv`` -- dense prediction grid with mean/sd/band
* ``figure-<scheme>.svg`` -- the map rendered with its confidence band
* ``epsilon.json``   -- averaged confidence-width error per scheme
* ``stats.json``     -- reduced-model statistic records at the design points

Every file embeds the config hash and the effective seed, and reruns with
the same seed are byte-identical on the CSV/JSON side.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from corrmap.ode import COARSE_ODE45, OdeOptions, mm_full, mm_reduced
from corrmap.pipeline import (
    Delta,
    SamplingDesign,
    UniformBox,
    build_training_set,
    estimate_epsilon,
    fit_correction,
    reduced_statistics,
)
from corrmap.ssa import load_network, ptn_full, ptn_reduced
from corrmap.stats import EventuallyAbove, LongRunMean, MeanAt, to_record
from corrmap.variance import EmpiricalPooled, Nested, PointWise

__all__ = ["ConfigError", "ExperimentConfig", "run_experiment",
           "builtin_descriptions", "load_config"]


class ConfigError(ValueError):
    """Configuration file is missing, malformed, or semantically invalid."""


# Built-in models: name -> (base parameters, short description).
# The descriptions cite the bundled reproduction config (configs/*.cfg)
# each model belongs to.
MM_BASE = {"k1": 2.0, "km1": 1.0, "k2": 1.5, "S0": 60.0, "P0": 0.0}
PTN_BASE = {"k_on": 1e-2, "k_off": 1e-2, "delta_rna": 1e-2, "delta_p": 1e-3}

BUILTIN_MODELS = {
    "mm-full": (MM_BASE, "mass-action enzyme system E+S<->ES->E+P "
                         "(ODE; fig3 configs)"),
    "mm-reduced": (MM_BASE, "quasi-steady-state reduction of mm-full with "
                            "saturating product rate (ODE; fig3 configs)"),
    "ptn-full": (PTN_BASE, "self-repressing telegraph gene with explicit "
                           "transcripts (CTMC; fig5/fig6 configs)"),
    "ptn-reduced": ({k: v for k, v in PTN_BASE.items()
                     if k not in ("delta_rna",)},
                    "ptn-full with translation collapsed onto the active "
                    "gene (CTMC; fig5/fig6 configs)"),
}

BUILTIN_STATISTICS = {
    "mean_at": "observable mean at a time point (fig3 configs)",
    "long_run_mean": "ergodic time average of one long run (fig5 configs)",
    "eventually_above": "P(threshold exceeded within a window) "
                        "(fig6 configs)",
}


def builtin_descriptions() -> str:
    lines = ["built-in models:"]
    for name, (_, desc) in BUILTIN_MODELS.items():
        lines.append(f"  {name:<12} {desc}")
    lines.append("built-in statistics:")
    for name, desc in BUILTIN_STATISTICS.items():
        lines.append(f"  {name:<18} {desc}")
    return "\n".join(lines)


def _model_factory(spec: str, base: dict, initial: dict | None):
    """Factory turning a parameter dict into a concrete model instance."""
    if spec == "mm-full":
        return lambda p: mm_full(**{**base, **p})
    if spec == "mm-reduced":
        return lambda p: mm_reduced(**{**base, **p})
    if spec == "ptn-full":
        return lambda p: ptn_full(**{**base, **p}, initial=initial)
    if spec == "ptn-reduced":
        stripped = {k: v for k, v in base.items() if k != "delta_rna"}
        return lambda p: ptn_reduced(**{**stripped, **p}, initial=initial)
    path = Path(spec)
    if path.suffix == ".net":
        if not path.exists():
            raise ConfigError(f"network file not found: {spec}")
        net = load_network(path)

        def from_file(p):
            return dataclasses.replace(net, rates={**net.rates, **base, **p})

        return from_file
    raise ConfigError(f"unknown model {spec!r} (not a built-in or .net file)")


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    seed: int
    out_dir: str
    full_model: str
    reduced_model: str
    model_params: dict
    initial: dict | None
    design: SamplingDesign
    statistic: object
    n_runs: int
    schemes: tuple
    scheme_names: tuple
    log_transform: bool
    grid_points: int
    alpha: float
    epsilon_points: int
    config_sha256: str
    raw_text: str


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split()]


def _get(cp, section, key, default=None, required=False):
    try:
        return cp.get(section, key)
    except (configparser.NoSectionError, configparser.NoOptionError):
        if required:
            raise ConfigError(f"missing required key [{section}] {key}") from None
        return default


def _parse_prior(cp, section, names, kind_prefix):
    delta = _get(cp, section, f"{kind_prefix}_delta")
    lower = _get(cp, section, f"{kind_prefix}_lower")
    upper = _get(cp, section, f"{kind_prefix}_upper")
    if delta is not None:
        return Delta(np.asarray(_floats(delta)))
    if lower is None or upper is None:
        raise ConfigError(
            f"[{section}] needs {kind_prefix}_lower/{kind_prefix}_upper "
            f"or {kind_prefix}_delta for parameters {names}")
    return UniformBox(np.asarray(_floats(lower)), np.asarray(_floats(upper)))


def _parse_statistic(cp):
    kind = _get(cp, "statistic", "kind", required=True)
    observable = _get(cp, "statistic", "observable", required=True)
    if kind == "mean_at":
        return MeanAt(observable, float(_get(cp, "statistic", "t", required=True)))
    if kind == "long_run_mean":
        return LongRunMean(
            observable,
            burn_in=float(_get(cp, "statistic", "burn_in", "1000")),
            horizon=float(_get(cp, "statistic", "horizon", "10000")),
        )
    if kind == "eventually_above":
        window = _floats(_get(cp, "statistic", "window", "0 100"))
        if len(window) != 2:
            raise ConfigError("[statistic] window needs two values: lo hi")
        return EventuallyAbove(
            observable,
            threshold=float(_get(cp, "statistic", "threshold", required=True)),
            window=(window[0], window[1]),
        )
    raise ConfigError(f"unknown statistic kind {kind!r}")


def _parse_schemes(cp):
    names = _get(cp, "fit", "schemes", "pooled").split()
    pooled_var = _get(cp, "fit", "pooled_variance")
    inner = _get(cp, "fit", "nested_inner_noise")
    schemes = []
    for name in names:
        if name == "pooled":
            schemes.append(EmpiricalPooled(
                float(pooled_var) if pooled_var is not None else None))
        elif name == "pointwise":
            schemes.append(PointWise())
        elif name == "nested":
            schemes.append(Nested(float(inner) if inner is not None else None))
        else:
            raise ConfigError(f"unknown variance scheme {name!r}")
    return tuple(schemes), tuple(names)


def load_config(path, seed_override: int | None = None,
                out_dir_override: str | None = None) -> ExperimentConfig:
    """Parse an experiment file into a validated config."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    raw = path.read_text(encoding="utf-8")
    cp = configparser.ConfigParser()
    try:
        cp.read_string(raw, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    try:
        return _interpret(cp, path, raw, seed_override, out_dir_override)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc


def _interpret(cp, path, raw, seed_override, out_dir_override):
    name = _get(cp, "experiment", "name", path.stem)
    seed = seed_override if seed_override is not None else \
        int(_get(cp, "experiment", "seed", "0"))
    out_dir = out_dir_override or _get(cp, "experiment", "out_dir",
                                       f"results/{name}")

    full = _get(cp, "models", "full", required=True)
    reduced = _get(cp, "models", "reduced", required=True)
    params = {}
    initial = None
    if cp.has_section("models"):
        for key, value in cp.items("models"):
            if key in ("full", "reduced"):
                continue
            if key == "initial":
                initial = {}
                for pair in value.split():
                    sp, _, count = pair.partition(":")
                    if not count:
                        raise ConfigError(
                            f"[models] initial entries look like NAME:COUNT, "
                            f"got {pair!r}")
                    initial[sp] = int(count)
            else:
                try:
                    params[key] = float(value)
                except ValueError:
                    raise ConfigError(
                        f"[models] {key} must be numeric, got {value!r}"
                    ) from None

    theta_m = tuple(_get(cp, "design", "theta_m", required=True).split())
    theta_f = tuple((_get(cp, "design", "theta_f") or "").split())
    design = SamplingDesign(
        theta_m_names=theta_m,
        theta_m_prior=_parse_prior(cp, "design", theta_m, "theta_m"),
        n_theta_m=int(_get(cp, "design", "n_theta_m", required=True)),
        theta_f_names=theta_f,
        theta_f_prior=_parse_prior(cp, "design", theta_f, "theta_f")
        if theta_f else None,
        k=int(_get(cp, "design", "k", "1")),
        mode=_get(cp, "design", "mode", "auto"),
        seed=seed,
    )
    schemes, scheme_names = _parse_schemes(cp)
    try:
        statistic = _parse_statistic(cp)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    return ExperimentConfig(
        name=name,
        seed=seed,
        out_dir=out_dir,
        full_model=full,
        reduced_model=reduced,
        model_params=params,
        initial=initial,
        design=design,
        statistic=statistic,
        n_runs=int(_get(cp, "statistic", "n_runs", "100")),
        schemes=schemes,
        scheme_names=scheme_names,
        log_transform=_get(cp, "fit", "log_transform", "false").lower()
        in ("1", "true", "yes", "on"),
        grid_points=int(_get(cp, "report", "grid_points", "200")),
        alpha=float(_get(cp, "report", "alpha", "0.95")),
        epsilon_points=int(_get(cp, "report", "epsilon_points", "200")),
        config_sha256=hashlib.sha256(raw.encode()).hexdigest()[:16],
        raw_text=raw,
    )


def _header(cfg: ExperimentConfig) -> str:
    return f"# corrmap experiment={cfg.name} config_sha256={cfg.config_sha256} seed={cfg.seed}\n"


def _write_csv(path, cfg, columns, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(_header(cfg))
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def run_experiment(
    config_path,
    seed: int | None = None,
    out_dir: str | None = None,
    threads: int = 1,
    paper_faithful: bool = False,
) -> Path:
    """Run one experiment file end to end; returns the output directory.

    ``paper_faithful`` switches the ODE solver to the coarse legacy
    settings (every tolerance and step parameter 0.01).
    """
    cfg = load_config(config_path, seed_override=seed,
                      out_dir_override=out_dir)
    ode_options = COARSE_ODE45 if paper_faithful else OdeOptions()

    base = {**dict(_base_params(cfg.full_model)), **cfg.model_params}
    full = _model_factory(cfg.full_model, base, cfg.initial)
    base_r = {**dict(_base_params(cfg.reduced_model)), **cfg.model_params}
    base_r = _restrict_params(cfg.reduced_model, base_r)
    reduced = _model_factory(cfg.reduced_model, base_r, cfg.initial)

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    ts = build_training_set(full, reduced, cfg.statistic, cfg.design,
                            n_runs=cfg.n_runs, n_jobs=threads,
                            ode_options=ode_options)
    m_stats = reduced_statistics(reduced, cfg.statistic, cfg.design,
                                 n_runs=cfg.n_runs, n_jobs=threads,
                                 ode_options=ode_options)

    theta_cols = list(cfg.design.theta_m_names)
    k_eff = cfg.design.effective_k
    rep_cols = [f"rep_{j + 1}" for j in range(k_eff)] if k_eff > 1 else []
    reps = ts.replicates if ts.replicates is not None \
        else ts.targets.reshape(-1, 1)
    rows = [list(x) + [y] + (list(r) if rep_cols else [])
            for x, y, r in zip(ts.inputs, ts.targets, reps)]
    _write_csv(out / "training.csv", cfg,
               theta_cols + ["correction"] + rep_cols, rows)

    with open(out / "stats.json", "w", encoding="utf-8") as fh:
        json.dump({
            "experiment": cfg.name,
            "config_sha256": cfg.config_sha256,
            "seed": cfg.seed,
            "reduced_model": [to_record(cfg.statistic, est)
                              for est in m_stats],
        }, fh, indent=2)

    prior = cfg.design.theta_m_prior
    if isinstance(prior, UniformBox) and prior.dim == 1:
        grid = np.linspace(float(prior.lower[0]), float(prior.upper[0]),
                           cfg.grid_points).reshape(-1, 1)
    else:
        rng = np.random.default_rng(np.random.SeedSequence(
            entropy=cfg.seed, spawn_key=(11,)))
        grid = prior.sample(rng, cfg.grid_points)

    epsilon_report = {
        "experiment": cfg.name,
        "config_sha256": cfg.config_sha256,
        "seed": cfg.seed,
        "alpha": cfg.alpha,
        "schemes": {},
    }
    for scheme, scheme_name in zip(cfg.schemes, cfg.scheme_names):
        cm = fit_correction(ts, scheme, cfg.log_transform,
                            design=cfg.design, statistic=cfg.statistic,
                            seed=cfg.seed)
        pred = cm.predict(grid, alpha=cfg.alpha)
        sd = _output_sd(cm, pred)
        _write_csv(out / f"map-{scheme_name}.csv", cfg,
                   theta_cols + ["mean", "sd", "lower", "upper"],
                   [list(x) + [m, s, lo, hi]
                    for x, m, s, lo, hi in zip(grid, pred.mean, sd,
                                               pred.lower, pred.upper)])
        eps = estimate_epsilon(cm, alpha=cfg.alpha,
                               n_points=cfg.epsilon_points, seed=cfg.seed)
        epsilon_report["schemes"][scheme_name] = {
            "epsilon": eps.epsilon,
            "n_points": eps.n_points,
        }
        if grid.shape[1] == 1:
            from corrmap.report import render_map_figure

            render_map_figure(
                out / f"figure-{scheme_name}.svg",
                grid[:, 0], pred.mean, pred.lower, pred.upper,
                ts.inputs[:, 0], ts.targets,
                xlabel=theta_cols[0],
                ylabel="correction",
                title=f"{cfg.name}: {scheme_name} scheme",
                hashsalt=cfg.config_sha256,
                description=f"config={cfg.config_sha256} seed={cfg.seed}",
            )

    with open(out / "epsilon.json", "w", encoding="utf-8") as fh:
        json.dump(epsilon_report, fh, indent=2)
    return out


def _base_params(model_spec: str) -> dict:
    if model_spec in BUILTIN_MODELS:
        return dict(BUILTIN_MODELS[model_spec][0])
    return {}


def _restrict_params(model_spec: str, params: dict) -> dict:
    """Drop base parameters a reduced built-in does not accept."""
    if model_spec == "ptn-reduced":
        return {k: v for k, v in params.items()
                if k in ("k_on", "k_off", "beta", "delta_p")}
    if model_spec == "mm-reduced":
        return {k: v for k, v in params.items()
                if k in ("k1", "km1", "k2", "E0", "S0", "ES0", "P0")}
    return params


def _output_sd(cm, pred) -> np.ndarray:
    if not cm.log_transform:
        return pred.latent_sd
    s2 = pred.latent_sd**2
    return np.sqrt(np.expm1(s2) * np.exp(2.0 * pred.latent_mean + s2))
