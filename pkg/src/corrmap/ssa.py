"""Stochastic back-end: exact direct-method SSA over reaction networks.

Networks are declarative: each reaction has an integer change vector and
a propensity ``rate * product(counts of factor species)``.  Propensities
are additionally guarded so a reaction whose firing would drive any count
negative contributes zero propensity (this covers feedback propensities
that do not mention the consumed species).

Randomness comes from a counter-based Philox generator keyed by
``(seed, run_index)``, so ensemble members get independent, reproducible
streams regardless of execution order.
"""

from __future__ import annotations

import math
from array import array
from dataclasses import dataclass, field

import numpy as np

from corrmap.trajectory import Trajectory

__all__ = [
    "Reaction",
    "ReactionNetwork",
    "SsaConfig",
    "make_rng",
    "ssa_run",
    "ptn_full",
    "ptn_reduced",
    "load_network",
]

_U_BLOCK = 4096  # uniforms drawn per RNG refill


@dataclass(frozen=True)
class Reaction:
    """One reaction channel: state change plus mass-action-style propensity."""

    name: str
    change: dict
    rate: str
    factors: tuple[str, ...] = ()


@dataclass(frozen=True)
class ReactionNetwork:
    """Declarative CTMC model (picklable: no callables inside)."""

    species: tuple[str, ...]
    rates: dict
    reactions: tuple[Reaction, ...]
    initial_state: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "species", tuple(self.species))
        object.__setattr__(self, "reactions", tuple(self.reactions))
        init = tuple(int(v) for v in self.initial_state)
        object.__setattr__(self, "initial_state", init)
        if len(init) != len(self.species):
            raise ValueError("initial state size must match species count")
        if any(v < 0 for v in init):
            raise ValueError("initial counts must be nonnegative")
        names = set(self.species)
        for rx in self.reactions:
            if rx.rate not in self.rates:
                raise ValueError(f"reaction {rx.name!r} uses unknown rate {rx.rate!r}")
            unknown = (set(rx.change) | set(rx.factors)) - names
            if unknown:
                raise ValueError(f"reaction {rx.name!r} uses unknown species {unknown}")
            if self.rates[rx.rate] < 0:
                raise ValueError(f"rate {rx.rate!r} must be nonnegative")

    def species_index(self, name: str) -> int:
        return self.species.index(name)


@dataclass(frozen=True)
class SsaConfig:
    """How to run one realisation.

    ``record="grid"`` samples the state by zero-order hold every ``dt``
    time units; ``record="events"`` keeps every jump (required by the
    temporal-formula statistic so no threshold crossing is missed).
    ``stop_above=(species, threshold)`` ends the run as soon as that count
    strictly exceeds the threshold -- an optimisation for formula checks
    whose time window starts at 0.
    """

    seed: int
    t_end: float
    record: str = "grid"
    dt: float = 1.0
    run_index: int = 0
    stop_above: tuple[str, float] | None = None

    def __post_init__(self):
        if self.t_end <= 0:
            raise ValueError("t_end must be positive")
        if self.record not in ("grid", "events"):
            raise ValueError("record must be 'grid' or 'events'")
        if self.record == "grid" and self.dt <= 0:
            raise ValueError("grid spacing dt must be positive")


def make_rng(seed: int, run_index: int = 0) -> np.random.Generator:
    """Independent counter-based stream for run ``run_index`` of a seed."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(run_index,))
    return np.random.Generator(np.random.Philox(ss))


def _compile(net: ReactionNetwork):
    """Flatten a network into index-based tables for the inner loop."""
    index = {name: i for i, name in enumerate(net.species)}
    table = []
    for rx in net.reactions:
        rate = float(net.rates[rx.rate])
        f = [index[s] for s in rx.factors]
        f1 = f[0] if len(f) > 0 else -1
        f2 = f[1] if len(f) > 1 else -1
        if len(f) > 2:
            raise ValueError(
                f"reaction {rx.name!r}: at most 2 propensity factors supported"
            )
        change = [(index[s], int(d)) for s, d in rx.change.items() if d != 0]
        guard = [(index[s], -int(d)) for s, d in rx.change.items() if d < 0]
        table.append((rate, f1, f2, change, guard))
    return table


def ssa_run(net: ReactionNetwork, cfg: SsaConfig) -> Trajectory:
    """Statistically exact direct-method realisation of a network.

    Waiting times are exponential with the total propensity; the channel
    is chosen in proportion to its propensity.  Absorbing states end the
    event loop early and recording continues by holding the final state.
    """
    table = _compile(net)
    n_species = len(net.species)
    rng = make_rng(cfg.seed, cfg.run_index)
    t_end = float(cfg.t_end)

    x = list(net.initial_state)
    t = 0.0

    stop_idx = -1
    stop_thr = 0.0
    if cfg.stop_above is not None:
        stop_idx = net.species_index(cfg.stop_above[0])
        stop_thr = float(cfg.stop_above[1])

    grid_mode = cfg.record == "grid"
    if grid_mode:
        n_grid = int(math.floor(t_end / cfg.dt + 1e-9)) + 1
        grid_times = np.arange(n_grid) * cfg.dt
        grid_tlist = grid_times.tolist()
        grid_states = np.empty((n_grid, n_species), dtype=np.int64)
        gi = 0
    else:
        ev_times = array("d", [0.0])
        ev_states = array("q", x)

    # buffered uniforms: two draws per event, refilled in blocks
    buf = rng.random(_U_BLOCK).tolist()
    pos = 0
    n_rx = len(table)
    props = [0.0] * n_rx
    log_ = math.log

    stopped_early = stop_idx >= 0 and x[stop_idx] > stop_thr
    while not stopped_early:
        total = 0.0
        for j in range(n_rx):
            rate, f1, f2, _, guard = table[j]
            v = rate
            if f1 >= 0:
                v *= x[f1]
            if f2 >= 0:
                v *= x[f2]
            if v > 0.0 and guard:
                for g_idx, need in guard:
                    if x[g_idx] < need:
                        v = 0.0
                        break
            props[j] = v
            total += v
        if total <= 0.0:
            break  # absorbing state; the hold covers the rest

        if pos + 2 > _U_BLOCK:
            buf = rng.random(_U_BLOCK).tolist()
            pos = 0
        u1 = buf[pos]
        u2 = buf[pos + 1]
        pos += 2

        t_next = t - log_(1.0 - u1) / total
        if t_next > t_end:
            break

        if grid_mode:
            # the pre-event state holds on [t, t_next)
            while gi < n_grid and grid_tlist[gi] < t_next:
                grid_states[gi] = x
                gi += 1

        target = u2 * total
        acc = 0.0
        chosen = n_rx - 1
        for j in range(n_rx):
            acc += props[j]
            if target < acc:
                chosen = j
                break
        for s_idx, d in table[chosen][3]:
            x[s_idx] += d
        t = t_next

        if not grid_mode:
            ev_times.append(t)
            ev_states.extend(x)
        if stop_idx >= 0 and x[stop_idx] > stop_thr:
            stopped_early = True

    if grid_mode:
        while gi < n_grid:
            grid_states[gi] = x
            gi += 1
        return Trajectory(times=grid_times, states=grid_states,
                          species=net.species)

    final_t = t if stopped_early else t_end
    if ev_times[-1] < final_t:
        ev_times.append(final_t)
        ev_states.extend(x)
    times = np.frombuffer(ev_times, dtype=np.float64).copy()
    states = np.frombuffer(ev_states, dtype=np.int64).reshape(-1, n_species).copy()
    return Trajectory(times=times, states=states, species=net.species)


PTN_RATES = {"k_on": 1e-2, "k_off": 1e-2, "alpha": 1.0, "beta": 100.0,
             "delta_rna": 1e-2, "delta_p": 1e-3}


def ptn_full(k_on: float, k_off: float, alpha: float, beta: float,
             delta_rna: float, delta_p: float,
             initial: dict | None = None) -> ReactionNetwork:
    """Gene-expression network with explicit transcript dynamics.

    A two-state gene switches on at ``k_on`` and off at ``k_off`` per
    protein copy (negative feedback); the active gene transcribes, the
    transcript is translated and both products decay.
    """
    _check_positive(k_on=k_on, k_off=k_off, alpha=alpha, beta=beta,
                    delta_rna=delta_rna, delta_p=delta_p)
    species = ("G_in", "G_act", "mRNA", "P")
    init = {"G_in": 0, "G_act": 1, "mRNA": 0, "P": 0}
    if initial:
        init.update(initial)
    reactions = (
        Reaction("activation", {"G_in": -1, "G_act": +1}, "k_on", ("G_in",)),
        Reaction("inactivation", {"G_act": -1, "G_in": +1}, "k_off", ("P",)),
        Reaction("transcription", {"mRNA": +1}, "alpha", ("G_act",)),
        Reaction("mrna_decay", {"mRNA": -1}, "delta_rna", ("mRNA",)),
        Reaction("translation", {"P": +1}, "beta", ("mRNA",)),
        Reaction("p_decay", {"P": -1}, "delta_p", ("P",)),
    )
    return ReactionNetwork(
        species=species,
        rates={"k_on": k_on, "k_off": k_off, "alpha": alpha, "beta": beta,
               "delta_rna": delta_rna, "delta_p": delta_p},
        reactions=reactions,
        initial_state=tuple(init[s] for s in species),
    )


def ptn_reduced(k_on: float, k_off: float, beta: float, delta_p: float,
                initial: dict | None = None) -> ReactionNetwork:
    """Gene-expression network with the transcript step collapsed.

    Valid when translation strongly outpaces transcription; the active
    gene then emits protein directly at rate ``beta``.  Shares the gene
    and protein species with :func:`ptn_full` (the transcript count is
    dropped from the observable state).
    """
    _check_positive(k_on=k_on, k_off=k_off, beta=beta, delta_p=delta_p)
    species = ("G_in", "G_act", "P")
    init = {"G_in": 0, "G_act": 1, "P": 0}
    if initial:
        init.update(initial)
    reactions = (
        Reaction("activation", {"G_in": -1, "G_act": +1}, "k_on", ("G_in",)),
        Reaction("inactivation", {"G_act": -1, "G_in": +1}, "k_off", ("P",)),
        Reaction("translation", {"P": +1}, "beta", ("G_act",)),
        Reaction("p_decay", {"P": -1}, "delta_p", ("P",)),
    )
    return ReactionNetwork(
        species=species,
        rates={"k_on": k_on, "k_off": k_off, "beta": beta, "delta_p": delta_p},
        reactions=reactions,
        initial_state=tuple(init[s] for s in species),
    )


def _check_positive(**rates) -> None:
    for name, value in rates.items():
        if value <= 0:
            raise ValueError(f"rate constant {name} must be positive, got {value}")


def load_network(path) -> ReactionNetwork:
    """Read a declarative network file.

    Format (``#`` comments allowed)::

        species  = G_in G_act mRNA P
        initial  = 0 1 0 0
        rate k_on = 0.01
        reaction activation: G_in -> G_act @ k_on * G_in

    Reaction propensity is the named rate times the product of the counts
    of the species listed after ``@`` (at most two).
    """
    species: tuple[str, ...] = ()
    initial: tuple[int, ...] = ()
    rates: dict = {}
    reactions: list[Reaction] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                if line.startswith("species"):
                    species = tuple(line.split("=", 1)[1].split())
                elif line.startswith("initial"):
                    initial = tuple(int(v) for v in line.split("=", 1)[1].split())
                elif line.startswith("rate "):
                    name, value = line[5:].split("=", 1)
                    rates[name.strip()] = float(value)
                elif line.startswith("reaction "):
                    head, prop = line[9:].split("@", 1)
                    name, arrow = head.split(":", 1)
                    lhs, rhs = arrow.split("->")
                    change: dict = {}
                    for s in lhs.split("+"):
                        s = s.strip()
                        if s and s != "0":
                            change[s] = change.get(s, 0) - 1
                    for s in rhs.split("+"):
                        s = s.strip()
                        if s and s != "0":
                            change[s] = change.get(s, 0) + 1
                    parts = [p.strip() for p in prop.split("*")]
                    reactions.append(Reaction(name.strip(), change, parts[0],
                                              tuple(parts[1:])))
                else:
                    raise ValueError(f"unrecognised directive: {line!r}")
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return ReactionNetwork(species=species, rates=rates,
                           reactions=tuple(reactions), initial_state=initial)
