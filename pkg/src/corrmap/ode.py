"""Deterministic back-end: adaptive RK45 integration and the enzyme models.

The built-in systems are the irreversible enzyme reaction under mass
action (``mm_full``) and its quasi-steady-state reduction where product
forms at the classic saturating rate ``v_max * S / (k_mm + S)``
(``mm_reduced``).  Both expose the same species so their product curves
can be compared directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from corrmap.trajectory import Trajectory

__all__ = [
    "OdeOptions",
    "COARSE_ODE45",
    "OdeSystem",
    "MmConstants",
    "StiffnessError",
    "integrate",
    "mm_full",
    "mm_reduced",
]


class StiffnessError(RuntimeError):
    """The adaptive solver stalled; ``t_fail`` is where steps underflowed."""

    def __init__(self, message: str, t_fail: float):
        super().__init__(message)
        self.t_fail = t_fail


@dataclass(frozen=True)
class OdeOptions:
    """Tolerances and step limits for the embedded RK45 integrator."""

    rel_tol: float = 1e-6
    abs_tol: float = 1e-6
    first_step: float | None = None
    max_step: float = np.inf


# Coarse legacy configuration: every solver parameter set to 0.01, for
# reproducing runs made with that historical ode45 setup.
COARSE_ODE45 = OdeOptions(rel_tol=0.01, abs_tol=0.01, first_step=0.01,
                          max_step=0.01)


@dataclass(frozen=True)
class OdeSystem:
    """A named ODE model: species, rate constants, initial state, RHS."""

    species: tuple[str, ...]
    rates: dict
    initial_state: np.ndarray
    rhs: Callable[[float, np.ndarray], np.ndarray]

    def __post_init__(self):
        x0 = np.asarray(self.initial_state, dtype=float)
        if x0.size != len(self.species):
            raise ValueError("initial state size must match species count")
        if np.any(x0 < 0):
            raise ValueError("initial amounts must be nonnegative")
        object.__setattr__(self, "initial_state", x0)
        object.__setattr__(self, "species", tuple(self.species))


@dataclass(frozen=True)
class MmConstants:
    """Saturation constants of the reduced enzyme model."""

    v_max: float
    k_mm: float

    def __post_init__(self):
        if self.v_max <= 0 or self.k_mm <= 0:
            raise ValueError("v_max and k_mm must be positive")

    @classmethod
    def from_rates(cls, k1: float, km1: float, k2: float, e0: float,
                   es0: float = 0.0) -> "MmConstants":
        return cls(v_max=k2 * (e0 + es0), k_mm=(km1 + k2) / k1)


def integrate(
    sys: OdeSystem,
    t_end: float,
    options: OdeOptions = OdeOptions(),
    t_eval=None,
) -> Trajectory:
    """Integrate with the adaptive embedded RK45 pair.

    Output is interpolated by the solver onto ``t_eval`` (default: 201
    evenly spaced times including 0 and ``t_end``).
    """
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    if t_eval is None:
        t_eval = np.linspace(0.0, t_end, 201)
    else:
        t_eval = np.asarray(t_eval, dtype=float)
    kwargs = {}
    if options.first_step is not None:
        kwargs["first_step"] = options.first_step
    sol = solve_ivp(
        sys.rhs,
        (0.0, t_end),
        sys.initial_state,
        method="RK45",
        t_eval=t_eval,
        rtol=options.rel_tol,
        atol=options.abs_tol,
        max_step=options.max_step,
        **kwargs,
    )
    if not sol.success:
        t_fail = float(sol.t[-1]) if sol.t.size else 0.0
        raise StiffnessError(f"integration stalled at t={t_fail}: {sol.message}",
                             t_fail=t_fail)
    return Trajectory(times=sol.t, states=sol.y.T, species=sys.species)


def _check_rates(**rates) -> None:
    for name, value in rates.items():
        if value <= 0:
            raise ValueError(f"rate constant {name} must be positive, got {value}")


MM_SPECIES = ("E", "S", "ES", "P")


def mm_full(k1: float, km1: float, k2: float, E0: float, S0: float,
            ES0: float = 0.0, P0: float = 0.0) -> OdeSystem:
    """Mass-action enzyme system E + S <-> ES -> E + P."""
    _check_rates(k1=k1, km1=km1, k2=k2)

    def rhs(t, x):
        e, s, es, _ = x
        bind = k1 * e * s
        unbind = km1 * es
        cat = k2 * es
        return np.array([-bind + unbind + cat,
                         -bind + unbind,
                         bind - unbind - cat,
                         cat])

    return OdeSystem(
        species=MM_SPECIES,
        rates={"k1": k1, "km1": km1, "k2": k2},
        initial_state=np.array([E0, S0, ES0, P0]),
        rhs=rhs,
    )


def mm_reduced(k1: float, km1: float, k2: float, E0: float, S0: float,
               ES0: float = 0.0, P0: float = 0.0) -> OdeSystem:
    """Quasi-steady-state reduction: enzyme and complex frozen, product
    forms at the saturating rate ``v_max * S / (k_mm + S)``."""
    _check_rates(k1=k1, km1=km1, k2=k2)
    c = MmConstants.from_rates(k1, km1, k2, E0, ES0)

    def rhs(t, x):
        s = x[1]
        rate = c.v_max * s / (c.k_mm + s)
        return np.array([0.0, -rate, 0.0, rate])

    return OdeSystem(
        species=MM_SPECIES,
        rates={"k1": k1, "km1": km1, "k2": k2},
        initial_state=np.array([E0, S0, ES0, P0]),
        rhs=rhs,
    )
