"""Time-indexed state records shared by the ODE and SSA back-ends."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["Trajectory"]


@dataclass(frozen=True)
class Trajectory:
    """One simulation's state history on a strictly increasing time grid.

    ODE trajectories carry float states sampled by the solver; SSA
    trajectories carry integer counts, either on a uniform recording grid
    (zero-order hold) or at the exact event times.  Event-exact records end
    with the state holding at the final time, so ``times[-1]`` is the
    horizon the record certifies.
    """

    times: np.ndarray
    states: np.ndarray
    species: tuple[str, ...]

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        x = np.asarray(self.states)
        if x.ndim != 2 or x.shape[0] != t.size:
            raise ValueError("states must be (n_times, n_species)")
        if x.shape[1] != len(self.species):
            raise ValueError("one state column per species is required")
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("times must be strictly increasing")
        if not np.all(np.isfinite(x.astype(float))):
            raise ValueError("states must be finite")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", x)
        object.__setattr__(self, "species", tuple(self.species))

    def column(self, name: str) -> np.ndarray:
        """Values of one species over the whole record."""
        return self.states[:, self.species_index(name)]

    def species_index(self, name: str) -> int:
        try:
            return self.species.index(name)
        except ValueError:
            raise ValueError(
                f"species {name!r} not in trajectory (has {self.species})"
            ) from None

    def state_at(self, t: float) -> np.ndarray:
        """State holding at time ``t`` (right-continuous zero-order hold)."""
        if t < self.times[0] or t > self.times[-1]:
            raise ValueError(f"time {t} outside recorded range")
        idx = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.states[idx]

    def to_csv(self, path) -> None:
        """Write ``t`` plus one column per species, in declaration order."""
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("t," + ",".join(self.species) + "\n")
            for t, row in zip(self.times, self.states):
                fh.write(f"{t!r}," + ",".join(repr(v) for v in row.tolist()))
                fh.write("\n")
