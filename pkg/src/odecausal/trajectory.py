"""Time grid + state matrix container shared by every pipeline stage."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Trajectory:
    """An observed or simulated solution: `states[k]` is the state at `times[k]`.

    Invariants enforced on construction: times strictly increasing, one state
    row per time point, all entries finite.
    """

    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.times.ndim != 1:
            raise ValueError("times must be a 1-d array")
        if self.states.ndim != 2:
            raise ValueError("states must be a 2-d array (num_times x n)")
        if self.states.shape[0] != self.times.shape[0]:
            raise ValueError(
                f"states has {self.states.shape[0]} rows for {self.times.shape[0]} times"
            )
        if self.times.size < 1:
            raise ValueError("trajectory needs at least one time point")
        if self.times.size > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("times must be strictly increasing")
        if not np.all(np.isfinite(self.times)) or not np.all(np.isfinite(self.states)):
            raise ValueError("trajectory contains non-finite entries")

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def __len__(self) -> int:
        return self.times.shape[0]

    def restrict(self, indices) -> "Trajectory":
        """Sub-trajectory at the given (sorted, unique) row indices."""
        idx = np.asarray(indices, dtype=int)
        return Trajectory(self.times[idx], self.states[idx])
