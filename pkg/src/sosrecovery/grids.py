"""Uniform time grids shared by the solver, simulators, and surrogate."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, t_end] with ``n_points`` nodes (endpoints included)."""

    t_end: float
    n_points: int
    times: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.t_end <= 0:
            raise ValueError(f"t_end must be positive, got {self.t_end}")
        if self.n_points < 2:
            raise ValueError(f"n_points must be at least 2, got {self.n_points}")
        object.__setattr__(
            self, "times", np.linspace(0.0, self.t_end, self.n_points)
        )

    @property
    def dt(self) -> float:
        return self.t_end / (self.n_points - 1)

    @classmethod
    def with_step(cls, t_end: float, dt: float) -> "TimeGrid":
        """Build a grid whose step is exactly ``dt`` (t_end must be a multiple)."""
        n_steps = round(t_end / dt)
        if not np.isclose(n_steps * dt, t_end, rtol=1e-9, atol=1e-12):
            raise ValueError(f"t_end={t_end} is not an integer multiple of dt={dt}")
        return cls(t_end=t_end, n_points=n_steps + 1)

    def refined(self, factor: int = 2) -> "TimeGrid":
        """Same span with the step divided by ``factor``."""
        if factor < 1:
            raise ValueError(f"factor must be at least 1, got {factor}")
        return TimeGrid(self.t_end, (self.n_points - 1) * factor + 1)
