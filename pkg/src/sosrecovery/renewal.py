"""Semi-Markov kernels and the Markov-renewal equation solver.

A semi-Markov process on a finite state space is specified by its kernel
Phi, where Phi[i, j](t) is the joint probability of jumping from i to j
with holding time at most t. Rows may be defective; the missing mass
absorbs in place. The conditional transition probabilities R solve the
Markov-renewal (Volterra) equation

    R(t) = W(t) + int_0^t Phi'(tau) R(t - tau) dtau,

with W(t) the diagonal no-jump-yet survival matrix. ``solve_markov_renewal``
time-marches this with trapezoid quadrature (second order in the step).

The clock-reset kernel of ``build_kernel_clock_reset`` restarts every
failed system's recovery clock after each jump; the entry for recovering
system k out of state A is

    Phi[A, A+k](t) = int_0^t f_k(s) prod_{j failed, j != k} (1 - phi_j(s)) ds,

the probability that k's clock rings first and by time t.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.linalg import lu_factor, lu_solve

from .errors import KernelError
from .grids import TimeGrid
from .recovery import PiecewiseLinearRecovery, RecoveryFunction, coverage_horizon, from_dict
from .seeding import child_rng

ROW_MASS_TOL = 1e-9


@dataclass(frozen=True)
class ScaledEntry:
    """Kernel entry Phi_ij(t) = mass * F(t) for a holding-time law F."""

    mass: float
    function: RecoveryFunction

    def __post_init__(self):
        if not (0 < self.mass <= 1 + ROW_MASS_TOL):
            raise KernelError(f"entry mass must be in (0, 1], got {self.mass}")

    def cdf(self, t):
        return self.mass * self.function.cdf(t)

    def density(self, t):
        return self.mass * self.function.density(t)

    def sample_holding(self, rng: np.random.Generator) -> float:
        """Holding time conditional on this jump happening."""
        return float(self.function.ppf(rng.random()))

    def to_dict(self) -> dict:
        return {"mass": self.mass, "function": self.function.to_dict()}


class CompetingClockEntry:
    """Kernel entry for the winner of independent competing clocks.

    The winner's density is multiplied by the survival of every
    competitor, which is the exact density of "winner rings first, at
    time s". The CDF has no closed form in general, so it is tabulated
    by cumulative trapezoid on a dense grid reaching the given horizon.
    ``density`` stays analytic; ``cdf``/``sample_holding`` use the table.
    """

    def __init__(
        self,
        winner: RecoveryFunction,
        competitors: Sequence[RecoveryFunction] = (),
        horizon: Optional[float] = None,
        n_points: int = 4097,
        scale: float = 1.0,
    ):
        if horizon is None:
            horizon = coverage_horizon([winner, *competitors])
        if horizon <= 0:
            raise KernelError(f"tabulation horizon must be positive, got {horizon}")
        if n_points < 16:
            raise KernelError(f"tabulation needs at least 16 points, got {n_points}")
        self.winner = winner
        self.competitors = tuple(competitors)
        self._grid = np.linspace(0.0, float(horizon), n_points)
        dens = np.asarray(winner.density(self._grid), dtype=float)
        for comp in self.competitors:
            dens = dens * (1.0 - comp.cdf(self._grid))
        self._raw_table = cumulative_trapezoid(dens, self._grid, initial=0.0)
        raw_mass = self._raw_table[-1]
        if raw_mass <= 0:
            raise KernelError("competing-clock entry has zero mass on its horizon")
        # quadrature can overshoot a probability-one win by a few ulp
        if scale * raw_mass > 1.0:
            scale = 1.0 / raw_mass
        self._scale = float(scale)
        self._conditional = PiecewiseLinearRecovery(
            knots=tuple(zip(self._grid, self._raw_table / raw_mass))
        )

    @property
    def mass(self) -> float:
        return self._scale * float(self._raw_table[-1])

    @property
    def conditional(self) -> PiecewiseLinearRecovery:
        """Holding-time law given that this jump happens."""
        return self._conditional

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        out = self._scale * np.interp(t, self._grid, self._raw_table)
        return out if out.ndim else float(out)

    def density(self, t):
        out = np.asarray(self.winner.density(t), dtype=float) * self._scale
        for comp in self.competitors:
            out = out * (1.0 - comp.cdf(t))
        return out if out.ndim else float(out)

    def sample_holding(self, rng: np.random.Generator) -> float:
        return float(self._conditional.ppf(rng.random()))

    def rescaled(self, factor: float) -> "CompetingClockEntry":
        """Copy with mass scaled by ``factor`` (shares the tabulation)."""
        out = object.__new__(CompetingClockEntry)
        out.winner = self.winner
        out.competitors = self.competitors
        out._grid = self._grid
        out._raw_table = self._raw_table
        out._scale = self._scale * float(factor)
        out._conditional = self._conditional
        return out

    def to_dict(self) -> dict:
        return {"mass": self.mass, "function": self._conditional.to_dict()}


@dataclass(frozen=True)
class KernelMatrix:
    """Semi-Markov kernel as a sparse map (from, to) -> entry.

    Rows must be sub-stochastic; states with no outgoing entries are
    absorbing, and a row's missing mass absorbs in place.
    """

    n_states: int
    entries: Mapping[tuple, object]
    _rows: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n_states < 1:
            raise KernelError(f"n_states must be positive, got {self.n_states}")
        entries = dict(sorted(self.entries.items()))
        for key, entry in entries.items():
            try:
                i, j = key
            except (TypeError, ValueError):
                raise KernelError(f"entry key must be a (from, to) pair, got {key!r}")
            if not (0 <= i < self.n_states and 0 <= j < self.n_states):
                raise KernelError(
                    f"entry {key} outside state range [0, {self.n_states})"
                )
            if i == j:
                raise KernelError(f"self-transition {key} not allowed")
            if not (0 < entry.mass <= 1 + ROW_MASS_TOL):
                raise KernelError(f"entry {key} mass {entry.mass} outside (0, 1]")
        object.__setattr__(self, "entries", entries)
        rows = [[] for _ in range(self.n_states)]
        for (i, j), entry in entries.items():
            rows[i].append((j, entry))
        for i, row in enumerate(rows):
            total = sum(entry.mass for _, entry in row)
            if total > 1 + ROW_MASS_TOL:
                raise KernelError(f"row {i} total mass {total} exceeds 1")
        object.__setattr__(self, "_rows", tuple(tuple(r) for r in rows))

    def row(self, i: int):
        """Outgoing (to, entry) pairs of state i, ascending by destination."""
        return self._rows[i]

    def row_mass(self, i: int) -> float:
        return sum(entry.mass for _, entry in self._rows[i])

    def cdf_matrix(self, times) -> np.ndarray:
        """Phi(t) stacked as (n_times, n_states, n_states)."""
        times = np.asarray(times, dtype=float)
        out = np.zeros((len(times), self.n_states, self.n_states))
        for (i, j), entry in self.entries.items():
            out[:, i, j] = entry.cdf(times)
        return out

    def density_matrix(self, times) -> np.ndarray:
        """Phi'(t) stacked as (n_times, n_states, n_states)."""
        times = np.asarray(times, dtype=float)
        out = np.zeros((len(times), self.n_states, self.n_states))
        for (i, j), entry in self.entries.items():
            out[:, i, j] = entry.density(times)
        return out

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "entries": [
                {"from": i, "to": j, **entry.to_dict()}
                for (i, j), entry in self.entries.items()
            ],
        }


def kernel_from_dict(d: Mapping) -> KernelMatrix:
    """Build a kernel from its serialized form; raises KernelError if invalid."""
    try:
        n_states = int(d["n_states"])
        raw_entries = d["entries"]
    except (KeyError, TypeError, ValueError) as exc:
        raise KernelError(f"kernel needs 'n_states' and 'entries': {exc}") from exc
    entries = {}
    for raw in raw_entries:
        try:
            key = (int(raw["from"]), int(raw["to"]))
            mass = float(raw["mass"])
            fn = from_dict(raw["function"])
        except KernelError:
            raise
        except Exception as exc:
            raise KernelError(f"bad kernel entry {raw!r}: {exc}") from exc
        if key in entries:
            raise KernelError(f"duplicate kernel entry for {key}")
        entries[key] = ScaledEntry(mass=mass, function=fn)
    return KernelMatrix(n_states=n_states, entries=entries)


def build_waiting_matrix(kernel: KernelMatrix, times) -> np.ndarray:
    """Diagonal W(t) with W_ii(t) = 1 - sum_j Phi_ij(t) (no jump by t)."""
    times = np.asarray(times, dtype=float)
    W = np.zeros((len(times), kernel.n_states, kernel.n_states))
    for i in range(kernel.n_states):
        survival = np.ones(len(times))
        for _, entry in kernel.row(i):
            survival = survival - entry.cdf(times)
        if survival.min() < -1e-6:
            raise KernelError(
                f"row {i} kernel mass exceeds 1 at t={times[survival.argmin()]:g}"
            )
        W[:, i, i] = survival
    return W


@dataclass(frozen=True)
class RenewalSolution:
    """Transition probabilities R_ij(t) on a uniform grid.

    ``residual`` is the worst row-sum deviation from 1 (and worst
    negative excursion) seen before rows were clamped and renormalized;
    it tracks the discretization error.
    """

    times: np.ndarray
    R: np.ndarray
    residual: float


def solve_markov_renewal(kernel: KernelMatrix, grid: TimeGrid) -> RenewalSolution:
    """Time-march the Markov-renewal equation with trapezoid quadrature.

    The tau = 0 endpoint of the convolution involves the unknown R(t_m),
    so each step solves a small linear system whose matrix is fixed and
    LU-factored once. Holding-time laws must be absolutely continuous;
    point masses in a CDF are invisible to the density-based quadrature.
    Second-order accurate in grid.dt.
    """
    S = kernel.n_states
    dt = grid.dt
    times = grid.times
    A = kernel.density_matrix(times)
    W = build_waiting_matrix(kernel, times)
    n = grid.n_points
    R = np.empty((n, S, S))
    R[0] = W[0]
    lu = lu_factor(np.eye(S) - 0.5 * dt * A[0])
    for m in range(1, n):
        rhs = W[m] + 0.5 * dt * (A[m] @ R[0])
        if m >= 2:
            rhs = rhs + dt * np.tensordot(
                A[1:m], R[m - 1 : 0 : -1], axes=([0, 2], [0, 1])
            )
        R[m] = lu_solve(lu, rhs)
    row_sums = R.sum(axis=2)
    residual = float(
        max(np.abs(row_sums - 1.0).max(), max(0.0, -R.min()))
    )
    R = np.clip(R, 0.0, None)
    sums = R.sum(axis=2, keepdims=True)
    R = R / np.where(sums > 0, sums, 1.0)
    return RenewalSolution(times=times, R=R, residual=residual)


def build_kernel_clock_reset(functions: Sequence, space) -> KernelMatrix:
    """Clock-reset kernel on the subset state space.

    After every jump all still-failed systems restart their recovery
    clocks, so from state A the next jump adds the failed system whose
    fresh clock rings first. Entries with a single failed system need no
    competition and carry the exact law; the rest are competing-clock
    entries tabulated out to where every clock has rung (1e-9 tail).
    In exact arithmetic each transient row has mass one; quadrature
    round-off above one is normalized away.
    """
    if len(functions) != space.n_systems:
        raise KernelError(
            f"got {len(functions)} functions for {space.n_systems} systems"
        )
    horizon = coverage_horizon(functions)
    entries = {}
    for i, members in enumerate(space.states):
        failed = [k for k in range(space.n_systems) if k not in members]
        if not failed:
            continue
        row = {}
        for k in failed:
            j = space.index_of(set(members) | {k})
            if len(failed) == 1:
                row[(i, j)] = ScaledEntry(mass=1.0, function=functions[k])
            else:
                row[(i, j)] = CompetingClockEntry(
                    winner=functions[k],
                    competitors=[functions[c] for c in failed if c != k],
                    horizon=horizon,
                )
        total = sum(entry.mass for entry in row.values())
        if total > 1.0:
            row = {
                key: entry.rescaled(1.0 / total)
                if isinstance(entry, CompetingClockEntry)
                else ScaledEntry(entry.mass / total, entry.function)
                for key, entry in row.items()
            }
        entries.update(row)
    return KernelMatrix(n_states=space.n_states, entries=entries)


@dataclass(frozen=True)
class SemiMarkovPath:
    """Jump times and visited states of one realization, starting at t=0."""

    jump_times: np.ndarray
    states: np.ndarray

    def state_at(self, times) -> np.ndarray:
        """State occupied at each query time (right-continuous at jumps)."""
        times = np.asarray(times, dtype=float)
        idx = np.searchsorted(self.jump_times, times, side="right") - 1
        return self.states[idx]


def simulate_semi_markov(
    kernel: KernelMatrix, initial, t_end: float, rng: np.random.Generator
) -> SemiMarkovPath:
    """Simulate one path on [0, t_end].

    ``initial`` is either a state index (start there, consuming no
    randomness) or a probability vector over states (one uniform picks the
    start). Per jump the draw order is then fixed: one uniform picks the
    destination (or absorption in place, for the missing row mass), then
    one uniform picks the holding time from the destination's conditional
    law. Absorbing rows consume no randomness.
    """
    if np.ndim(initial) == 0:
        start_state = int(initial)
        if not (0 <= start_state < kernel.n_states):
            raise KernelError(
                f"start state {start_state} outside [0, {kernel.n_states})"
            )
    else:
        probs = np.asarray(initial, dtype=float)
        if probs.shape != (kernel.n_states,):
            raise KernelError(
                f"initial vector has shape {probs.shape}, expected ({kernel.n_states},)"
            )
        if probs.min() < 0 or abs(probs.sum() - 1.0) > 1e-12:
            raise KernelError("initial vector must be a probability distribution")
        start_state = int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))
        start_state = min(start_state, kernel.n_states - 1)
    times = [0.0]
    states = [start_state]
    t = 0.0
    state = start_state
    while True:
        row = kernel.row(state)
        if not row:
            break
        masses = np.array([entry.mass for _, entry in row])
        cum = np.cumsum(masses)
        u = rng.random()
        if u >= cum[-1]:
            break
        pick = int(np.searchsorted(cum, u, side="right"))
        dest, entry = row[pick]
        t = t + entry.sample_holding(rng)
        if t > t_end:
            break
        times.append(t)
        states.append(dest)
        state = dest
    return SemiMarkovPath(np.array(times), np.array(states, dtype=np.int64))


@dataclass(frozen=True)
class TransitionEstimate:
    """Empirical R_ij(t) with binomial standard errors."""

    times: np.ndarray
    R: np.ndarray
    stderr: np.ndarray
    n_realizations: int


def estimate_R_mc(
    kernel: KernelMatrix,
    times,
    n_realizations: int,
    seed: int,
    start_states: Optional[Sequence[int]] = None,
) -> TransitionEstimate:
    """Monte Carlo estimate of R by path simulation.

    Realization r from start state i uses the child stream
    (seed, i * n_realizations + r), so estimates are reproducible per
    start state. Rows for start states not simulated are left at zero.
    """
    if n_realizations < 1:
        raise ValueError(f"need at least 1 realization, got {n_realizations}")
    times = np.asarray(times, dtype=float)
    S = kernel.n_states
    starts = range(S) if start_states is None else [int(s) for s in start_states]
    counts = np.zeros((len(times), S, S), dtype=np.int64)
    t_end = float(times[-1])
    for i in starts:
        for r in range(n_realizations):
            rng = child_rng(seed, i * n_realizations + r)
            path = simulate_semi_markov(kernel, i, t_end, rng)
            counts[np.arange(len(times)), i, path.state_at(times)] += 1
    R = counts / n_realizations
    stderr = np.sqrt(R * (1.0 - R) / n_realizations)
    return TransitionEstimate(
        times=times, R=R, stderr=stderr, n_realizations=n_realizations
    )
