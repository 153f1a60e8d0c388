"""System-of-systems state space, functionality, and Monte Carlo estimation.

The state of a system-of-systems with n constituent systems is the subset
of systems currently recovered. States are ordered by cardinality and then
lexicographically, so index 0 is the all-failed state and the last index is
full recovery. Functionality assigns each state a value in [0, 1]; under
the equal-impact rule a state's functionality is its cardinality over n.

Under independent repairs each system draws a single recovery clock at
time zero, and the process state at time t is the set of systems whose
clock has rung. ``estimate_recovery_curve_mc`` estimates the expected
functionality curve this way; ``exact_recovery_curve_independent``
enumerates states for the exact answer.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .seeding import child_rng

MAX_SYSTEMS = 20


@dataclass(frozen=True)
class StateSpace:
    """All subsets of ``n_systems`` systems, ordered by (cardinality, lex)."""

    n_systems: int
    states: tuple = field(init=False, repr=False, compare=False)
    index_by_mask: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (1 <= self.n_systems <= MAX_SYSTEMS):
            raise ValueError(
                f"n_systems must be in [1, {MAX_SYSTEMS}], got {self.n_systems}"
            )
        states = []
        for k in range(self.n_systems + 1):
            states.extend(itertools.combinations(range(self.n_systems), k))
        object.__setattr__(self, "states", tuple(states))
        index_by_mask = np.empty(2**self.n_systems, dtype=np.int64)
        for idx, members in enumerate(states):
            mask = 0
            for m in members:
                mask |= 1 << m
            index_by_mask[mask] = idx
        object.__setattr__(self, "index_by_mask", index_by_mask)

    @property
    def n_states(self) -> int:
        return len(self.states)

    def index_of(self, members) -> int:
        mask = 0
        for m in members:
            mask |= 1 << int(m)
        return int(self.index_by_mask[mask])


def build_state_space(n_systems: int) -> StateSpace:
    return StateSpace(n_systems)


def equal_impact_functionality(space: StateSpace) -> np.ndarray:
    """Functionality vector F with F[state] = |state| / n_systems."""
    return np.array(
        [len(members) / space.n_systems for members in space.states]
    )


def initial_all_failed(space: StateSpace) -> np.ndarray:
    """Initial state distribution concentrated on the all-failed state."""
    weights = np.zeros(space.n_states)
    weights[0] = 1.0
    return weights


@dataclass(frozen=True)
class RecoveryCurve:
    """Expected functionality sampled on a time grid."""

    times: np.ndarray
    values: np.ndarray
    stderr: Optional[np.ndarray] = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if times.shape != values.shape:
            raise ValueError(
                f"times and values must match, got {times.shape} vs {values.shape}"
            )
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        if self.stderr is not None:
            stderr = np.asarray(self.stderr, dtype=float)
            if stderr.shape != times.shape:
                raise ValueError("stderr must match times shape")
            object.__setattr__(self, "stderr", stderr)


@dataclass(frozen=True)
class RealizationTrajectory:
    """One realization of the competing recovery clocks.

    ``recovery_times[k]`` is system k's clock. Events are the same times
    sorted ascending with ties broken by ascending system index.
    """

    recovery_times: np.ndarray
    event_times: np.ndarray = field(init=False, repr=False, compare=False)
    event_systems: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        times = np.asarray(self.recovery_times, dtype=float)
        object.__setattr__(self, "recovery_times", times)
        order = np.argsort(times, kind="stable")
        object.__setattr__(self, "event_systems", order)
        object.__setattr__(self, "event_times", times[order])


def simulate_realization_clocks(
    functions: Sequence, rng: np.random.Generator
) -> RealizationTrajectory:
    """Draw one clock per system (in system order) and sort the events."""
    u = rng.random(len(functions))
    times = np.array([fn.ppf(u[k]) for k, fn in enumerate(functions)])
    return RealizationTrajectory(times)


def functionality_of_trajectory(
    traj: RealizationTrajectory,
    space: StateSpace,
    functionality: np.ndarray,
    times,
) -> np.ndarray:
    """Evaluate the (right-continuous) functionality step path at ``times``."""
    times = np.asarray(times, dtype=float)
    masks = np.zeros(len(traj.event_systems) + 1, dtype=np.int64)
    mask = 0
    for e, sys_idx in enumerate(traj.event_systems):
        mask |= 1 << int(sys_idx)
        masks[e + 1] = mask
    n_events = np.searchsorted(traj.event_times, times, side="right")
    return functionality[space.index_by_mask[masks[n_events]]]


def estimate_recovery_curve_mc(
    functions: Sequence,
    space: StateSpace,
    functionality: np.ndarray,
    times,
    n_realizations: int,
    seed: int,
    initial: Optional[np.ndarray] = None,
    chunk_size: int = 4096,
) -> RecoveryCurve:
    """Monte Carlo estimate of the expected functionality curve.

    Realization i draws its clocks from the child stream (seed, i), so the
    estimate is independent of ``chunk_size`` and any prefix of the
    realizations is reproducible on its own. The competing-clocks model
    starts every realization all-failed; any other initial distribution is
    rejected. With a single realization the curve is that realization's
    step path and stderr is reported as zero.
    """
    if len(functions) != space.n_systems:
        raise ValueError(
            f"got {len(functions)} functions for {space.n_systems} systems"
        )
    if initial is not None:
        expected = initial_all_failed(space)
        if np.asarray(initial, dtype=float).shape != expected.shape or not np.array_equal(
            np.asarray(initial, dtype=float), expected
        ):
            raise ValueError(
                "competing-clocks estimation supports only the all-failed "
                "initial state (all mass on state 0)"
            )
    if n_realizations < 1:
        raise ValueError(f"need at least 1 realization, got {n_realizations}")
    times = np.asarray(times, dtype=float)
    n = space.n_systems
    powers = (1 << np.arange(n)).astype(np.int64)
    total = np.zeros(len(times))
    total_sq = np.zeros(len(times))
    for start in range(0, n_realizations, chunk_size):
        stop = min(start + chunk_size, n_realizations)
        u = np.empty((stop - start, n))
        for i in range(start, stop):
            u[i - start] = child_rng(seed, i).random(n)
        clocks = np.column_stack([fn.ppf(u[:, k]) for k, fn in enumerate(functions)])
        recovered = clocks[:, None, :] <= times[None, :, None]
        state_masks = recovered @ powers
        vals = functionality[space.index_by_mask[state_masks]]
        total += vals.sum(axis=0)
        total_sq += (vals * vals).sum(axis=0)
    mean = total / n_realizations
    if n_realizations > 1:
        # unbiased sample variance, clipped against tiny negative round-off
        var = np.maximum(
            (total_sq - n_realizations * mean**2) / (n_realizations - 1), 0.0
        )
        stderr = np.sqrt(var / n_realizations)
    else:
        stderr = np.zeros_like(mean)
    return RecoveryCurve(times, mean, stderr)


def _state_probabilities(phi: np.ndarray, space: StateSpace) -> np.ndarray:
    """P(state at each time) for independent clocks. phi is (n_times, n)."""
    n_times = phi.shape[0]
    probs = np.empty((n_times, space.n_states))
    for s, members in enumerate(space.states):
        inside = np.zeros(space.n_systems, dtype=bool)
        inside[list(members)] = True
        p = np.ones(n_times)
        if inside.any():
            p = p * np.prod(phi[:, inside], axis=1)
        if (~inside).any():
            p = p * np.prod(1.0 - phi[:, ~inside], axis=1)
        probs[:, s] = p
    return probs


def exact_recovery_curve_independent(
    functions: Sequence,
    space: StateSpace,
    functionality: np.ndarray,
    times,
) -> RecoveryCurve:
    """Exact expected functionality by state enumeration (independent clocks)."""
    times = np.asarray(times, dtype=float)
    phi = np.column_stack([fn.cdf(times) for fn in functions])
    probs = _state_probabilities(phi, space)
    return RecoveryCurve(times, probs @ functionality)


def exact_functionality_moments(
    functions: Sequence,
    space: StateSpace,
    functionality: np.ndarray,
    times,
):
    """Exact mean and variance of the functionality at each time."""
    times = np.asarray(times, dtype=float)
    phi = np.column_stack([fn.cdf(times) for fn in functions])
    probs = _state_probabilities(phi, space)
    mean = probs @ functionality
    second = probs @ (functionality**2)
    var = np.maximum(second - mean**2, 0.0)
    return mean, var


def assemble_functionality(R, functionality, initial=None):
    """Expected functionality from state-occupancy probabilities.

    ``R`` may be (n_times, n_states) row distributions, or a full
    (n_times, n_states, n_states) transition-probability stack in which
    case ``initial`` weights the starting states (defaults to all mass on
    state 0).
    """
    R = np.asarray(R, dtype=float)
    functionality = np.asarray(functionality, dtype=float)
    if R.ndim == 2:
        return R @ functionality
    if R.ndim == 3:
        if initial is None:
            initial = np.zeros(R.shape[1])
            initial[0] = 1.0
        return np.einsum("i,tij,j->t", np.asarray(initial, dtype=float), R, functionality)
    raise ValueError(f"R must be 2-d or 3-d, got shape {R.shape}")
