"""Recovery-time distributions for individual systems.

A recovery function is the CDF of the time a failed system needs to come
back online. Three families are provided: lognormal (parameterized by its
median and log-scale sigma), Weibull, and monotone piecewise-linear CDFs.
Coincident knot times in the piecewise family encode jumps, so degenerate
(deterministic) recovery times are representable.

All families expose ``cdf``, ``density``, ``ppf`` and inverse-transform
``sample``. Negative evaluation times are rejected rather than clamped.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import ConfigError


def _check_nonnegative_times(t: np.ndarray):
    if np.any(t < 0):
        raise ValueError(f"recovery functions are defined on t >= 0, got min {t.min()}")


def _check_unit_interval(u: np.ndarray):
    if np.any(u < 0) or np.any(u > 1):
        raise ValueError("quantile levels must lie in [0, 1]")


class RecoveryFunction:
    """Common interface for recovery-time distributions."""

    family: str = ""

    def cdf(self, t):
        raise NotImplementedError

    def density(self, t):
        raise NotImplementedError

    def ppf(self, u):
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size=None):
        """Draw recovery times by inverse transform of ``rng.random``."""
        return self.ppf(rng.random(size))

    def params(self) -> dict:
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"family": self.family, "params": self.params()}


@dataclass(frozen=True)
class LognormalRecovery(RecoveryFunction):
    """Lognormal recovery time with given median and log-scale sigma."""

    median: float
    sigma: float
    family = "lognormal"

    def __post_init__(self):
        if self.median <= 0:
            raise ValueError(f"median must be positive, got {self.median}")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        _check_nonnegative_times(t)
        out = np.zeros_like(t)
        pos = t > 0
        out[pos] = ndtr(np.log(t[pos] / self.median) / self.sigma)
        return out if out.ndim else float(out)

    def density(self, t):
        t = np.asarray(t, dtype=float)
        _check_nonnegative_times(t)
        out = np.zeros_like(t)
        pos = t > 0
        z = np.log(t[pos] / self.median) / self.sigma
        out[pos] = np.exp(-0.5 * z * z) / (t[pos] * self.sigma * np.sqrt(2 * np.pi))
        return out if out.ndim else float(out)

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        _check_unit_interval(u)
        with np.errstate(divide="ignore"):
            # ndtri(0) = -inf, ndtri(1) = +inf; exp maps those to 0 and inf
            out = self.median * np.exp(self.sigma * ndtri(u))
        return out if out.ndim else float(out)

    def params(self) -> dict:
        return {"median": self.median, "sigma": self.sigma}


@dataclass(frozen=True)
class WeibullRecovery(RecoveryFunction):
    """Weibull recovery time; shape 1 reduces to exponential with mean ``scale``."""

    shape: float
    scale: float
    family = "weibull"

    def __post_init__(self):
        if self.shape <= 0:
            raise ValueError(f"shape must be positive, got {self.shape}")
        if self.scale <= 0:
            raise ValueError(f"scale must be positive, got {self.scale}")

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        _check_nonnegative_times(t)
        out = -np.expm1(-((t / self.scale) ** self.shape))
        return out if out.ndim else float(out)

    def density(self, t):
        t = np.asarray(t, dtype=float)
        _check_nonnegative_times(t)
        out = np.zeros_like(t)
        pos = t > 0
        x = t[pos] / self.scale
        out[pos] = (self.shape / self.scale) * x ** (self.shape - 1) * np.exp(-(x**self.shape))
        if self.shape == 1:
            out = np.where(t == 0, 1.0 / self.scale, out)
        return out if out.ndim else float(out)

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        _check_unit_interval(u)
        out = self.scale * (-np.log1p(-u)) ** (1.0 / self.shape)
        return out if out.ndim else float(out)

    def params(self) -> dict:
        return {"shape": self.shape, "scale": self.scale}


@dataclass(frozen=True)
class PiecewiseLinearRecovery(RecoveryFunction):
    """Piecewise-linear CDF through the given (time, value) knots.

    Times and values must be nondecreasing; the first value must be 0 and
    the last 1. Two knots at the same time encode a jump, and the CDF is
    right-continuous there. ``ppf`` is the generalized inverse (leftmost
    time on flat segments), so inverse-transform sampling remains exact.
    """

    knots: tuple
    _times: np.ndarray = field(init=False, repr=False, compare=False)
    _values: np.ndarray = field(init=False, repr=False, compare=False)
    family = "piecewise_linear"

    def __post_init__(self):
        knots = tuple((float(t), float(v)) for t, v in self.knots)
        object.__setattr__(self, "knots", knots)
        if len(knots) < 2:
            raise ValueError(f"need at least 2 knots, got {len(knots)}")
        times = np.array([k[0] for k in knots])
        values = np.array([k[1] for k in knots])
        if times[0] < 0:
            raise ValueError(f"knot times must be nonnegative, got {times[0]}")
        if np.any(np.diff(times) < 0):
            raise ValueError("knot times must be nondecreasing")
        if np.any(np.diff(values) < 0):
            raise ValueError("knot values must be nondecreasing")
        if values[0] != 0.0 or values[-1] != 1.0:
            raise ValueError(
                f"knot values must run from 0 to 1, got {values[0]}..{values[-1]}"
            )
        object.__setattr__(self, "_times", times)
        object.__setattr__(self, "_values", values)

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        _check_nonnegative_times(t)
        # np.interp returns the last value at coincident knot times, which
        # is exactly right-continuity at a jump
        out = np.interp(t, self._times, self._values)
        return out if out.ndim else float(out)

    def density(self, t):
        """Slope of the segment containing ``t`` (the a.c. part of the law).

        Point masses at jumps are not part of the density; they show up
        only through ``cdf`` and ``ppf``.
        """
        t = np.asarray(t, dtype=float)
        _check_nonnegative_times(t)
        dt = np.diff(self._times)
        dv = np.diff(self._values)
        slopes = np.zeros_like(dt)
        seg = dt > 0
        slopes[seg] = dv[seg] / dt[seg]
        # side="right" lands on the segment that starts at t, skipping
        # zero-width jump segments
        idx = np.searchsorted(self._times, t, side="right") - 1
        valid = (idx >= 0) & (idx < len(slopes)) & (t >= self._times[0]) & (t < self._times[-1])
        out = np.where(valid, slopes[np.clip(idx, 0, len(slopes) - 1)], 0.0)
        return out if out.ndim else float(out)

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        _check_unit_interval(u)
        idx = np.searchsorted(self._values, u, side="left")
        idx = np.minimum(idx, len(self._values) - 1)
        lo = np.maximum(idx - 1, 0)
        t0, t1 = self._times[lo], self._times[idx]
        v0, v1 = self._values[lo], self._values[idx]
        exact = self._values[idx] == u
        with np.errstate(divide="ignore", invalid="ignore"):
            frac = np.where(v1 > v0, (u - v0) / np.where(v1 > v0, v1 - v0, 1.0), 0.0)
        out = np.where(exact, self._times[idx], t0 + frac * (t1 - t0))
        return out if out.ndim else float(out)

    def params(self) -> dict:
        return {"knots": [list(k) for k in self.knots]}


_FAMILIES = {
    "lognormal": lambda p: LognormalRecovery(median=p["median"], sigma=p["sigma"]),
    "weibull": lambda p: WeibullRecovery(shape=p["shape"], scale=p["scale"]),
    "piecewise_linear": lambda p: PiecewiseLinearRecovery(
        knots=tuple(tuple(k) for k in p["knots"])
    ),
}


def from_dict(d: Mapping) -> RecoveryFunction:
    """Rebuild a recovery function from its ``to_dict`` form."""
    try:
        family = d["family"]
        params = d["params"]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"recovery function needs 'family' and 'params': {d!r}") from exc
    extra_keys = set(d) - {"family", "params"}
    if extra_keys:
        raise ConfigError(f"unknown recovery function keys: {sorted(extra_keys)}")
    if family not in _FAMILIES:
        raise ConfigError(
            f"unknown recovery family {family!r}, expected one of {sorted(_FAMILIES)}"
        )
    try:
        fn = _FAMILIES[family](params)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad parameters for family {family!r}: {params!r}") from exc
    extra = set(params) - set(fn.params())
    if extra:
        raise ConfigError(f"unknown parameters for family {family!r}: {sorted(extra)}")
    return fn


@dataclass(frozen=True)
class RecoveryFunctionSet:
    """Ordered recovery functions, one per system; order is significant."""

    functions: tuple

    def __post_init__(self):
        functions = tuple(self.functions)
        if not functions:
            raise ValueError("a function set needs at least one system")
        object.__setattr__(self, "functions", functions)

    @property
    def n_systems(self) -> int:
        return len(self.functions)

    def __len__(self):
        return len(self.functions)

    def __iter__(self):
        return iter(self.functions)

    def __getitem__(self, k):
        return self.functions[k]

    def to_dict(self) -> dict:
        return {"functions": [fn.to_dict() for fn in self.functions]}


@dataclass(frozen=True)
class FunctionGeneratorConfig:
    """Uniform parameter ranges for drawing random recovery functions.

    Only the parametric families can be generated. The defaults give
    lognormal recovery with median in [1, 2] and sigma in [0.3, 0.6].
    With ``identical_mode`` a set draw makes one function shared by every
    system; otherwise each system draws independently.
    """

    family: str = "lognormal"
    ranges: Mapping[str, tuple] = field(
        default_factory=lambda: {"median": (1.0, 2.0), "sigma": (0.3, 0.6)}
    )
    identical_mode: bool = True

    def __post_init__(self):
        if self.family not in ("lognormal", "weibull"):
            raise ConfigError(
                f"cannot generate family {self.family!r}; use 'lognormal' or 'weibull'"
            )
        expected = {"lognormal": {"median", "sigma"}, "weibull": {"shape", "scale"}}
        if set(self.ranges) != expected[self.family]:
            raise ConfigError(
                f"family {self.family!r} needs ranges for {sorted(expected[self.family])}, "
                f"got {sorted(self.ranges)}"
            )
        for name, (lo, hi) in self.ranges.items():
            if not (0 < lo <= hi):
                raise ConfigError(f"range for {name!r} must satisfy 0 < lo <= hi, got ({lo}, {hi})")
        object.__setattr__(self, "ranges", {k: (float(a), float(b)) for k, (a, b) in self.ranges.items()})

    def sample_one(self, rng: np.random.Generator) -> RecoveryFunction:
        """Draw one function, each parameter uniform over its range.

        Parameters are drawn in sorted name order so the stream consumed
        from ``rng`` does not depend on dict insertion order.
        """
        params = {name: rng.uniform(*self.ranges[name]) for name in sorted(self.ranges)}
        return _FAMILIES[self.family](params)

    def horizon(self, epsilon: float = 1e-9) -> float:
        """Largest ppf(1 - epsilon) over the corners of the parameter box."""
        names = sorted(self.ranges)
        corners = itertools.product(*(self.ranges[n] for n in names))
        best = 0.0
        for corner in corners:
            fn = _FAMILIES[self.family](dict(zip(names, corner)))
            best = max(best, float(fn.ppf(1.0 - epsilon)))
        return best


def sample_random_function_set(
    cfg: FunctionGeneratorConfig, n_systems: int, rng: np.random.Generator
) -> RecoveryFunctionSet:
    """Draw a function set: one shared draw in identical mode, else one per system."""
    if n_systems < 1:
        raise ConfigError(f"n_systems must be >= 1, got {n_systems}")
    if cfg.identical_mode:
        fn = cfg.sample_one(rng)
        return RecoveryFunctionSet(functions=(fn,) * n_systems)
    return RecoveryFunctionSet(
        functions=tuple(cfg.sample_one(rng) for _ in range(n_systems))
    )


def coverage_horizon(functions: Sequence[RecoveryFunction], epsilon: float = 1e-9) -> float:
    """Time by which every function has recovered up to probability 1 - epsilon."""
    return max(float(fn.ppf(1.0 - epsilon)) for fn in functions)
