"""Exception types shared across the package."""

from __future__ import annotations


class ConfigError(ValueError):
    """Raised when a configuration file or parameter set is invalid."""


class KernelError(ValueError):
    """Raised when a semi-Markov kernel is structurally invalid."""


class TrainingError(RuntimeError):
    """Raised when optimization diverges (non-finite loss or parameters).

    Carries the loss history recorded up to the failure so callers can
    persist a partial training record.
    """

    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = history if history is not None else []
