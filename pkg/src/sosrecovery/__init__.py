"""Stochastic recovery modeling for interdependent systems-of-systems.

The package has three layers:

- recovery / sos: per-system recovery-time distributions, the lattice of
  joint recovery states, Monte Carlo and closed-form recovery curves.
- renewal: semi-Markov kernels (including clock-reset construction from
  marginal distributions) and a trapezoid Volterra solver for the
  state-transition matrix R(t).
- operator_net / pipeline: a from-scratch deep operator network mapping
  sampled recovery CDFs to recovery curves, plus dataset generation,
  training, evaluation, and reproducible experiment drivers.
"""

from __future__ import annotations

from .errors import ConfigError, KernelError, TrainingError
from .grids import TimeGrid
from .operator_net import (
    DeepONetParams,
    DeepONetSpec,
    OperatorDataset,
    TrainConfig,
    TrainResult,
    init_deeponet,
    load_checkpoint,
    predict_dataset,
    save_checkpoint,
    train_deeponet,
)
from .pipeline import (
    ExperimentConfig,
    SurrogateModel,
    default_config,
    evaluate,
    generate_dataset,
    load_surrogate,
    predict_recovery_path,
    run_experiment,
)
from .recovery import (
    FunctionGeneratorConfig,
    LognormalRecovery,
    PiecewiseLinearRecovery,
    RecoveryFunction,
    RecoveryFunctionSet,
    WeibullRecovery,
    from_dict,
    sample_random_function_set,
)
from .renewal import (
    CompetingClockEntry,
    KernelMatrix,
    RenewalSolution,
    ScaledEntry,
    build_kernel_clock_reset,
    estimate_R_mc,
    kernel_from_dict,
    simulate_semi_markov,
    solve_markov_renewal,
)
from .sos import (
    RecoveryCurve,
    StateSpace,
    assemble_functionality,
    build_state_space,
    equal_impact_functionality,
    estimate_recovery_curve_mc,
    exact_functionality_moments,
    exact_recovery_curve_independent,
    initial_all_failed,
    simulate_realization_clocks,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "KernelError",
    "TrainingError",
    "TimeGrid",
    "DeepONetParams",
    "DeepONetSpec",
    "OperatorDataset",
    "TrainConfig",
    "TrainResult",
    "init_deeponet",
    "load_checkpoint",
    "predict_dataset",
    "save_checkpoint",
    "train_deeponet",
    "ExperimentConfig",
    "SurrogateModel",
    "default_config",
    "evaluate",
    "generate_dataset",
    "load_surrogate",
    "predict_recovery_path",
    "run_experiment",
    "FunctionGeneratorConfig",
    "LognormalRecovery",
    "PiecewiseLinearRecovery",
    "RecoveryFunction",
    "RecoveryFunctionSet",
    "WeibullRecovery",
    "from_dict",
    "sample_random_function_set",
    "CompetingClockEntry",
    "KernelMatrix",
    "RenewalSolution",
    "ScaledEntry",
    "build_kernel_clock_reset",
    "estimate_R_mc",
    "kernel_from_dict",
    "simulate_semi_markov",
    "solve_markov_renewal",
    "RecoveryCurve",
    "StateSpace",
    "assemble_functionality",
    "build_state_space",
    "equal_impact_functionality",
    "estimate_recovery_curve_mc",
    "exact_functionality_moments",
    "exact_recovery_curve_independent",
    "initial_all_failed",
    "simulate_realization_clocks",
    "__version__",
]
