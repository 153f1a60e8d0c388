"""Command-line entry point.

Subcommands: simulate (Monte Carlo recovery curves), solve (Markov-renewal
transition probabilities), gen-data / train / eval (surrogate workflow in
stages), and reproduce (a full reference experiment end to end).

Configs are TOML; produced artifacts are CSV and JSON. Every command
validates its config completely before creating any output, and exit codes
are stable: 0 success, 1 runtime failure (including invalid kernel
content), 2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

import numpy as np

from . import dataio, pipeline
from .errors import ConfigError, KernelError, TrainingError
from .grids import TimeGrid
from .operator_net import init_deeponet, load_checkpoint, save_checkpoint, train_deeponet
from .recovery import RecoveryFunctionSet, from_dict as function_from_dict
from .renewal import (
    KernelMatrix,
    build_kernel_clock_reset,
    kernel_from_dict,
    solve_markov_renewal,
)
from .seeding import child_rng
from .sos import (
    MAX_SYSTEMS,
    RecoveryCurve,
    assemble_functionality,
    build_state_space,
    equal_impact_functionality,
    estimate_recovery_curve_mc,
    exact_recovery_curve_independent,
)


def _load_toml(path: str) -> dict:
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc


def _parse_grid(doc) -> TimeGrid:
    if not isinstance(doc, dict):
        raise ConfigError("grid section must be a table with t_end and n_points or dt")
    doc = dict(doc)
    try:
        t_end = float(doc.pop("t_end"))
    except KeyError:
        raise ConfigError("grid needs t_end")
    n_points = doc.pop("n_points", None)
    dt = doc.pop("dt", None)
    if doc:
        raise ConfigError(f"unknown grid keys: {sorted(doc)}")
    if n_points is not None and dt is not None:
        raise ConfigError("give either grid.n_points or grid.dt, not both")
    try:
        if dt is not None:
            return TimeGrid.with_step(t_end, float(dt))
        # default step t_end/500
        return TimeGrid(t_end, int(n_points) if n_points is not None else 501)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _parse_systems(doc) -> RecoveryFunctionSet:
    systems = doc.pop("systems", None)
    if not systems:
        raise ConfigError("config needs at least one [[systems]] entry")
    if len(systems) > MAX_SYSTEMS:
        raise ConfigError(f"at most {MAX_SYSTEMS} systems supported, got {len(systems)}")
    return RecoveryFunctionSet(
        functions=tuple(function_from_dict(entry) for entry in systems)
    )


@dataclass(frozen=True)
class SimulateConfig:
    functions: RecoveryFunctionSet
    grid: TimeGrid
    n_realizations: int
    seed: int
    exact: bool


def _parse_simulate_config(doc: dict, seed_override: Optional[int]) -> SimulateConfig:
    doc = dict(doc)
    functions = _parse_systems(doc)
    grid = _parse_grid(doc.pop("grid", None))
    n_realizations = int(doc.pop("n_realizations", 10000))
    seed = int(doc.pop("seed", 0)) if seed_override is None else seed_override
    doc.pop("seed", None)
    exact = bool(doc.pop("exact", False))
    if doc:
        raise ConfigError(f"unknown simulate config keys: {sorted(doc)}")
    if n_realizations < 1:
        raise ConfigError(f"n_realizations must be >= 1, got {n_realizations}")
    return SimulateConfig(functions, grid, n_realizations, seed, exact)


def cmd_simulate(args) -> int:
    cfg = _parse_simulate_config(_load_toml(args.config), args.seed)
    space = build_state_space(cfg.functions.n_systems)
    functionality = equal_impact_functionality(space)
    dataio.ensure_dir(args.out)
    curve = estimate_recovery_curve_mc(
        cfg.functions, space, functionality, cfg.grid.times, cfg.n_realizations, cfg.seed
    )
    dataio.write_curve_csv(os.path.join(args.out, "curve.csv"), curve)
    files = ["curve.csv"]
    if cfg.exact:
        exact = exact_recovery_curve_independent(
            cfg.functions, space, functionality, cfg.grid.times
        )
        dataio.write_curve_csv(os.path.join(args.out, "exact.csv"), exact)
        files.append("exact.csv")
    dataio.write_json(
        os.path.join(args.out, "manifest.json"),
        {
            "command": "simulate",
            "n_systems": cfg.functions.n_systems,
            "n_realizations": cfg.n_realizations,
            "seed": cfg.seed,
            "grid": {"t_end": cfg.grid.t_end, "n_points": cfg.grid.n_points},
            "systems": [fn.to_dict() for fn in cfg.functions],
            "files": files,
        },
    )
    if not args.quiet:
        print(f"simulated {cfg.n_realizations} realizations of "
              f"{cfg.functions.n_systems} systems -> {args.out}/curve.csv")
        print(f"final expected functionality: {curve.values[-1]:.4f}")
    return 0


@dataclass(frozen=True)
class SolveConfig:
    kernel: KernelMatrix
    grid: TimeGrid
    export_times: tuple
    functionality: Optional[np.ndarray]
    initial: np.ndarray


def _load_kernel_file(path: str) -> KernelMatrix:
    if not os.path.isfile(path):
        raise ConfigError(f"kernel file not found: {path}")
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise KernelError(f"kernel file {path} is not valid JSON: {exc}") from exc
    return kernel_from_dict(doc)


def _parse_solve_config(doc: dict, config_dir: str) -> SolveConfig:
    doc = dict(doc)
    kernel_file = doc.pop("kernel_file", None)
    functionality = doc.pop("functionality", None)
    if kernel_file is not None:
        if "systems" in doc:
            raise ConfigError("give either kernel_file or [[systems]], not both")
        path = kernel_file
        if not os.path.isabs(path):
            path = os.path.join(config_dir, path)
        kernel = _load_kernel_file(path)
    else:
        functions = _parse_systems(doc)
        space = build_state_space(functions.n_systems)
        kernel = build_kernel_clock_reset(functions, space)
        if functionality is None:
            functionality = equal_impact_functionality(space)
    grid = _parse_grid(doc.pop("grid", None))
    export_times = doc.pop("export_times", [grid.t_end])
    initial = doc.pop("initial", None)
    if doc:
        raise ConfigError(f"unknown solve config keys: {sorted(doc)}")
    export_times = tuple(float(t) for t in export_times)
    for t in export_times:
        if not (0 <= t <= grid.t_end):
            raise ConfigError(f"export time {t} outside [0, {grid.t_end}]")
    if functionality is not None:
        functionality = np.asarray(functionality, dtype=float)
        if functionality.shape != (kernel.n_states,):
            raise ConfigError(
                f"functionality needs {kernel.n_states} entries, got {functionality.shape}"
            )
    if initial is None:
        initial_vec = np.zeros(kernel.n_states)
        initial_vec[0] = 1.0
    else:
        initial_vec = np.asarray(initial, dtype=float)
        if initial_vec.shape != (kernel.n_states,):
            raise ConfigError(
                f"initial needs {kernel.n_states} entries, got {initial_vec.shape}"
            )
        if initial_vec.min() < 0 or abs(initial_vec.sum() - 1.0) > 1e-9:
            raise ConfigError("initial must be a probability vector")
    return SolveConfig(kernel, grid, export_times, functionality, initial_vec)


def cmd_solve(args) -> int:
    config_dir = os.path.dirname(os.path.abspath(args.config))
    cfg = _parse_solve_config(_load_toml(args.config), config_dir)
    solution = solve_markov_renewal(cfg.kernel, cfg.grid)
    dataio.ensure_dir(args.out)
    slices = []
    for k, t in enumerate(cfg.export_times):
        idx = int(np.argmin(np.abs(solution.times - t)))
        name = f"R_{k:04d}.csv"
        dataio.write_matrix_csv(os.path.join(args.out, name), solution.R[idx])
        slices.append(
            {"requested_time": t, "grid_time": float(solution.times[idx]), "file": name}
        )
    curve_file = None
    if cfg.functionality is not None:
        values = assemble_functionality(solution.R, cfg.functionality, cfg.initial)
        dataio.write_curve_csv(
            os.path.join(args.out, "curve.csv"),
            RecoveryCurve(times=solution.times, values=values),
        )
        curve_file = "curve.csv"
    dataio.write_json(
        os.path.join(args.out, "manifest.json"),
        {
            "command": "solve",
            "n_states": cfg.kernel.n_states,
            "grid": {"t_end": cfg.grid.t_end, "n_points": cfg.grid.n_points},
            "residual": solution.residual,
            "slices": slices,
            "curve_file": curve_file,
        },
    )
    if not args.quiet:
        print(f"solved {cfg.kernel.n_states}-state renewal equation on "
              f"[0, {cfg.grid.t_end:g}] ({cfg.grid.n_points} points), "
              f"row-sum residual {solution.residual:.2e}")
    return 0


def _experiment_config(args) -> pipeline.ExperimentConfig:
    doc = _load_toml(args.config)
    if args.seed is not None:
        doc["seed"] = args.seed
    return pipeline.experiment_config_from_dict(doc)


def cmd_gen_data(args) -> int:
    cfg = _experiment_config(args)
    train = pipeline.generate_dataset(cfg, "train")
    test = pipeline.generate_dataset(cfg, "test")
    pipeline.write_dataset_dir(args.out, cfg, train, test)
    if not args.quiet:
        print(f"wrote {cfg.n_train} train / {cfg.n_test} test samples -> {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _experiment_config(args)
    train_data = pipeline.generate_dataset(cfg, "train")
    test_data = pipeline.generate_dataset(cfg, "test")
    spec = cfg.network.spec(
        branch_input_dim=cfg.n_systems * cfg.n_sensors, time_scale=cfg.horizon
    )
    params0 = init_deeponet(spec, child_rng(cfg.seed, pipeline.ROLE_INIT))
    dataio.ensure_dir(args.out)
    try:
        result = train_deeponet(
            spec, params0, train_data.dataset, cfg.network.train_config(),
            test=test_data.dataset,
        )
    except TrainingError as err:
        history = np.array(err.history) if err.history else np.zeros((0, 3))
        dataio.write_loss_history_csv(os.path.join(args.out, "loss_history.csv"), history)
        raise
    save_checkpoint(os.path.join(args.out, "checkpoint.json"), spec, result.params)
    dataio.write_loss_history_csv(
        os.path.join(args.out, "loss_history.csv"), result.history
    )
    if not args.quiet:
        print(f"trained {cfg.network.n_iterations} iterations, "
              f"final train loss {result.final_train_loss:.3e} -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _experiment_config(args)
    checkpoint = os.path.join(args.out, "checkpoint.json")
    if not os.path.isfile(checkpoint):
        raise ConfigError(f"checkpoint not found: {checkpoint} (run train first)")
    spec, params = load_checkpoint(checkpoint)
    expected_dim = cfg.n_systems * cfg.n_sensors
    if spec.branch_input_dim != expected_dim:
        raise ConfigError(
            f"checkpoint expects branch inputs of size {spec.branch_input_dim}, "
            f"config implies {expected_dim}"
        )
    test_data = pipeline.generate_dataset(cfg, "test")
    report = pipeline.evaluate(spec, params, test_data.dataset)
    threshold = (
        pipeline.R2_THRESHOLD_IDENTICAL
        if cfg.mode == "identical"
        else pipeline.R2_THRESHOLD_DISPARATE
    )
    dataio.write_scatter_csv(
        os.path.join(args.out, "scatter.csv"), test_data.dataset.targets, report.predictions
    )
    curves_dir = dataio.ensure_dir(os.path.join(args.out, "curves"))
    ds = test_data.dataset
    for i in range(ds.n_samples):
        sample_times = ds.times if ds.shared_grid else ds.times[i]
        dataio.write_csv(
            os.path.join(curves_dir, f"sample_{i:04d}.csv"),
            ("time", "reference", "predicted"),
            zip(sample_times, ds.targets[i], report.predictions[i]),
        )
    dataio.write_json(
        os.path.join(args.out, "report.json"),
        {
            "mode": cfg.mode,
            "seed": cfg.seed,
            "status": "ok",
            "n_test": cfg.n_test,
            "mse": report.mse,
            "r2": report.r2,
            "r2_threshold": threshold,
            "r2_passed": bool(report.r2 >= threshold),
            "path_max_abs_error": report.path_max_abs_error,
            "path_error_threshold": pipeline.PATH_MAX_ABS_ERROR,
        },
    )
    if not args.quiet:
        print(f"test R^2 {report.r2:.4f}, MSE {report.mse:.3e} -> {args.out}/report.json")
    return 0


def cmd_reproduce(args) -> int:
    if args.config is not None:
        cfg = _experiment_config(args)
        if cfg.mode != args.mode:
            raise ConfigError(
                f"config mode {cfg.mode!r} does not match requested {args.mode!r}"
            )
    else:
        cfg = pipeline.default_config(args.mode, seed=args.seed if args.seed is not None else 0)
    result = pipeline.run_experiment(cfg, out_dir=args.out)
    history = result.train_result.history
    if not args.quiet:
        print(f"experiment: {cfg.mode} ({cfg.n_train} train / {cfg.n_test} test, "
              f"seed {cfg.seed})")
        print(f"  final train loss: {history[-1, 1]:.3e}")
        print(f"  final test loss:  {history[-1, 2]:.3e}")
        print(f"  test R^2:         {result.report.r2:.4f} "
              f"(threshold {result.r2_threshold})")
        print(f"  max path error:   {result.report.path_max_abs_error:.4f}")
        print(f"  artifacts in {args.out}")
    return 0


def _add_common(sp, config_required: bool = True):
    sp.add_argument("--config", required=config_required,
                    help="TOML config file" + ("" if config_required else " (optional)"))
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--seed", type=int, default=None,
                    help="override the config seed")
    sp.add_argument("--threads", type=int, default=None,
                    help="cap worker count (results are identical at any value)")
    sp.add_argument("--quiet", action="store_true", help="suppress progress output")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sosrecovery",
        description="Stochastic recovery simulation and operator surrogates "
                    "for systems-of-systems.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="Monte Carlo recovery curve")
    _add_common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("solve", help="solve the Markov-renewal equation")
    _add_common(sp)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("gen-data", help="generate surrogate training data")
    _add_common(sp)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train", help="train the surrogate network")
    _add_common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a trained surrogate")
    _add_common(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("reproduce", help="run a reference experiment end to end")
    sp.add_argument("mode", choices=("identical", "disparate"),
                    help="which reference experiment to run")
    _add_common(sp, config_required=False)
    sp.set_defaults(func=cmd_reproduce)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None and args.threads < 1:
        print(f"error: --threads must be >= 1, got {args.threads}", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (KernelError, TrainingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
