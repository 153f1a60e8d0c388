"""Deterministic CSV and JSON artifact readers and writers.

Floats are formatted with repr (shortest round-trip form) and files are
written with fixed newline handling, so identical inputs always produce
byte-identical artifacts. No writer emits timestamps.
"""

from __future__ import annotations

import json
import os
from typing import Sequence

import numpy as np

from .sos import RecoveryCurve


def format_float(x) -> str:
    return repr(float(x))


def write_csv(path, header: Sequence[str], rows):
    """Write rows of numbers; floats via repr, ints as plain digits."""
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(
                ",".join(
                    str(int(c)) if isinstance(c, (int, np.integer)) else format_float(c)
                    for c in row
                )
                + "\n"
            )


def read_csv(path, skip_header: bool = True) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1 if skip_header else 0, ndmin=2)
    return data


def write_curve_csv(path, curve: RecoveryCurve):
    """Columns time, value, stderr (stderr 0 for exact curves)."""
    stderr = curve.stderr if curve.stderr is not None else np.zeros_like(curve.values)
    write_csv(path, ("time", "value", "stderr"), zip(curve.times, curve.values, stderr))


def read_curve_csv(path) -> RecoveryCurve:
    data = read_csv(path)
    if data.shape[1] != 3:
        raise ValueError(f"curve CSV must have 3 columns, got {data.shape[1]}")
    return RecoveryCurve(times=data[:, 0], values=data[:, 1], stderr=data[:, 2])


def write_matrix_csv(path, matrix: np.ndarray):
    """One square matrix, no header (shape carried by the manifest)."""
    matrix = np.asarray(matrix, dtype=float)
    with open(path, "w", newline="\n") as fh:
        for row in matrix:
            fh.write(",".join(format_float(c) for c in row) + "\n")


def read_matrix_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)


def write_loss_history_csv(path, history: np.ndarray):
    """Columns iteration, train_loss, test_loss (nan when absent)."""
    rows = ((int(it), tr, te) for it, tr, te in np.asarray(history, dtype=float))
    write_csv(path, ("iteration", "train_loss", "test_loss"), rows)


def write_scatter_csv(path, exact: np.ndarray, predicted: np.ndarray):
    write_csv(path, ("exact", "predicted"), zip(np.ravel(exact), np.ravel(predicted)))


def write_json(path, doc):
    with open(path, "w", newline="\n") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
