"""Lifelong-learning metrics over an accuracy matrix.

``R[i, j]`` is the accuracy on task ``j`` after training task ``i`` (0-based
here). The lower triangle is mandatory; ``R[i-1, i]`` is only needed for FWT.
Missing entries are NaN.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .layers import NetworkParams, count_params


class MetricError(ValueError):
    pass


@dataclass
class BaselineAccuracies:
    m: list[float] | None = None  # One: independent net per task
    n: list[float] | None = None  # Joint: one net on the union
    b: list[float] | None = None  # untrained init, for FWT

    def check(self, n_tasks: int) -> None:
        for name in ("m", "n", "b"):
            v = getattr(self, name)
            if v is None:
                continue
            if len(v) != n_tasks:
                raise MetricError(f"baseline {name} has {len(v)} entries, expected {n_tasks}")
            if any(not 0.0 <= x <= 1.0 for x in v):
                raise MetricError(f"baseline {name} entries must lie in [0, 1]")


def as_matrix(R) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    if R.ndim != 2 or R.shape[0] != R.shape[1] or R.shape[0] < 1:
        raise MetricError(f"accuracy matrix must be square and non-empty, got shape {R.shape}")
    finite = R[np.isfinite(R)]
    if np.any((finite < 0) | (finite > 1)):
        raise MetricError("accuracy entries must lie in [0, 1]")
    return R


def _need(R: np.ndarray, i: int, j: int, what: str) -> float:
    v = R[i, j]
    if not np.isfinite(v):
        raise MetricError(f"{what} needs R[{i}][{j}], which is missing")
    return float(v)


def _check_lower(R: np.ndarray) -> None:
    t = R.shape[0]
    for i in range(t):
        for j in range(i + 1):
            _need(R, i, j, "lower triangle")


def acc(R) -> float:
    """Mean accuracy over all tasks after the final task."""
    R = as_matrix(R)
    t = R.shape[0]
    return sum(_need(R, t - 1, j, "acc") for j in range(t)) / t


def acc_at(R, i: int) -> float:
    """Mean over tasks ``j <= i`` of ``R[i, j]``: average accuracy after training task ``i``."""
    R = as_matrix(R)
    return sum(_need(R, i, j, "acc_i") for j in range(i + 1)) / (i + 1)


def bwt(R) -> float:
    R = as_matrix(R)
    t = R.shape[0]
    if t < 2:
        raise MetricError("BWT is undefined for a single task")
    return sum(_need(R, t - 1, i, "bwt") - _need(R, i, i, "bwt") for i in range(t - 1)) / (t - 1)


def fwt(R, b) -> float:
    R = as_matrix(R)
    t = R.shape[0]
    if t < 2:
        raise MetricError("FWT is undefined for a single task")
    if b is None or len(b) != t:
        raise MetricError(f"FWT needs {t} random-init accuracies")
    return sum(_need(R, i - 1, i, "fwt") - float(b[i]) for i in range(1, t)) / (t - 1)


def af(R, baselines: BaselineAccuracies) -> float:
    """Anterograde-forgetting score against the Joint (``n``) and One (``m``) baselines.

    Mean over tasks 2..T of (ACC_i - n_i) plus mean of (R[i, i] - m_i).
    Returned as a fraction; multiply by 100 for percentage points.
    """
    R = as_matrix(R)
    t = R.shape[0]
    if t < 2:
        raise MetricError("AF is undefined for a single task")
    if baselines.m is None or baselines.n is None:
        raise MetricError("AF needs both One (m) and Joint (n) accuracies")
    baselines.check(t)
    _check_lower(R)
    joint_gap = sum(acc_at(R, i) - baselines.n[i] for i in range(1, t)) / (t - 1)
    one_gap = sum(float(R[i, i]) - baselines.m[i] for i in range(1, t)) / (t - 1)
    return joint_gap + one_gap


def iteration_time(n_samples: int, batch_size: int) -> Fraction:
    """Batches per epoch, kept exact: ``n_samples / batch_size``."""
    if batch_size < 1:
        raise MetricError("batch_size must be >= 1")
    if n_samples < 0:
        raise MetricError("sample count must be >= 0")
    return Fraction(int(n_samples), int(batch_size))


def param_report(model) -> dict[str, int]:
    """Test-time and training-time parameter counts.

    For a CMN state only the L-Net is needed at test time; training also
    holds the S-Net and its transfer connectors. A plain network counts the
    same both ways.
    """
    if isinstance(model, NetworkParams):
        n = count_params(model)
        return {"test_params": n, "training_params": n}
    test = count_params(model.l_params)
    train = test + count_params(model.s_params) + count_params(model.cells)
    return {"test_params": test, "training_params": train}


def all_metrics(R, baselines: BaselineAccuracies | None = None) -> dict[str, float | None]:
    R = as_matrix(R)
    baselines = baselines or BaselineAccuracies()
    t = R.shape[0]
    out: dict[str, float | None] = {"ACC": acc(R), "BWT": None, "FWT": None, "AF": None}
    if t >= 2:
        out["BWT"] = bwt(R)
        if baselines.b is not None and all(np.isfinite(R[i - 1, i]) for i in range(1, t)):
            out["FWT"] = fwt(R, baselines.b)
        if baselines.m is not None and baselines.n is not None:
            out["AF"] = af(R, baselines)
    return out


# ------------------------------------------------------------------ CSV I/O


def matrix_to_csv(R) -> str:
    R = as_matrix(R)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in R:
        w.writerow(["" if not np.isfinite(v) else repr(float(v)) for v in row])
    return buf.getvalue()


def read_matrix_csv(path) -> np.ndarray:
    rows = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for r, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            vals = []
            for c, cell in enumerate(row, start=1):
                cell = cell.strip()
                if cell == "":
                    vals.append(np.nan)
                    continue
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise MetricError(f"{path}: row {r}, column {c}: cannot parse {cell!r}") from None
            rows.append(vals)
    if any(len(r) != len(rows) for r in rows):
        raise MetricError(f"{path}: accuracy matrix must be square ({len(rows)} rows)")
    return as_matrix(rows)


def read_baselines_csv(path) -> BaselineAccuracies:
    """Columns named ``m``, ``n`` and/or ``b``; one row per task."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        cols: dict[str, list[float]] = {k: [] for k in ("m", "n", "b") if k in (reader.fieldnames or [])}
        if not cols:
            raise MetricError(f"{path}: expected columns m, n and/or b")
        for r, row in enumerate(reader, start=1):
            for k in cols:
                try:
                    cols[k].append(float(row[k]))
                except (TypeError, ValueError):
                    raise MetricError(f"{path}: row {r}, column {k}: cannot parse {row[k]!r}") from None
    return BaselineAccuracies(**cols)
