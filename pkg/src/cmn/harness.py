"""Experiment orchestration and result files.

A run writes, per seed ``s``, into its output directory only:

* ``seed_s.metrics.json``: deterministic record (accuracy matrix, baselines,
  metrics, parameter counts, iteration time). Byte-identical across reruns.
* ``seed_s.record.json``: the same plus wall time and per-epoch curves.
* ``seed_s.R.csv`` and ``seed_s.baselines.csv`` for matrix-based learners.
* ``seed_s.ckpt``: final CMN state (method ``cmn`` only).

plus ``config.json``, ``curves.csv`` and ``summary.csv`` for the whole run.
Every file is written to a temporary name and renamed into place.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .baselines import joint_reference, random_init_accuracy, run_baseline, run_transfer_ablation
from .checkpoint import save_checkpoint
from .config import METRIC_NAMES, ExperimentConfig, load_config
from .metrics import BaselineAccuracies, MetricError, all_metrics, matrix_to_csv, read_baselines_csv, read_matrix_csv
from .trainer import TrainLog, run_sequence

METRIC_TOL = 1e-12


def atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _matrix_json(R: np.ndarray) -> list[list[float | None]]:
    return [[float(v) if np.isfinite(v) else None for v in row] for row in R]


def _matrix_from_json(rows) -> np.ndarray:
    return np.array([[np.nan if v is None else v for v in row] for row in rows], dtype=np.float64)


def _curve_rows(log: TrainLog, learner: str) -> list[dict]:
    return [
        {
            "learner": learner,
            "task": r.task,
            "phase": r.phase,
            "epoch": r.epoch,
            "loss": r.loss,
            "train_acc": r.train_acc,
            "eval_acc": {str(k): v for k, v in sorted(r.eval_acc.items())},
        }
        for r in log.records
    ]


def _reference_baselines(cfg: ExperimentConfig, tasks, body, run_cfg, seed: int) -> tuple[dict, BaselineAccuracies]:
    """One/Joint (for AF) and random-init (for FWT) with matched seeds."""
    ref, m, n, b = {}, None, None, None
    if "AF" in cfg.metrics and len(tasks) > 1:
        m = run_baseline("one", tasks, body, run_cfg, seed).accuracies
        n = joint_reference(tasks, body, run_cfg, seed)
        ref = {"one_acc": float(np.mean(m)), "joint_acc": n[-1]}
    if "FWT" in cfg.metrics and len(tasks) > 1:
        b = random_init_accuracy(tasks, body, run_cfg, seed)
    return ref, BaselineAccuracies(m=m, n=n, b=b)


def run_seed(cfg: ExperimentConfig, seed: int) -> tuple[dict, dict]:
    """Train one seed. Returns (deterministic metrics record, extras)."""
    tasks = cfg.build_tasks(seed)
    body = cfg.backbone.build(tasks[0].input_shape)
    run_cfg = cfg.run_config()
    start = time.perf_counter()
    rec: dict = {"name": cfg.name, "method": cfg.method, "seed": seed, "config_digest": cfg.digest()}
    extra: dict = {}
    if cfg.method in ("cmn", "finetune"):
        if cfg.method == "cmn":
            res = run_sequence(tasks, body, run_cfg, seed)
            extra["state"] = res.state
            extra["digests"] = res.digests
        else:
            res = run_baseline("finetune", tasks, body, run_cfg, seed)
        ref, baselines = _reference_baselines(cfg, tasks, body, run_cfg, seed)
        metrics = all_metrics(res.R, baselines)
        rec.update(
            R=_matrix_json(res.R),
            baselines={k: getattr(baselines, k) for k in ("m", "n", "b")},
            metrics={k: metrics[k] for k in METRIC_NAMES if k in cfg.metrics},
            reference=ref,
            params=res.params,
            iteration_time=res.iteration_time,
        )
        extra["curves"] = _curve_rows(res.log, cfg.method)
    elif cfg.method.startswith("ablation:"):
        res = run_transfer_ablation(cfg.strategy, tasks[0], tasks[1], body, run_cfg, seed, cfg.source)
        rec.update(metrics={"final_acc": res.final_acc}, curve=res.curve)
        extra["curves"] = _curve_rows(res.log, cfg.method)
    else:
        res = run_baseline(cfg.method, tasks, body, run_cfg, seed)
        rec.update(
            accuracies=res.accuracies,
            metrics={"ACC": float(np.mean(res.accuracies))},
            params=res.params,
            iteration_time=res.iteration_time,
        )
        extra["curves"] = _curve_rows(res.log, cfg.method)
    extra["wall_time"] = time.perf_counter() - start
    return rec, extra


def run_experiment(
    config,
    out: str | os.PathLike | None = None,
    threads: int = 1,
    seed: int | None = None,
    epochs: int | None = None,
) -> list[dict]:
    """Run every seed of ``config`` (a path or an ExperimentConfig) and write the results."""
    cfg = load_config(config) if not isinstance(config, ExperimentConfig) else config
    cfg = cfg.with_overrides(seed=seed, epochs=epochs)
    out_dir = cfg.resolve_output(None if out is None else str(out))
    out_dir.mkdir(parents=True, exist_ok=True)
    # build every task sequence up front so data errors surface before training
    for s in cfg.seeds:
        cfg.build_tasks(s)
    if threads > 1 and len(cfg.seeds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda s: run_seed(cfg, s), cfg.seeds))
    else:
        results = [run_seed(cfg, s) for s in cfg.seeds]
    atomic_write(out_dir / "config.json", _dumps(cfg.to_dict()))
    for rec, extra in results:
        stem = f"seed_{rec['seed']}"
        atomic_write(out_dir / f"{stem}.metrics.json", _dumps(rec))
        full = dict(rec, wall_time=extra["wall_time"], curves=extra["curves"])
        if "digests" in extra:
            full["freeze_digests"] = extra["digests"]
        atomic_write(out_dir / f"{stem}.record.json", _dumps(full))
        if "R" in rec:
            atomic_write(out_dir / f"{stem}.R.csv", matrix_to_csv(_matrix_from_json(rec["R"])))
            if any(rec["baselines"][k] is not None for k in ("m", "n", "b")):
                atomic_write(out_dir / f"{stem}.baselines.csv", baselines_to_csv(rec["baselines"]))
        if "state" in extra:
            save_checkpoint(extra["state"], out_dir / f"{stem}.ckpt", rec["config_digest"])
    emit_curves(out_dir)
    return [rec for rec, _ in results]


def baselines_to_csv(baselines: dict) -> str:
    cols = [k for k in ("m", "n", "b") if baselines.get(k) is not None]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for row in zip(*(baselines[k] for k in cols)):
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


# ----------------------------------------------------------------- metrics


def _metric_records(results_dir: Path) -> list[Path]:
    paths = sorted(results_dir.glob("seed_*.metrics.json"), key=lambda p: int(p.name.split(".")[0][5:]))
    if not paths:
        raise MetricError(f"{results_dir}: no seed_*.metrics.json records")
    return paths


def compute_metrics(source, baselines=None, requested: tuple[str, ...] | None = None) -> dict:
    """Re-derive metrics from stored matrices.

    ``source`` is a results directory (every record is recomputed and must
    match its stored metrics to 1e-12) or an accuracy-matrix CSV, optionally
    with a baselines CSV (columns ``m``, ``n``, ``b``). Metrics named in
    ``requested`` must be computable or a MetricError is raised.
    """
    source = Path(source)
    if source.is_dir():
        out = {}
        for path in _metric_records(source):
            rec = json.loads(path.read_text(encoding="utf-8"))
            if "R" not in rec:
                out[f"seed_{rec['seed']}"] = rec["metrics"]
                continue
            b = BaselineAccuracies(**rec["baselines"])
            fresh = _select(all_metrics(_matrix_from_json(rec["R"]), b), tuple(rec["metrics"]))
            for k, v in rec["metrics"].items():
                if (v is None) != (fresh[k] is None) or (v is not None and abs(v - fresh[k]) > METRIC_TOL):
                    raise MetricError(f"{path.name}: stored {k}={v} but recomputed {fresh[k]}")
            out[f"seed_{rec['seed']}"] = fresh
        return out
    R = read_matrix_csv(source)
    b = read_baselines_csv(baselines) if baselines is not None else BaselineAccuracies()
    b.check(R.shape[0])
    want = requested or ("ACC", "BWT") + tuple(
        k for k, ok in (("FWT", b.b is not None), ("AF", b.m is not None and b.n is not None)) if ok
    )
    return _select(all_metrics(R, b), want, strict=True)


def _select(metrics: dict, want: tuple[str, ...], strict: bool = False) -> dict:
    unknown = [k for k in want if k not in METRIC_NAMES]
    if unknown:
        raise MetricError(f"unknown metrics {unknown}; expected some of {list(METRIC_NAMES)}")
    if strict:
        missing = [k for k in want if metrics[k] is None]
        if missing:
            need = {"FWT": "random-init accuracies (b)", "AF": "One (m) and Joint (n) accuracies", "BWT": "two tasks"}
            raise MetricError("; ".join(f"{k} needs {need.get(k, 'more data')}" for k in missing))
    return {k: metrics[k] for k in want}


# ------------------------------------------------------------------ curves

CURVE_COLUMNS = ("seed", "learner", "task", "phase", "epoch", "loss", "train_acc")
SUMMARY_METRICS = ("ACC", "BWT", "FWT", "AF", "final_acc")


def _fmt(v) -> str:
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def mean_std(values: list[float]) -> str:
    """Percent-scaled ``mean ± std`` with two decimals (sample std; 0 for one seed)."""
    arr = 100.0 * np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
    return f"{arr.mean():.2f} ± {std:.2f}"


def emit_curves(results_dir) -> tuple[Path, Path]:
    """Write ``curves.csv`` (one row per seed and epoch) and ``summary.csv`` (Table-1 style)."""
    results_dir = Path(results_dir)
    if not results_dir.is_dir():
        raise MetricError(f"{results_dir}: not a results directory")
    paths = sorted(results_dir.glob("seed_*.record.json"), key=lambda p: int(p.name.split(".")[0][5:]))
    if not paths:
        raise MetricError(f"{results_dir}: no results to summarise")
    records = [json.loads(p.read_text(encoding="utf-8")) for p in paths]
    n_eval = 1 + max((int(k) for r in records for c in r["curves"] for k in c["eval_acc"]), default=-1)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(CURVE_COLUMNS) + [f"acc_task{j}" for j in range(n_eval)])
    for r in records:
        for c in r["curves"]:
            row = [r["seed"], c["learner"], c["task"], c["phase"], c["epoch"], _fmt(c["loss"]), _fmt(c["train_acc"])]
            row += [_fmt(c["eval_acc"].get(str(j))) for j in range(n_eval)]
            w.writerow(row)
    curves = results_dir / "curves.csv"
    atomic_write(curves, buf.getvalue())

    method = records[0]["method"]
    n_tasks = len(records[0].get("R") or records[0].get("accuracies") or [0, 0])
    rows = {method: {k: [r["metrics"][k] for r in records if r["metrics"].get(k) is not None] for k in SUMMARY_METRICS}}
    for ref, key in (("one", "one_acc"), ("joint", "joint_acc")):
        vals = [r["reference"][key] for r in records if key in r.get("reference", {})]
        if vals:
            rows[ref] = {"ACC": vals}
    present = [k for k in SUMMARY_METRICS if any(v.get(k) for v in rows.values())]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "tasks", "seeds"] + present)
    for name, vals in rows.items():
        w.writerow([name, n_tasks, len(records)] + [mean_std(vals[k]) if vals.get(k) else "" for k in present])
    summary = results_dir / "summary.csv"
    atomic_write(summary, buf.getvalue())
    return curves, summary
