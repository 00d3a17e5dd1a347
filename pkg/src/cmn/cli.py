"""Command-line entry point.

Exit codes are a stable contract: 0 success, 2 configuration or input error,
3 numerical divergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import OUTPUT_ROOT_ENV, ConfigError, load_config
from .harness import compute_metrics, emit_curves, run_experiment
from .metrics import MetricError
from .model import long_logits, predict_from_logits
from .tasks import DataError
from .tensor import Tensor
from .trainer import DivergenceError, run_sequence

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def cmd_run(args) -> int:
    records = run_experiment(args.config, out=args.out, threads=args.threads, seed=args.seed, epochs=args.epochs)
    for rec in records:
        shown = {k: (None if v is None else round(v, 4)) for k, v in rec["metrics"].items()}
        print(f"seed {rec['seed']}: {json.dumps(shown)}")
    return EXIT_OK


def cmd_metrics(args) -> int:
    requested = tuple(args.require.split(",")) if args.require else None
    print(json.dumps(compute_metrics(args.source, args.baselines, requested), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_curves(args) -> int:
    for path in emit_curves(args.results_dir):
        print(path)
    return EXIT_OK


def cmd_checkpoint_save(args) -> int:
    cfg = load_config(args.config).with_overrides(seed=args.seed, epochs=args.epochs)
    if cfg.method != "cmn":
        raise ConfigError("method", "checkpoints are written for method 'cmn' only")
    seed = cfg.seeds[0]
    tasks = cfg.build_tasks(seed)
    res = run_sequence(tasks, cfg.backbone.build(tasks[0].input_shape), cfg.run_config(), seed)
    print(save_checkpoint(res.state, args.path, cfg.digest()))
    return EXIT_OK


def cmd_checkpoint_load(args) -> int:
    state, manifest = load_checkpoint(args.path)
    print(f"tasks learned: {state.k}  classes: {sum(state.class_counts)}  phase: {state.phase}")
    print(f"tensors: {len(manifest['tensors'])}  config digest: {manifest['config_digest'] or '-'}")
    if args.config:
        cfg = load_config(args.config).with_overrides(seed=args.seed)
        if manifest["config_digest"] and manifest["config_digest"] != cfg.digest():
            print("warning: checkpoint was written by a different config", file=sys.stderr)
        tasks = cfg.build_tasks(cfg.seeds[0])
        for j, task in enumerate(tasks):
            if j >= state.k:
                break
            logits = long_logits(state, Tensor(task.x_test.astype(state.dtype))).data
            scope = j if cfg.eval_scope == "task" else "all_classes"
            pred = predict_from_logits(logits, state.class_offsets, scope)
            print(f"task {j}: test accuracy {float(np.mean(pred == task.y_test)):.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cmn", description="Cycled Memory Networks: lifelong-learning experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train every seed of a config and write results")
    run.add_argument("config", type=Path)
    run.add_argument("--seed", type=int, help="run only this seed")
    run.add_argument("--out", help=f"output directory (default: config output_dir, else ${OUTPUT_ROOT_ENV}/<name>)")
    run.add_argument("--epochs", type=int, help="override epochs for every optimizer")
    run.add_argument("--threads", type=int, default=1, help="seeds trained in parallel")
    run.set_defaults(func=cmd_run)

    met = sub.add_parser("metrics", help="recompute metrics from a results dir or an accuracy-matrix CSV")
    met.add_argument("source", type=Path)
    met.add_argument("--baselines", type=Path, help="CSV with columns m, n and/or b")
    met.add_argument("--require", help="comma-separated metrics that must be computable, e.g. ACC,AF")
    met.set_defaults(func=cmd_metrics)

    cur = sub.add_parser("curves", help="write curves.csv and summary.csv for a results dir")
    cur.add_argument("results_dir", type=Path)
    cur.set_defaults(func=cmd_curves)

    ck = sub.add_parser("checkpoint", help="save or inspect a CMN checkpoint")
    ck_sub = ck.add_subparsers(dest="action", required=True)
    save = ck_sub.add_parser("save", help="train a cmn config for one seed and save its final state")
    save.add_argument("config", type=Path)
    save.add_argument("path", type=Path)
    save.add_argument("--seed", type=int)
    save.add_argument("--epochs", type=int)
    save.set_defaults(func=cmd_checkpoint_save)
    load = ck_sub.add_parser("load", help="verify a checkpoint; with --config, evaluate it on the config's tasks")
    load.add_argument("path", type=Path)
    load.add_argument("--config", type=Path)
    load.add_argument("--seed", type=int)
    load.set_defaults(func=cmd_checkpoint_load)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataError, MetricError) as exc:
        _err(str(exc))
        return EXIT_CONFIG
    except CheckpointError as exc:
        _err(str(exc))
        return EXIT_IO
    except DivergenceError as exc:
        _err(str(exc))
        return EXIT_DIVERGED
    except OSError as exc:
        _err(str(exc))
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
