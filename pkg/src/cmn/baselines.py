"""Reference learners (One, Joint, fine-tuning, scratch) and the transfer-strategy ablation.

All learners share initialisation and shuffle streams with the CMN run for
the same seed, so differences are attributable to the method.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import model as M
from .consolidation import hard_cross_entropy
from .layers import NetworkParams, NetworkSpec, forward_plain, init_params, make_rng
from .metrics import iteration_time, param_report
from .tasks import TaskDataset, TaskSequence
from .tensor import Tensor
from .trainer import SHORT_STREAM, OptimizerConfig, RunConfig, TrainLog, accuracy, evaluate_net, fit, train_short_phase

BASELINES = ("one", "joint", "finetune", "scratch")
SCRATCH = 21  # init stream tag distinct from the shared S-Net stream


@dataclass
class BaselineResult:
    kind: str
    accuracies: list[float]
    R: np.ndarray | None = None
    log: TrainLog = field(default_factory=TrainLog)
    params: dict[str, int] = field(default_factory=dict)
    iteration_time: list[float] = field(default_factory=list)


def train_plain(
    params: NetworkParams,
    task: TaskDataset,
    cfg: OptimizerConfig,
    rng: np.random.Generator,
    offset: int = 0,
    task_index: int = 0,
    phase: str = "short",
    debug: bool = False,
) -> TrainLog:
    """Hard-label cross-entropy training of a plain network on ``task``."""
    x = task.x_train.astype(params.dtype)
    y = task.y_train - offset
    params.requires_grad_(True)

    def loss_fn(idx):
        logits = forward_plain(params, Tensor(x[idx]))[0]
        return hard_cross_entropy(logits, y[idx]), float((logits.data.argmax(-1) == y[idx]).sum())

    def eval_fn():
        return {task_index: evaluate_net(params, task, [(0, params.spec.head_dim)], "all_classes", offset)}

    tlog = fit(params.parameters(), loss_fn, len(y), cfg, rng, phase, task_index, eval_fn, debug)
    params.requires_grad_(False)
    return tlog


def _fresh(body: NetworkSpec, n_classes: int, rng, dtype) -> NetworkParams:
    return init_params(body.with_head(n_classes), "fan_in_uniform", rng, dtype=dtype)


def _scope(scope: str, j: int):
    return j if scope == "task" else "all_classes"


def run_baseline(kind: str, tasks: TaskSequence, body: NetworkSpec, cfg: RunConfig, seed: int) -> BaselineResult:
    """Per-task accuracies for ``kind``; fine-tuning also returns its accuracy matrix."""
    if kind not in BASELINES:
        raise ValueError(f"unknown baseline {kind!r}; expected one of {BASELINES}")
    if len(tasks) < 1:
        raise ValueError("need at least one task")
    dtype = cfg.np_dtype
    tlog = TrainLog()
    bs = cfg.short.batch_size

    if kind in ("one", "scratch"):
        accs, sizes = [], []
        for i, task in enumerate(tasks):
            tag = M.SNET if kind == "one" else SCRATCH
            net = _fresh(body, task.n_classes, M.task_rng(seed, i + 1, tag), dtype)
            offset = tasks.offsets[i][0]
            tlog.extend(train_plain(net, task, cfg.short, make_rng((seed, i + 1, SHORT_STREAM)), offset, i, debug=cfg.debug))
            accs.append(evaluate_net(net, task, [(0, task.n_classes)], "all_classes", offset))
            sizes.append(param_report(net))
        return BaselineResult(
            kind, accs, None, tlog, sizes[-1], [float(iteration_time(len(t.y_train), bs)) for t in tasks]
        )

    if kind == "joint":
        union = tasks.union()
        net = _fresh(body, tasks.n_classes, M.task_rng(seed, 0, M.SNET), dtype)
        tlog.extend(train_plain(net, union, cfg.short, make_rng((seed, 0, SHORT_STREAM)), 0, 0, debug=cfg.debug))
        accs = [evaluate_net(net, t, tasks.offsets, _scope(cfg.eval_scope, j)) for j, t in enumerate(tasks)]
        n_total = len(union.y_train)
        return BaselineResult(kind, accs, None, tlog, param_report(net), [float(iteration_time(n_total, bs))])

    # finetune: one network, head grown per task, no constraint on old knowledge
    n_tasks = len(tasks)
    R = np.full((n_tasks, n_tasks), np.nan)
    net = None
    for i, task in enumerate(tasks):
        if net is None:
            net = _fresh(body, task.n_classes, M.task_rng(seed, 1, M.SNET), dtype)
        else:
            net = M.expand_head(net, task.n_classes, M.task_rng(seed, i + 1, M.HEAD))
            R[i - 1, i] = evaluate_net(net, task, tasks.offsets[: i + 1], _scope(cfg.eval_scope, i))
        tlog.extend(train_plain(net, task, cfg.short, make_rng((seed, i + 1, SHORT_STREAM)), 0, i, debug=cfg.debug))
        for j in range(i + 1):
            R[i, j] = evaluate_net(net, tasks[j], tasks.offsets[: i + 1], _scope(cfg.eval_scope, j))
    return BaselineResult(
        kind,
        [float(R[i, i]) for i in range(n_tasks)],
        R,
        tlog,
        param_report(net),
        [float(iteration_time(len(t.y_train), bs)) for t in tasks],
    )


def joint_reference(tasks: TaskSequence, body: NetworkSpec, cfg: RunConfig, seed: int) -> list[float]:
    """Per-step Joint reference for AF: ``n_i`` is the mean accuracy over tasks ``j <= i``
    of a Joint learner trained on the union of tasks ``0..i``.

    ``ACC_i`` averages over the same tasks, so the two are compared like
    for like. The last entry equals the mean of a full Joint run.
    """
    out = []
    for i in range(len(tasks)):
        prefix = TaskSequence(list(tasks)[: i + 1], tasks.provenance)
        out.append(float(np.mean(run_baseline("joint", prefix, body, cfg, seed).accuracies)))
    return out


def random_init_accuracy(tasks: TaskSequence, body: NetworkSpec, cfg: RunConfig, seed: int, n_inits: int = 5) -> list[float]:
    """Per-task accuracy of untrained networks, averaged over ``n_inits`` seeded draws (FWT's b)."""
    out = []
    for i, task in enumerate(tasks):
        vals = []
        for r in range(n_inits):
            net = _fresh(body, task.n_classes, make_rng((seed, i + 1, 31, r)), cfg.np_dtype)
            vals.append(evaluate_net(net, task, [(0, task.n_classes)], "all_classes", tasks.offsets[i][0]))
        out.append(float(np.mean(vals)))
    return out


@dataclass
class AblationResult:
    strategy: str
    final_acc: float
    curve: list[float]
    log: TrainLog


def run_transfer_ablation(
    strategy: str,
    source: TaskDataset,
    target: TaskDataset,
    body: NetworkSpec,
    cfg: RunConfig,
    seed: int,
    source_cfg: OptimizerConfig | None = None,
) -> AblationResult:
    """Learn ``source`` into an L-Net, then learn ``target`` with the given transfer strategy.

    Returns the S-Net's target test accuracy after training plus its
    per-epoch learning curve.
    """
    pair = TaskSequence.from_datasets([source, target], "ablation")
    src, tgt = pair[0], pair[1]
    state = M.new_state(body, cfg.np_dtype, strategy)
    M.begin_task(state, src.n_classes, seed)
    train_short_phase(state, src, source_cfg or cfg.short, seed, cfg.debug, track_eval=False)
    M.promote_first_task(state)
    M.begin_task(state, tgt.n_classes, seed)
    state, tlog = train_short_phase(state, tgt, cfg.short, seed, cfg.debug)
    offset = pair.offsets[1][0]
    logits = M.forward_short(state, Tensor(tgt.x_test.astype(state.dtype))).data
    final = accuracy(logits.argmax(-1), tgt.y_test - offset)
    curve = [r.eval_acc.get(1, float("nan")) for r in tlog.records]
    return AblationResult(strategy, final, curve, tlog)
