"""SGD and the two-phase lifelong training loop."""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import asdict, dataclass, field

import numpy as np

from . import model as M
from . import tensor as T
from .consolidation import ConsolidationConfig, hard_cross_entropy, loss_total
from .layers import NetworkParams, digest_tensors, forward_plain, make_rng
from .metrics import iteration_time, param_report
from .tasks import TaskDataset, TaskSequence
from .tensor import NonFiniteError, Tensor
from .transfer import transfer_forward

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e6
# phase tags for shuffle streams
SHORT_STREAM, LONG_STREAM = 11, 12


class DivergenceError(RuntimeError):
    def __init__(self, phase: str, epoch: int, detail: str):
        super().__init__(f"training diverged in phase {phase!r} at epoch {epoch}: {detail}")
        self.phase = phase
        self.epoch = epoch


class FreezeViolation(AssertionError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-5
    epochs: int = 40
    batch_size: int = 64
    patience: int | None = 10
    min_delta: float = 1e-4

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be >= 1 or None")


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    task: int
    loss: float
    train_acc: float
    eval_acc: dict[int, float] = field(default_factory=dict)


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    def add(self, rec: EpochRecord) -> None:
        same = [r for r in self.records if r.phase == rec.phase and r.task == rec.task]
        if same and rec.epoch <= same[-1].epoch:
            raise ValueError("epochs must be monotone within a phase")
        self.records.append(rec)

    def extend(self, other: "TrainLog") -> None:
        self.records.extend(other.records)

    def rows(self) -> list[dict]:
        return [asdict(r) for r in self.records]


def sgd_step(params: list[Tensor], grads: list[np.ndarray | None], velocity: list[np.ndarray], cfg: OptimizerConfig):
    """v <- momentum * v + grad + wd * param; param <- param - lr * v."""
    if not len(params) == len(grads) == len(velocity):
        raise ValueError("params, grads and velocity must align")
    for p, g, v in zip(params, grads, velocity):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape or v.shape != p.shape:
            raise T.ShapeError(f"sgd_step: grad {g.shape} / velocity {v.shape} vs param {p.shape}")
        v *= cfg.momentum
        v += g
        if cfg.weight_decay:
            v += cfg.weight_decay * p.data
        p.data = p.data - np.asarray(cfg.lr, dtype=p.dtype) * v
    return params


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def _as_input(x: np.ndarray, dtype) -> Tensor:
    return Tensor(np.asarray(x, dtype=dtype))


def accuracy(pred: np.ndarray, labels: np.ndarray) -> float:
    return float((np.asarray(pred) == np.asarray(labels)).mean()) if len(labels) else 0.0


def fit(
    params: list[Tensor],
    loss_fn: Callable[[np.ndarray], tuple[Tensor, float]],
    n: int,
    cfg: OptimizerConfig,
    rng: np.random.Generator,
    phase: str,
    task: int,
    eval_fn: Callable[[], dict[int, float]] | None = None,
    debug: bool = False,
) -> TrainLog:
    """Minibatch SGD over ``n`` examples; ``loss_fn(idx)`` returns (loss, n_correct)."""
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    log_ = TrainLog()
    velocity = [np.zeros_like(p.data) for p in params]
    best, stale = math.inf, 0
    prev_eager = T.eager_checks()
    T.set_eager_checks(debug)
    try:
        # overflow surfaces as DivergenceError below; numpy's warnings would only repeat it
        with np.errstate(over="ignore", invalid="ignore"):
            for epoch in range(1, cfg.epochs + 1):
                total, correct = 0.0, 0.0
                for idx in _batches(n, cfg.batch_size, rng):
                    for p in params:
                        p.grad = None
                    try:
                        loss, n_correct = loss_fn(idx)
                        value = float(loss.data)
                        if not math.isfinite(value) or value > DIVERGENCE_LIMIT:
                            raise DivergenceError(phase, epoch, f"loss {value}")
                        loss.backward()
                    except NonFiniteError as exc:
                        raise DivergenceError(phase, epoch, str(exc)) from exc
                    sgd_step(params, [p.grad for p in params], velocity, cfg)
                    total += value * len(idx)
                    correct += n_correct
                if not all(np.isfinite(p.data).all() for p in params):
                    raise DivergenceError(phase, epoch, "non-finite parameters")
                mean_loss = total / n
                evals = eval_fn() if eval_fn is not None else {}
                log_.add(EpochRecord(epoch, phase, task, mean_loss, correct / n, evals))
                log.debug("%s task %d epoch %d loss %.5f", phase, task, epoch, mean_loss)
                if cfg.patience is not None:
                    if mean_loss < best - cfg.min_delta * max(1.0, abs(best) if math.isfinite(best) else 1.0):
                        best, stale = mean_loss, 0
                    else:
                        stale += 1
                        if stale >= cfg.patience:
                            break
    finally:
        T.set_eager_checks(prev_eager)
    for p in params:
        p.grad = None
    return log_


def _check_frozen(before: dict[str, str], after: dict[str, str], phase: str) -> None:
    for name, d in before.items():
        if after[name] != d:
            raise FreezeViolation(f"frozen {name} changed during {phase} phase")


def frozen_digests(state: M.CmnState) -> dict[str, str]:
    out = {}
    if state.phase == "short" and state.l_params is not None:
        out["l_net"] = state.l_params.digest()
    if state.phase == "consolidate":
        out["l_old"] = state.l_old.digest()
        out["s_net"] = state.s_params.digest()
        out["cells"] = digest_tensors(
            (f"{i}.{n}", t) for i, c in enumerate(state.cells) for n, t in c.named_parameters()
        )
    return out


def evaluate_net(params: NetworkParams, task: TaskDataset, offsets, scope="all_classes", offset: int = 0) -> float:
    """Test accuracy of a plain network on ``task`` (labels shifted by ``-offset``)."""
    logits = forward_plain(params, _as_input(task.x_test, params.dtype))[0].data
    return accuracy(M.predict_from_logits(logits, offsets, scope), task.y_test - offset)


def train_short_phase(
    state: M.CmnState,
    task: TaskDataset,
    cfg: OptimizerConfig,
    seed: int,
    debug: bool = False,
    track_eval: bool = True,
) -> tuple[M.CmnState, TrainLog]:
    """Fit the S-Net (and its transfer cells) on the current task; the L-Net stays frozen."""
    if state.phase != "short" or state.s_params is None:
        raise M.PhaseError("train_short_phase needs begin_task first")
    before = frozen_digests(state)
    offset = state.class_offsets[-1][0]
    x = task.x_train.astype(state.dtype)
    y = task.y_train - offset
    params = state.short_parameters()
    for p in params:
        p.track_grad = True

    def loss_fn(idx):
        logits = M.forward_short(state, Tensor(x[idx]))
        loss = hard_cross_entropy(logits, y[idx])
        return loss, float((logits.data.argmax(-1) == y[idx]).sum())

    def eval_fn():
        logits = M.forward_short(state, _as_input(task.x_test, state.dtype)).data
        return {state.k - 1: accuracy(logits.argmax(-1), task.y_test - offset)}

    rng = make_rng((seed, state.k, SHORT_STREAM))
    tlog = fit(params, loss_fn, len(y), cfg, rng, "short", state.k - 1, eval_fn if track_eval else None, debug)
    _check_frozen(before, frozen_digests(state), "short")
    return state, tlog


def consolidate_phase(
    state: M.CmnState,
    task: TaskDataset,
    cfg: OptimizerConfig,
    cons: ConsolidationConfig,
    seed: int,
    seen: list[TaskDataset] | None = None,
    scope: str = "all_classes",
    debug: bool = False,
) -> tuple[M.CmnState, TrainLog]:
    """Distil old L-Net + S-Net into the expanded L-Net using current-task data only."""
    if state.phase != "consolidate":
        raise M.PhaseError("consolidate_phase needs expand_long_head first")
    if state.s_params is None:
        raise M.PhaseError("no S-Net to consolidate from")
    before = frozen_digests(state)
    x = task.x_train.astype(state.dtype)
    y = task.y_train
    # teachers are frozen: compute their logits once
    xt = Tensor(x)
    old_logits = forward_plain(state.l_old, xt)[0].data
    s_logits = transfer_forward(state.cells, state.s_params, state.l_old, xt).data
    params = state.l_params.parameters()
    seen = seen or [task]

    def loss_fn(idx):
        new = forward_plain(state.l_params, Tensor(x[idx]))[0]
        loss = loss_total(new, Tensor(old_logits[idx]), Tensor(s_logits[idx]), y[idx], cons)
        return loss, float((new.data.argmax(-1) == y[idx]).sum())

    def eval_fn():
        return {j: evaluate_net(state.l_params, t, state.class_offsets, _scope(scope, j)) for j, t in enumerate(seen)}

    rng = make_rng((seed, state.k, LONG_STREAM))
    tlog = fit(params, loss_fn, len(y), cfg, rng, "consolidate", state.k - 1, eval_fn, debug)
    _check_frozen(before, frozen_digests(state), "consolidate")
    M.finish_consolidation(state)
    return state, tlog


def _scope(scope: str, j: int):
    return j if scope == "task" else "all_classes"


@dataclass(frozen=True)
class RunConfig:
    short: OptimizerConfig = OptimizerConfig(lr=0.01)
    long: OptimizerConfig = OptimizerConfig(lr=0.1)
    consolidation: ConsolidationConfig = ConsolidationConfig()
    eval_scope: str = "all_classes"
    dtype: str = "float32"
    debug: bool = False
    strategy: str = "cell"

    def __post_init__(self):
        if self.eval_scope not in ("all_classes", "task"):
            raise ValueError(f"eval_scope must be 'all_classes' or 'task', got {self.eval_scope!r}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


@dataclass
class SequenceResult:
    state: M.CmnState
    R: np.ndarray
    log: TrainLog
    params: dict[str, int]
    iteration_time: list[float]
    digests: list[dict] = field(default_factory=list)


def run_sequence(tasks: TaskSequence, body, cfg: RunConfig, seed: int) -> SequenceResult:
    """The full memory cycle over every task; fills the accuracy matrix row by row.

    ``R[i, j]`` (j <= i) is the L-Net's test accuracy on task j after
    consolidating task i. ``R[i-1, i]`` is the freshly initialised S-Net^i
    (connected to L-Net^{i-1}) on task i before any training.
    """
    if len(tasks) < 1:
        raise ValueError("need at least one task")
    n_tasks = len(tasks)
    R = np.full((n_tasks, n_tasks), np.nan)
    state = M.new_state(body, cfg.np_dtype, cfg.strategy)
    tlog = TrainLog()
    iters, digests = [], []
    for i, task in enumerate(tasks):
        M.begin_task(state, task.n_classes, seed)
        if i > 0:
            offset = state.class_offsets[-1][0]
            logits = M.forward_short(state, _as_input(task.x_test, state.dtype)).data
            R[i - 1, i] = accuracy(logits.argmax(-1), task.y_test - offset)
        pre = {"l_net": state.l_params.digest()} if state.l_params is not None else {}
        state, lg = train_short_phase(state, task, cfg.short, seed, cfg.debug)
        tlog.extend(lg)
        record = {"task": i, "short_before": pre, "short_after": {"l_net": state.l_params.digest()} if pre else {}}
        if i == 0:
            M.promote_first_task(state)
        else:
            M.expand_long_head(state, task.n_classes, seed)
            frozen = frozen_digests(state)
            state, lg = consolidate_phase(
                state, task, cfg.long, cfg.consolidation, seed, list(tasks)[: i + 1], cfg.eval_scope, cfg.debug
            )
            tlog.extend(lg)
            record["consolidate_before"] = frozen
            record["consolidate_after"] = {
                "l_old": state.l_old.digest(),
                "s_net": state.s_params.digest(),
                "cells": digest_tensors(
                    (f"{c}.{n}", t) for c, cell in enumerate(state.cells) for n, t in cell.named_parameters()
                ),
            }
        digests.append(record)
        for j in range(i + 1):
            R[i, j] = evaluate_net(state.l_params, tasks[j], state.class_offsets, _scope(cfg.eval_scope, j))
        iters.append(iteration_time(len(task.y_train), cfg.short.batch_size))
    params = param_report(state)
    return SequenceResult(state, R, tlog, params, [float(v) for v in iters], digests)

