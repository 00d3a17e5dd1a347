"""Dual-network lifecycle: per-task S-Net, growing L-Net head, freezing discipline."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import NetworkParams, NetworkSpec, forward_plain, init_params, init_weight, make_rng
from .tensor import Tensor
from .transfer import make_connectors, transfer_forward

# stream tags for deriving per-purpose RNGs from (seed, task, tag)
SNET, CELLS, HEAD = 1, 2, 3


class PhaseError(RuntimeError):
    """A lifecycle operation was called in the wrong phase."""


def task_rng(seed: int, task: int, tag: int) -> np.random.Generator:
    return make_rng((int(seed), int(task), int(tag)))


@dataclass
class CmnState:
    """Everything a CMN run carries between tasks.

    ``k`` counts tasks begun so far. ``phase`` is ``idle`` between tasks,
    ``short`` while the S-Net learns, and ``consolidate`` once the L-Net
    head has been expanded.
    """

    body: NetworkSpec
    dtype: type = np.float32
    strategy: str = "cell"
    l_params: NetworkParams | None = None
    l_old: NetworkParams | None = None
    s_params: NetworkParams | None = None
    cells: list = field(default_factory=list)
    k: int = 0
    class_counts: list[int] = field(default_factory=list)
    phase: str = "idle"

    @property
    def class_offsets(self) -> list[tuple[int, int]]:
        out, start = [], 0
        for c in self.class_counts:
            out.append((start, start + c))
            start += c
        return out

    def cell_parameters(self) -> list[Tensor]:
        return [t for c in self.cells for t in c.parameters()]

    def short_parameters(self) -> list[Tensor]:
        return ([] if self.s_params is None else self.s_params.parameters()) + self.cell_parameters()


def new_state(body: NetworkSpec, dtype=np.float32, strategy: str = "cell") -> CmnState:
    return CmnState(body=body, dtype=dtype, strategy=strategy)


def begin_task(state: CmnState, n_classes: int, seed: int) -> CmnState:
    """Fresh S-Net (head ``n_classes``) and connectors; the L-Net stays frozen."""
    if state.phase != "idle":
        raise PhaseError(f"begin_task called during phase {state.phase!r}")
    if n_classes < 1:
        raise ValueError("a task needs at least one class")
    state.k += 1
    state.class_counts.append(int(n_classes))
    s_spec = state.body.with_head(n_classes)
    state.s_params = init_params(s_spec, "fan_in_uniform", task_rng(seed, state.k, SNET), dtype=state.dtype)
    state.s_params.requires_grad_(True)
    if state.l_params is not None:
        state.l_params.requires_grad_(False)
        state.cells = make_connectors(
            state.strategy, state.l_params.spec, s_spec, task_rng(seed, state.k, CELLS), state.dtype
        )
        for t in state.cell_parameters():
            t.track_grad = True
    else:
        state.cells = []
    state.l_old = None
    state.phase = "short"
    return state


def forward_short(state: CmnState, x: Tensor) -> Tensor:
    """S-Net logits; during consolidation the cells keep reading the frozen old L-Net."""
    if state.s_params is None:
        raise PhaseError("no active S-Net")
    long_net = state.l_old if state.phase == "consolidate" else state.l_params
    return transfer_forward(state.cells, state.s_params, long_net, x)


def expand_head(params: NetworkParams, extra: int, rng: np.random.Generator) -> NetworkParams:
    """Copy of ``params`` with ``extra`` new output units appended to the head."""
    if extra <= 0:
        raise ValueError(f"head growth must be positive, got {extra}")
    spec = params.spec.with_head(params.spec.head_dim + extra)
    tensors = {k: Tensor(v.data.copy()) for k, v in params.tensors.items()}
    w_old, b_old = params["head.weight"].data, params["head.bias"].data
    fan_in = spec.head_in
    w_new = init_weight((extra, fan_in), fan_in, "fan_in_uniform", rng, dtype=w_old.dtype)
    tensors["head.weight"] = Tensor(np.concatenate([w_old, w_new], axis=0))
    tensors["head.bias"] = Tensor(np.concatenate([b_old, np.zeros(extra, dtype=b_old.dtype)]))
    return NetworkParams(spec, tensors, params.init_scheme)


def expand_long_head(state: CmnState, n_classes: int, seed: int = 0) -> CmnState:
    """Snapshot the old L-Net as the frozen teacher and grow a trainable copy."""
    if state.phase != "short":
        raise PhaseError(f"expand_long_head called during phase {state.phase!r}")
    if state.l_params is None:
        raise PhaseError("no L-Net to expand; use promote_first_task for the first task")
    if n_classes != state.class_counts[-1]:
        raise ValueError(f"current task has {state.class_counts[-1]} classes, asked to grow by {n_classes}")
    state.l_old = state.l_params.clone(track_grad=False)
    state.l_params = expand_head(state.l_params, n_classes, task_rng(seed, state.k, HEAD))
    state.l_params.requires_grad_(True)
    if state.s_params is not None:
        state.s_params.requires_grad_(False)
    for t in state.cell_parameters():
        t.track_grad = False
        t.grad = None
    state.phase = "consolidate"
    return state


def finish_consolidation(state: CmnState) -> CmnState:
    if state.phase != "consolidate":
        raise PhaseError(f"finish_consolidation called during phase {state.phase!r}")
    state.l_params.requires_grad_(False)
    state.phase = "idle"
    return state


def promote_first_task(state: CmnState) -> CmnState:
    """The first L-Net is an exact copy of the first S-Net."""
    if state.k != 1 or state.phase != "short":
        raise PhaseError(f"promote_first_task needs the first task in its short phase (k={state.k})")
    state.l_params = state.s_params.clone(track_grad=False)
    state.s_params.requires_grad_(False)
    state.phase = "idle"
    return state


def long_logits(state: CmnState, x: Tensor) -> Tensor:
    if state.l_params is None:
        raise PhaseError("no L-Net yet")
    return forward_plain(state.l_params, x)[0]


def predict_from_logits(logits: np.ndarray, offsets: list[tuple[int, int]], scope="all_classes") -> np.ndarray:
    """Global class predictions; ``scope`` is ``all_classes`` or a 0-based task index."""
    logits = np.atleast_2d(logits)
    if scope == "all_classes":
        return logits.argmax(axis=-1)
    if not isinstance(scope, (int, np.integer)) or not 0 <= scope < len(offsets):
        raise ValueError(f"unknown task index {scope!r}")
    lo, hi = offsets[scope]
    return logits[:, lo:hi].argmax(axis=-1) + lo


def predict(state: CmnState, x: Tensor, scope="all_classes") -> np.ndarray:
    logits = long_logits(state, x).data
    n = state.l_params.spec.head_dim
    offsets = [o for o in state.class_offsets if o[1] <= n]
    return predict_from_logits(logits, offsets, scope)
