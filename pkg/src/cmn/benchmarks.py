"""Desk-scale benchmarks used by the acceptance suite and the scripts.

``blob2``: two related 4-class blob tasks in 20 dimensions. The first task
has 100 training examples per class and the second only 10, which makes
knowledge from the first task worth carrying forward. Evaluation is
task-aware (``eval_scope="task"``).

``ablation``: a source task (pure noise, or the related first blob task)
learned into an L-Net, then a 50-example-per-class target task learned by
an S-Net wired to it with one of the transfer strategies.
"""

from __future__ import annotations

from .layers import NetworkSpec, tiny_mlp
from .tasks import SyntheticSpec, TaskDataset, TaskSequence, gen_noise_task, gen_synthetic_tasks
from .trainer import OptimizerConfig, RunConfig

BLOB2_DIMS = 20
BLOB2_SPEC = dict(
    dims=(BLOB2_DIMS,), separation=2.0, classes_per_task=4, relatedness=0.9, train_per_task=(100, 10)
)


def blob2_tasks(seed: int) -> TaskSequence:
    return gen_synthetic_tasks(SyntheticSpec(seed=seed, **BLOB2_SPEC), 2)


def blob2_body() -> NetworkSpec:
    return tiny_mlp(BLOB2_DIMS, 1, width=64, depth=2)


def blob2_run_config() -> RunConfig:
    # consolidation lr 0.01: at batch 64 the 0.1 default makes the distillation loss oscillate
    return RunConfig(eval_scope="task", long=OptimizerConfig(lr=0.01))


ABLATION_SPEC = dict(dims=(BLOB2_DIMS,), separation=2.0, classes_per_task=4, samples_per_class=50, relatedness=0.9)
ABLATION_NOISE_N = 400


def ablation_pair(seed: int, source: str) -> tuple[TaskDataset, TaskDataset]:
    """(source, target) for the transfer ablation; ``source`` is ``noise`` or ``related``."""
    seq = gen_synthetic_tasks(SyntheticSpec(seed=seed, **ABLATION_SPEC), 2)
    if source == "noise":
        return gen_noise_task((BLOB2_DIMS,), ABLATION_SPEC["classes_per_task"], ABLATION_NOISE_N, seed), seq[1]
    if source == "related":
        return seq[0], seq[1]
    raise ValueError(f"unknown ablation source {source!r}")


def ablation_body() -> NetworkSpec:
    return tiny_mlp(BLOB2_DIMS, 1, width=128, depth=3)


def ablation_run_config() -> RunConfig:
    return RunConfig(eval_scope="task", long=OptimizerConfig(lr=0.01))


def ablation_source_config(source: str) -> OptimizerConfig | None:
    """The noise source is fitted hard so the L-Net holds memorised, task-irrelevant features."""
    if source == "noise":
        return OptimizerConfig(lr=0.1, epochs=200, patience=None)
    return None
