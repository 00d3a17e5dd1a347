"""Cycled Memory Networks for lifelong learning, on a small numpy autodiff core."""

from .baselines import joint_reference, random_init_accuracy, run_baseline, run_transfer_ablation
from .config import ExperimentConfig, load_config
from .consolidation import ConsolidationConfig
from .harness import compute_metrics, emit_curves, run_experiment
from .layers import NetworkSpec, init_params, tiny_conv, tiny_mlp
from .metrics import BaselineAccuracies, acc, af, all_metrics, bwt, fwt, iteration_time
from .model import CmnState, new_state
from .tasks import SyntheticSpec, TaskDataset, TaskSequence, gen_noise_task, gen_synthetic_tasks
from .tensor import Tensor
from .trainer import OptimizerConfig, RunConfig, run_sequence

__version__ = "0.1.0"

__all__ = [
    "BaselineAccuracies", "CmnState", "ConsolidationConfig", "ExperimentConfig", "NetworkSpec",
    "OptimizerConfig", "RunConfig", "SyntheticSpec", "TaskDataset", "TaskSequence", "Tensor",
    "acc", "af", "all_metrics", "bwt", "compute_metrics", "emit_curves", "fwt", "gen_noise_task",
    "gen_synthetic_tasks", "init_params", "iteration_time", "joint_reference", "load_config",
    "new_state", "random_init_accuracy", "run_baseline", "run_experiment", "run_sequence",
    "run_transfer_ablation", "tiny_conv", "tiny_mlp",
]
