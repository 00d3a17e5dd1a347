"""Experiment configuration: TOML in, validated dataclasses out.

Every key is checked before any compute starts. Errors carry the dotted path
of the offending field (``consolidation.temperature``, ``tasks[1].n_tasks``)
so the CLI can report it verbatim.

Minimal example::

    name = "blob2"
    method = "cmn"
    seeds = [0, 1, 2]

    [backbone]
    kind = "tiny_mlp"
    width = 64

    [[tasks]]
    source = "synthetic"
    n_tasks = 2
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .consolidation import ConsolidationConfig
from .layers import NetworkSpec, tiny_conv, tiny_mlp
from .tasks import CsvSchema, SyntheticSpec, TaskSequence, gen_noise_task, gen_synthetic_tasks, load_csv_dataset
from .transfer import STRATEGIES
from .trainer import OptimizerConfig, RunConfig

OUTPUT_ROOT_ENV = "CMN_OUTPUT_ROOT"
METHODS = ("cmn", "one", "joint", "finetune", "scratch") + tuple(f"ablation:{s}" for s in STRATEGIES)
METRIC_NAMES = ("ACC", "BWT", "FWT", "AF")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


# ---------------------------------------------------------------- sections


@dataclass(frozen=True)
class BackboneConfig:
    kind: str = "tiny_mlp"
    width: int = 128
    depth: int = 2
    channels: tuple[int, ...] = (8, 16)

    def build(self, input_shape: tuple[int, ...]) -> NetworkSpec:
        # head_dim is a placeholder; every learner sets its own head size
        if self.kind == "tiny_mlp":
            if len(input_shape) != 1:
                raise ConfigError("backbone.kind", f"tiny_mlp needs vector inputs, tasks give {input_shape}")
            return tiny_mlp(input_shape[0], 1, self.width, self.depth)
        if len(input_shape) != 3:
            raise ConfigError("backbone.kind", f"tiny_conv needs C x H x W inputs, tasks give {input_shape}")
        return tiny_conv(input_shape, 1, self.channels)


@dataclass(frozen=True)
class TaskBlock:
    """One ``[[tasks]]`` entry; expands to one or more tasks in order."""

    source: str
    params: dict = field(default_factory=dict)

    def build(self, run_seed: int, root: Path) -> list:
        p = dict(self.params)
        seed = p.pop("seed", None)
        seed = run_seed if seed is None else seed
        if self.source == "synthetic":
            n_tasks = p.pop("n_tasks")
            select = p.pop("select", None)
            seq = gen_synthetic_tasks(SyntheticSpec(seed=seed, **p), n_tasks)
            return [seq[i] for i in (range(n_tasks) if select is None else select)]
        if self.source == "noise":
            return [gen_noise_task(p["shape"], p["n_classes"], p["n"], seed, p.get("n_test"))]
        schema = CsvSchema(
            p.get("label_column", "label"),
            p.get("feature_columns"),
            p.get("image_side"),
            p.get("classes"),
        )
        test = p.get("test")
        return [load_csv_dataset(root / p["train"], schema, None if test is None else root / test)]


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    method: str
    tasks: tuple[TaskBlock, ...]
    seeds: tuple[int, ...] = (0,)
    output_dir: str | None = None
    backbone: BackboneConfig = BackboneConfig()
    short: OptimizerConfig = OptimizerConfig(lr=0.01)
    long: OptimizerConfig = OptimizerConfig(lr=0.1)
    source: OptimizerConfig | None = None  # ablation only: how the L-Net learns the source task
    consolidation: ConsolidationConfig = ConsolidationConfig()
    eval_scope: str = "all_classes"
    dtype: str = "float32"
    debug: bool = False
    metrics: tuple[str, ...] = METRIC_NAMES
    base_dir: str = "."  # directory relative paths resolve against

    @property
    def strategy(self) -> str:
        return self.method.split(":", 1)[1] if self.method.startswith("ablation:") else "cell"

    def run_config(self) -> RunConfig:
        return RunConfig(
            short=self.short,
            long=self.long,
            consolidation=self.consolidation,
            eval_scope=self.eval_scope,
            dtype=self.dtype,
            debug=self.debug,
            strategy=self.strategy,
        )

    def build_tasks(self, seed: int) -> TaskSequence:
        root = Path(self.base_dir)
        datasets = []
        for i, block in enumerate(self.tasks):
            try:
                datasets.extend(block.build(seed, root))
            except (KeyError, TypeError, ValueError) as exc:
                if isinstance(exc, ConfigError):
                    raise
                raise ConfigError(f"tasks[{i}]", str(exc)) from exc
        provenance = "csv" if any(b.source == "csv" for b in self.tasks) else self.tasks[0].source
        return TaskSequence.from_datasets(datasets, provenance)

    def resolve_output(self, override: str | None = None) -> Path:
        if override:
            return Path(override)
        if self.output_dir:
            return Path(self.base_dir) / self.output_dir
        return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / self.name

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tasks"] = [{"source": b.source, **b.params} for b in self.tasks]
        d.pop("base_dir")
        return d

    def digest(self) -> str:
        """Identity of the experiment, independent of seeds and where results go."""
        d = self.to_dict()
        for k in ("seeds", "output_dir"):
            d.pop(k)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def with_overrides(self, seed: int | None = None, epochs: int | None = None) -> "ExperimentConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seeds=(int(seed),))
        if epochs is not None:
            if epochs < 1:
                raise ConfigError("epochs", "must be >= 1")
            cfg = replace(
                cfg,
                short=replace(cfg.short, epochs=epochs),
                long=replace(cfg.long, epochs=epochs),
                source=None if cfg.source is None else replace(cfg.source, epochs=epochs),
            )
        return cfg


# --------------------------------------------------------------- validation

_TASK_KEYS = {
    "synthetic": {
        "n_tasks": int, "select": list, "mode": str, "classes_per_task": int, "dims": list,
        "samples_per_class": int, "test_per_class": int, "separation": float, "noise": float,
        "relatedness": float, "seed": int, "train_per_task": list,
    },
    "noise": {"shape": list, "n_classes": int, "n": int, "n_test": int, "seed": int},
    "csv": {
        "train": str, "test": str, "label_column": str, "feature_columns": list,
        "image_side": int, "classes": list,
    },
}
_REQUIRED_TASK_KEYS = {"synthetic": ("n_tasks",), "noise": ("shape", "n_classes", "n"), "csv": ("train",)}


def _typed(path: str, value, kind):
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if kind is int and isinstance(value, bool):
        raise ConfigError(path, f"expected an integer, got {value!r}")
    if not isinstance(value, kind):
        raise ConfigError(path, f"expected {kind.__name__}, got {type(value).__name__} {value!r}")
    return value


def _int_list(path: str, value) -> tuple[int, ...]:
    _typed(path, value, list)
    return tuple(_typed(f"{path}[{i}]", v, int) for i, v in enumerate(value))


def _section(raw: dict, path: str, schema: dict[str, type]) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError(path, "expected a table")
    out = {}
    for key, value in raw.items():
        sub = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(sub, "unknown key")
        out[key] = _typed(sub, value, schema[key])
    return out


def _build(path: str, factory, kwargs):
    """Call a validating constructor and attribute its complaint to ``path``."""
    try:
        return factory(**kwargs)
    except (ValueError, TypeError) as exc:
        # pin the message on the field it names when we can tell
        for key in kwargs:
            if key in str(exc):
                raise ConfigError(f"{path}.{key}", str(exc)) from exc
        raise ConfigError(path, str(exc)) from exc


_OPT_KEYS = {
    "lr": float, "momentum": float, "weight_decay": float, "epochs": int,
    "batch_size": int, "patience": int, "min_delta": float,
}


def _optimizer(raw, path: str, default: OptimizerConfig) -> OptimizerConfig:
    kw = _section(raw, path, _OPT_KEYS)
    if kw.get("patience") == 0:  # TOML has no null; 0 switches early stopping off
        kw["patience"] = None
    return _build(path, lambda **k: replace(default, **k), kw)


def _task_block(raw, path: str) -> TaskBlock:
    if not isinstance(raw, dict):
        raise ConfigError(path, "expected a table")
    source = raw.get("source")
    if source not in _TASK_KEYS:
        raise ConfigError(f"{path}.source", f"expected one of {sorted(_TASK_KEYS)}, got {source!r}")
    rest = {k: v for k, v in raw.items() if k != "source"}
    params = _section(rest, path, _TASK_KEYS[source])
    for key in _REQUIRED_TASK_KEYS[source]:
        if key not in params:
            raise ConfigError(f"{path}.{key}", "required")
    for key in ("dims", "shape", "select", "train_per_task", "classes"):
        if key in params:
            params[key] = _int_list(f"{path}.{key}", params[key])
    if "feature_columns" in params:
        params["feature_columns"] = tuple(
            _typed(f"{path}.feature_columns[{i}]", v, str) for i, v in enumerate(params["feature_columns"])
        )
    if source == "synthetic":
        if params["n_tasks"] < 1:
            raise ConfigError(f"{path}.n_tasks", "must be >= 1")
        for i in params.get("select", ()):
            if not 0 <= i < params["n_tasks"]:
                raise ConfigError(f"{path}.select", f"index {i} outside 0..{params['n_tasks'] - 1}")
        spec_kw = {k: v for k, v in params.items() if k not in ("n_tasks", "select")}
        _build(path, SyntheticSpec, spec_kw)
        if "train_per_task" in params and len(params["train_per_task"]) != params["n_tasks"]:
            raise ConfigError(f"{path}.train_per_task", f"needs {params['n_tasks']} entries")
    if source == "noise":
        for key in ("n_classes", "n"):
            if params[key] < 1:
                raise ConfigError(f"{path}.{key}", "must be >= 1")
        if params["n"] < params["n_classes"]:
            raise ConfigError(f"{path}.n", "need at least one example per class")
    return TaskBlock(source, params)


_TOP_KEYS = {
    "name": str, "method": str, "seeds": list, "output_dir": str, "eval_scope": str,
    "dtype": str, "debug": bool, "metrics": list,
    "backbone": dict, "short": dict, "long": dict, "source": dict, "consolidation": dict, "tasks": list,
}


def parse_config(raw: dict[str, Any], base_dir: str | Path = ".") -> ExperimentConfig:
    for key in raw:
        if key not in _TOP_KEYS:
            raise ConfigError(key, "unknown key")
    top = {k: _typed(k, v, _TOP_KEYS[k]) for k, v in raw.items()}
    for key in ("name", "method", "tasks"):
        if key not in top:
            raise ConfigError(key, "required")
    if top["method"] not in METHODS:
        raise ConfigError("method", f"expected one of {list(METHODS)}, got {top['method']!r}")
    kw: dict[str, Any] = {"name": top["name"], "method": top["method"], "base_dir": str(base_dir)}

    seeds = _int_list("seeds", top.get("seeds", [0]))
    if not seeds:
        raise ConfigError("seeds", "need at least one seed")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds", "duplicate seeds")
    kw["seeds"] = seeds

    if "output_dir" in top:
        kw["output_dir"] = top["output_dir"]
    scope = top.get("eval_scope", "all_classes")
    if scope not in ("all_classes", "task"):
        raise ConfigError("eval_scope", f"expected 'all_classes' or 'task', got {scope!r}")
    kw["eval_scope"] = scope
    dtype = top.get("dtype", "float32")
    if dtype not in ("float32", "float64"):
        raise ConfigError("dtype", f"expected 'float32' or 'float64', got {dtype!r}")
    kw["dtype"] = dtype
    kw["debug"] = top.get("debug", False)
    metrics = tuple(_typed(f"metrics[{i}]", m, str) for i, m in enumerate(top.get("metrics", list(METRIC_NAMES))))
    for i, m in enumerate(metrics):
        if m not in METRIC_NAMES:
            raise ConfigError(f"metrics[{i}]", f"expected one of {list(METRIC_NAMES)}, got {m!r}")
    kw["metrics"] = metrics

    bb = _section(top.get("backbone", {}), "backbone", {"kind": str, "width": int, "depth": int, "channels": list})
    if "channels" in bb:
        bb["channels"] = _int_list("backbone.channels", bb["channels"])
    if bb.get("kind", "tiny_mlp") not in ("tiny_mlp", "tiny_conv"):
        raise ConfigError("backbone.kind", f"expected 'tiny_mlp' or 'tiny_conv', got {bb['kind']!r}")
    for key in ("width", "depth"):
        if key in bb and bb[key] < 1:
            raise ConfigError(f"backbone.{key}", "must be >= 1")
    if any(c < 1 for c in bb.get("channels", (1,))):
        raise ConfigError("backbone.channels", "channel counts must be >= 1")
    kw["backbone"] = BackboneConfig(**bb)

    kw["short"] = _optimizer(top.get("short", {}), "short", OptimizerConfig(lr=0.01))
    kw["long"] = _optimizer(top.get("long", {}), "long", OptimizerConfig(lr=0.1))
    if "source" in top:
        if not top["method"].startswith("ablation:"):
            raise ConfigError("source", "only ablation methods train a separate source")
        kw["source"] = _optimizer(top["source"], "source", kw["short"])
    cons = _section(top.get("consolidation", {}), "consolidation", {"temperature": float, "beta": float})
    kw["consolidation"] = _build("consolidation", ConsolidationConfig, cons)

    if not top["tasks"]:
        raise ConfigError("tasks", "need at least one task block")
    kw["tasks"] = tuple(_task_block(b, f"tasks[{i}]") for i, b in enumerate(top["tasks"]))
    cfg = ExperimentConfig(**kw)
    _check_task_count(cfg)
    return cfg


def _count_tasks(block: TaskBlock) -> int:
    if block.source == "synthetic":
        return len(block.params.get("select", range(block.params["n_tasks"])))
    return 1


def _check_task_count(cfg: ExperimentConfig) -> None:
    n = sum(_count_tasks(b) for b in cfg.tasks)
    if cfg.method.startswith("ablation:") and n != 2:
        raise ConfigError("tasks", f"an ablation needs exactly a source and a target task, got {n}")
    if cfg.method in ("cmn", "finetune") and n < 1:
        raise ConfigError("tasks", "need at least one task")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("", f"{path}: {exc}") from exc
    return parse_config(raw, path.parent)
