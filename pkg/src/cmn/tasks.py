"""Task sequences: synthetic class-incremental splits, noise tasks, CSV ingestion."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .layers import make_rng


class DataError(ValueError):
    pass


@dataclass
class TaskDataset:
    """Train/test examples for one task. Labels are global class ids."""

    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    classes: tuple[int, ...]
    name: str = ""

    def __post_init__(self):
        self.y_train = np.asarray(self.y_train, dtype=np.int64)
        self.y_test = np.asarray(self.y_test, dtype=np.int64)
        self.classes = tuple(int(c) for c in self.classes)
        if len(self.x_train) != len(self.y_train) or len(self.x_test) != len(self.y_test):
            raise DataError("feature/label counts differ")
        allowed = set(self.classes)
        for split, y in (("train", self.y_train), ("test", self.y_test)):
            bad = set(np.unique(y).tolist()) - allowed
            if bad:
                raise DataError(f"{split} labels {sorted(bad)} outside declared classes {self.classes}")

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def input_shape(self) -> tuple[int, ...]:
        return tuple(self.x_train.shape[1:])

    def relabel(self, offset: int) -> "TaskDataset":
        """Map this task's classes (in sorted order) onto ``offset, offset+1, ...``."""
        lut = {c: offset + i for i, c in enumerate(sorted(self.classes))}
        f = np.vectorize(lut.__getitem__, otypes=[np.int64])
        return replace(
            self,
            y_train=f(self.y_train) if len(self.y_train) else self.y_train,
            y_test=f(self.y_test) if len(self.y_test) else self.y_test,
            classes=tuple(range(offset, offset + len(self.classes))),
        )


@dataclass
class TaskSequence:
    tasks: list[TaskDataset]
    provenance: str = "synthetic"

    def __post_init__(self):
        start = 0
        for t in self.tasks:
            if t.classes != tuple(range(start, start + t.n_classes)):
                raise DataError(f"task {t.name!r} classes {t.classes} are not the contiguous block from {start}")
            start += t.n_classes

    @classmethod
    def from_datasets(cls, datasets: list[TaskDataset], provenance: str = "synthetic") -> "TaskSequence":
        """Re-index each task's classes into consecutive global ranges."""
        out, offset = [], 0
        for d in datasets:
            out.append(d.relabel(offset))
            offset += d.n_classes
        return cls(out, provenance)

    def __len__(self) -> int:
        return len(self.tasks)

    def __getitem__(self, i):
        return self.tasks[i]

    def __iter__(self):
        return iter(self.tasks)

    @property
    def n_classes(self) -> int:
        return sum(t.n_classes for t in self.tasks)

    @property
    def offsets(self) -> list[tuple[int, int]]:
        out, start = [], 0
        for t in self.tasks:
            out.append((start, start + t.n_classes))
            start += t.n_classes
        return out

    def union(self) -> TaskDataset:
        return TaskDataset(
            np.concatenate([t.x_train for t in self.tasks]),
            np.concatenate([t.y_train for t in self.tasks]),
            np.concatenate([t.x_test for t in self.tasks]),
            np.concatenate([t.y_test for t in self.tasks]),
            tuple(range(self.n_classes)),
            "joint",
        )


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of a synthetic class-incremental benchmark.

    ``gaussian_blobs``: unit-variance clusters centred at
    ``separation * u_c`` with ``u_c`` a random unit direction per class.
    ``relatedness`` in [0, 1] mixes a direction shared by the j-th class of
    every task into ``u_c``; at 1 all tasks have identical geometry.
    ``train_per_task`` optionally overrides ``samples_per_class`` for each
    task in order (few-shot later tasks, for instance).
    ``striped_patterns``: ``C x H x W`` sinusoidal gratings, one orientation
    and frequency per class, amplitude ``separation`` plus unit noise.
    """

    mode: str = "gaussian_blobs"
    classes_per_task: int = 2
    dims: tuple[int, ...] = (20,)
    samples_per_class: int = 100
    test_per_class: int = 50
    separation: float = 6.0
    noise: float = 1.0
    relatedness: float = 0.0
    seed: int = 0
    train_per_task: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if self.mode not in ("gaussian_blobs", "striped_patterns"):
            raise ValueError(f"unknown synthetic mode {self.mode!r}")
        if self.separation < 0:
            raise ValueError("separation must be >= 0")
        if not 0.0 <= self.relatedness <= 1.0:
            raise ValueError("relatedness must lie in [0, 1]")
        if self.classes_per_task < 1 or self.samples_per_class < 1 or self.test_per_class < 0:
            raise ValueError("class and sample counts must be positive")
        if self.train_per_task is not None:
            object.__setattr__(self, "train_per_task", tuple(int(n) for n in self.train_per_task))
            if any(n < 1 for n in self.train_per_task):
                raise ValueError("train_per_task entries must be positive")
        if any(d < 1 for d in self.dims):
            raise DataError(f"degenerate dims {self.dims}")
        if self.mode == "gaussian_blobs" and len(self.dims) != 1:
            raise DataError("gaussian_blobs needs dims=(d,)")
        if self.mode == "striped_patterns" and len(self.dims) != 3:
            raise DataError("striped_patterns needs dims=(C, H, W)")


def _unit_directions(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    return _unit_directions_of(rng.standard_normal((n, d)))


def _unit_directions_of(v: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    return v / np.where(norms == 0, 1, norms)


def _stripes(rng, n, dims, angle, freq, amp, noise):
    c, h, w = dims
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    proj = xx * math.cos(angle) + yy * math.sin(angle)
    phase = rng.uniform(0, 2 * math.pi, size=(n, 1, 1, 1))
    base = np.sin(2 * math.pi * freq * proj[None, None] / max(h, w) + phase)
    return amp * np.broadcast_to(base, (n, c, h, w)) + noise * rng.standard_normal((n, c, h, w))


def gen_synthetic_tasks(spec: SyntheticSpec, n_tasks: int) -> TaskSequence:
    if n_tasks < 1:
        raise ValueError("need at least one task")
    if spec.train_per_task is not None and len(spec.train_per_task) != n_tasks:
        raise ValueError(f"train_per_task has {len(spec.train_per_task)} entries for {n_tasks} tasks")
    rng = make_rng((spec.seed, 7001))
    total = n_tasks * spec.classes_per_task
    if spec.mode == "gaussian_blobs":
        own = _unit_directions(rng, total, spec.dims[0])
        shared = _unit_directions(rng, spec.classes_per_task, spec.dims[0])
        mixed = spec.relatedness * np.tile(shared, (n_tasks, 1)) + (1 - spec.relatedness) * own
        centres = spec.separation * _unit_directions_of(mixed)
    else:
        angles = np.pi * rng.permutation(total) / total
        freqs = 1.0 + 2.0 * rng.random(total)
    tasks = []
    for t in range(n_tasks):
        xs_tr, ys_tr, xs_te, ys_te = [], [], [], []
        classes = tuple(range(t * spec.classes_per_task, (t + 1) * spec.classes_per_task))
        n_train = spec.samples_per_class if spec.train_per_task is None else spec.train_per_task[t]
        for c in classes:
            for xs, ys, n in ((xs_tr, ys_tr, n_train), (xs_te, ys_te, spec.test_per_class)):
                if spec.mode == "gaussian_blobs":
                    x = centres[c] + spec.noise * rng.standard_normal((n, spec.dims[0]))
                else:
                    x = _stripes(rng, n, spec.dims, angles[c], freqs[c], spec.separation, spec.noise)
                xs.append(x)
                ys.append(np.full(n, c))
        tasks.append(
            TaskDataset(
                np.concatenate(xs_tr),
                np.concatenate(ys_tr),
                np.concatenate(xs_te) if xs_te else np.zeros((0, *spec.dims)),
                np.concatenate(ys_te),
                classes,
                f"{spec.mode}-{t}",
            )
        )
    return TaskSequence(tasks, "synthetic")


def gen_noise_task(shape, n_classes: int, n: int, seed: int, n_test: int | None = None) -> TaskDataset:
    """Standard-normal features with uniformly random labels: nothing to learn."""
    if n < n_classes:
        raise ValueError("need at least one example per class")
    rng = make_rng((seed, 7002))
    shape = tuple(shape)
    n_test = max(n_classes, n // 4) if n_test is None else n_test
    return TaskDataset(
        rng.standard_normal((n, *shape)),
        rng.integers(0, n_classes, size=n),
        rng.standard_normal((n_test, *shape)),
        rng.integers(0, n_classes, size=n_test),
        tuple(range(n_classes)),
        "noise",
    )


# -------------------------------------------------------------------- CSV


@dataclass(frozen=True)
class CsvSchema:
    label_column: str = "label"
    feature_columns: tuple[str, ...] | None = None
    image_side: int | None = None
    classes: tuple[int, ...] | None = None


def read_csv_examples(path, schema: CsvSchema = CsvSchema()) -> tuple[np.ndarray, np.ndarray]:
    """Rows in file order. Errors name the 1-based data row and column."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, quoting=csv.QUOTE_NONE)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if schema.label_column not in header:
            raise DataError(f"{path}: no {schema.label_column!r} column in header")
        label_idx = header.index(schema.label_column)
        if schema.feature_columns is None:
            feat_idx = [i for i in range(len(header)) if i != label_idx]
        else:
            missing = [c for c in schema.feature_columns if c not in header]
            if missing:
                raise DataError(f"{path}: missing feature columns {missing}")
            feat_idx = [header.index(c) for c in schema.feature_columns]
        xs, ys = [], []
        for r, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {r} has {len(row)} fields, header has {len(header)}")
            try:
                label = int(row[label_idx])
            except ValueError:
                raise DataError(f"{path}: row {r}, column {label_idx + 1}: bad label {row[label_idx]!r}") from None
            vals = []
            for i in feat_idx:
                try:
                    vals.append(float(row[i]))
                except ValueError:
                    raise DataError(f"{path}: row {r}, column {i + 1}: cannot parse {row[i]!r}") from None
            xs.append(vals)
            ys.append(label)
    x = np.asarray(xs, dtype=np.float64).reshape(len(xs), len(feat_idx))
    y = np.asarray(ys, dtype=np.int64)
    if schema.classes is not None:
        bad = sorted(set(y.tolist()) - set(schema.classes))
        if bad:
            raise DataError(f"{path}: labels {bad} outside declared set {list(schema.classes)}")
    if schema.image_side:
        s = schema.image_side
        if x.shape[1] != s * s:
            raise DataError(f"{path}: {x.shape[1]} features cannot form a {s}x{s} image")
        x = x.reshape(len(x), 1, s, s)
    return x, y


def load_csv_dataset(path, schema: CsvSchema = CsvSchema(), test_path=None) -> TaskDataset:
    """One task from CSV (``label,f0,f1,...``); the test split comes from ``test_path`` if given."""
    x, y = read_csv_examples(path, schema)
    if test_path is not None:
        xt, yt = read_csv_examples(test_path, schema)
    else:
        xt, yt = np.zeros((0, *x.shape[1:])), np.zeros(0, dtype=np.int64)
    classes = schema.classes if schema.classes is not None else tuple(sorted(set(y.tolist()) | set(yt.tolist())))
    return TaskDataset(x, y, xt, yt, classes, Path(path).stem)


def export_csv(path, x: np.ndarray, y: np.ndarray) -> None:
    """Write examples as ``label,f0,f1,...`` with round-trip float formatting."""
    flat = np.asarray(x).reshape(len(x), -1)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, quoting=csv.QUOTE_NONE, lineterminator="\n")
        w.writerow(["label"] + [f"f{i}" for i in range(flat.shape[1])])
        for label, row in zip(y, flat):
            w.writerow([int(label)] + [repr(float(v)) for v in row])
