"""SGD, the two training phases and the full memory cycle."""

import copy

import numpy as np
import pytest

import oracles
from cmn import model as M
from cmn.consolidation import ConsolidationConfig
from cmn.layers import forward_plain, tiny_mlp
from cmn.tasks import SyntheticSpec, TaskSequence, gen_synthetic_tasks
from cmn.tensor import Tensor
from cmn.trainer import (
    DivergenceError,
    EpochRecord,
    OptimizerConfig,
    RunConfig,
    TrainLog,
    consolidate_phase,
    frozen_digests,
    run_sequence,
    sgd_step,
    train_short_phase,
)
from cmn.transfer import transfer_forward

BODY = tiny_mlp(8, 1, width=16, depth=2)


def _blobs(seed=0, n_tasks=2, sep=6.0, **kw):
    return gen_synthetic_tasks(SyntheticSpec(dims=(8,), separation=sep, seed=seed, samples_per_class=40, **kw), n_tasks)


# ------------------------------------------------------------------- sgd


def test_vanilla_step():
    p = Tensor(np.array([1.0, 2.0]))
    v = [np.zeros(2)]
    sgd_step([p], [np.array([0.5, -1.0])], v, OptimizerConfig(lr=1.0, momentum=0.0, weight_decay=0.0))
    np.testing.assert_array_equal(p.data, [0.5, 3.0])


def test_zero_gradient_is_a_fixed_point():
    p = Tensor(np.array([1.0, -2.0]))
    v = [np.zeros(2)]
    cfg = OptimizerConfig(lr=0.5, weight_decay=0.0)
    for _ in range(5):
        sgd_step([p], [np.zeros(2)], v, cfg)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_momentum_recurrence():
    p = Tensor(np.array([0.0]))
    v = [np.zeros(1)]
    cfg = OptimizerConfig(lr=0.1, momentum=0.9, weight_decay=0.0)
    sgd_step([p], [np.ones(1)], v, cfg)
    assert p.data[0] == pytest.approx(-0.1, abs=1e-15)
    sgd_step([p], [np.ones(1)], v, cfg)
    assert p.data[0] - (-0.1) == pytest.approx(-0.19, abs=1e-15)


def test_weight_decay_enters_velocity():
    p = Tensor(np.array([2.0]))
    sgd_step([p], [np.zeros(1)], [np.zeros(1)], OptimizerConfig(lr=0.1, momentum=0.0, weight_decay=0.5))
    assert p.data[0] == pytest.approx(2.0 - 0.1 * 1.0)


def test_sgd_shape_checks():
    with pytest.raises(ValueError):
        sgd_step([Tensor(np.zeros(2))], [], [], OptimizerConfig())
    with pytest.raises(ValueError):
        sgd_step([Tensor(np.zeros(2))], [np.zeros(3)], [np.zeros(2)], OptimizerConfig())


@pytest.mark.parametrize("kw", [{"lr": 0.0}, {"momentum": 1.0}, {"batch_size": 0}, {"epochs": -1}, {"patience": 0}])
def test_optimizer_config_validation(kw):
    with pytest.raises(ValueError):
        OptimizerConfig(**kw)


def test_train_log_requires_monotone_epochs():
    log = TrainLog()
    log.add(EpochRecord(1, "short", 0, 1.0, 0.5))
    log.add(EpochRecord(1, "consolidate", 0, 1.0, 0.5))
    with pytest.raises(ValueError):
        log.add(EpochRecord(1, "short", 0, 1.0, 0.5))


# ----------------------------------------------------------- short phase


def _started(tasks, seed=0, dtype=np.float64):
    s = M.new_state(BODY, dtype)
    M.begin_task(s, tasks[0].n_classes, seed)
    return s


def test_separable_task_is_learned():
    tasks = _blobs(seed=1, n_tasks=1)
    x = tasks[0]
    assert oracles.logistic_regression_accuracy(x.x_train, x.y_train, x.x_train, x.y_train, 2) == 1.0
    s = _started(tasks)
    _, log = train_short_phase(s, tasks[0], OptimizerConfig(lr=0.01, epochs=30, patience=None), seed=0)
    assert len(log.records) == 30
    assert log.records[-1].train_acc >= 0.99


def test_zero_epochs_changes_nothing():
    tasks = _blobs(n_tasks=1)
    s = _started(tasks)
    before = s.s_params.digest()
    _, log = train_short_phase(s, tasks[0], OptimizerConfig(epochs=0), seed=0)
    assert s.s_params.digest() == before and log.records == []


def test_short_phase_leaves_long_net_untouched():
    tasks = _blobs()
    s = _started(tasks)
    train_short_phase(s, tasks[0], OptimizerConfig(epochs=2), seed=0)
    M.promote_first_task(s)
    M.begin_task(s, tasks[1].n_classes, 0)
    before = frozen_digests(s)
    cells_before = [t.data.copy() for t in s.cell_parameters()]
    train_short_phase(s, tasks[1], OptimizerConfig(epochs=3), seed=0)
    assert frozen_digests(s) == before
    assert any(not np.array_equal(a, t.data) for a, t in zip(cells_before, s.cell_parameters()))


def test_short_phase_needs_begin_task():
    tasks = _blobs(n_tasks=1)
    with pytest.raises(M.PhaseError):
        train_short_phase(M.new_state(BODY), tasks[0], OptimizerConfig(), 0)


def test_divergence_is_reported():
    tasks = _blobs(n_tasks=1, sep=50.0)
    s = _started(tasks)
    with pytest.raises(DivergenceError, match="short"):
        train_short_phase(s, tasks[0], OptimizerConfig(lr=1e8, epochs=5, patience=None), seed=0)


# ---------------------------------------------------------- consolidation


def _ready_to_consolidate(seed=0):
    tasks = TaskSequence.from_datasets(list(_blobs(seed=seed)))
    s = _started(tasks, seed)
    train_short_phase(s, tasks[0], OptimizerConfig(epochs=5), seed)
    M.promote_first_task(s)
    M.begin_task(s, tasks[1].n_classes, seed)
    train_short_phase(s, tasks[1], OptimizerConfig(epochs=5), seed)
    M.expand_long_head(s, tasks[1].n_classes, seed)
    return tasks, s


def _soft_term(s, task):
    x = Tensor(task.x_train)
    new = forward_plain(s.l_params, x)[0].data[:, -task.n_classes:]
    teach = transfer_forward(s.cells, s.s_params, s.l_old, x).data
    return np.mean([oracles.soft_ce(oracles.softmax(t.tolist()), oracles.softmax(n.tolist())) for t, n in zip(teach, new)])


def test_soft_term_decreases_over_first_epochs():
    tasks, s = _ready_to_consolidate()
    cons = ConsolidationConfig(temperature=1.0, beta=1.0)
    values = []
    for epochs in range(6):
        trial = copy.deepcopy(s)
        consolidate_phase(trial, tasks[1], OptimizerConfig(lr=0.01, epochs=epochs, patience=None), cons, seed=0)
        values.append(_soft_term(trial, tasks[1]))
    assert all(b < a for a, b in zip(values, values[1:])), values


def test_consolidation_zero_epochs_and_freeze():
    tasks, s = _ready_to_consolidate()
    l_before, s_before = s.l_params.digest(), s.s_params.digest()
    consolidate_phase(s, tasks[1], OptimizerConfig(epochs=0), ConsolidationConfig(), seed=0)
    assert s.l_params.digest() == l_before and s.s_params.digest() == s_before
    assert s.phase == "idle"


def test_consolidation_updates_only_the_long_net():
    tasks, s = _ready_to_consolidate()
    frozen = frozen_digests(s)
    l_before = s.l_params.digest()
    consolidate_phase(s, tasks[1], OptimizerConfig(epochs=2), ConsolidationConfig(), seed=0)
    assert s.l_params.digest() != l_before
    assert s.l_old.digest() == frozen["l_old"] and s.s_params.digest() == frozen["s_net"]


def test_consolidation_needs_expanded_head():
    tasks = _blobs(n_tasks=1)
    with pytest.raises(M.PhaseError):
        consolidate_phase(_started(tasks), tasks[0], OptimizerConfig(), ConsolidationConfig(), 0)


# ---------------------------------------------------------- full sequence


FAST = RunConfig(short=OptimizerConfig(epochs=10), long=OptimizerConfig(lr=0.01, epochs=10), dtype="float64")


def test_single_task_row_is_the_short_net_accuracy():
    tasks = _blobs(n_tasks=1)
    res = run_sequence(tasks, BODY, FAST, seed=0)
    s = M.begin_task(M.new_state(BODY, np.float64), 2, 0)
    train_short_phase(s, tasks[0], FAST.short, 0)
    logits = forward_plain(s.s_params, Tensor(tasks[0].x_test))[0].data
    assert res.R.shape == (1, 1)
    assert res.R[0, 0] == np.mean(logits.argmax(-1) == tasks[0].y_test)


def test_repeated_task_is_retained():
    t0 = _blobs(n_tasks=1)[0]
    tasks = TaskSequence.from_datasets([t0, t0])
    cfg = RunConfig(short=FAST.short, long=FAST.long, eval_scope="task", dtype="float64")
    R = run_sequence(tasks, BODY, cfg, seed=0).R
    assert R[1, 0] >= R[1, 1] - 0.05


def test_matrix_layout_and_report():
    res = run_sequence(_blobs(n_tasks=3), BODY, FAST, seed=0)
    R = res.R
    assert np.isnan(R[0, 2])
    assert not np.isnan(R[0, 1]) and not np.isnan(R[1, 2])
    assert np.all((R[np.tril_indices(3)] >= 0) & (R[np.tril_indices(3)] <= 1))
    assert res.iteration_time == [80 / 64] * 3
    assert len(res.digests) == 3 and set(res.digests[2]) >= {"consolidate_before", "consolidate_after"}


def test_sequence_is_deterministic():
    a = run_sequence(_blobs(n_tasks=2), BODY, FAST, seed=3)
    b = run_sequence(_blobs(n_tasks=2), BODY, FAST, seed=3)
    np.testing.assert_array_equal(a.R, b.R)
    assert a.state.l_params.digest() == b.state.l_params.digest()
    assert [r.loss for r in a.log.records] == [r.loss for r in b.log.records]


def test_run_config_validation():
    with pytest.raises(ValueError):
        RunConfig(eval_scope="global")
    with pytest.raises(ValueError):
        RunConfig(dtype="float16")
