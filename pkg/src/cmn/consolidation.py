"""Distillation losses for folding the S-Net into the L-Net.

Convention for every soft cross-entropy here: the first argument is the fixed
teacher distribution, the second is the trainable student. Teachers are the
frozen old L-Net (for old classes) and the frozen S-Net (for new classes).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

LOG_EPS = 1e-12


@dataclass(frozen=True)
class ConsolidationConfig:
    temperature: float = 2.0
    beta: float = 0.8

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")


def _check_distribution(name: str, p: np.ndarray) -> None:
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-6):
        raise ValueError(f"{name} is not a probability distribution")


def _batch_mean(per_example: Tensor, n: int) -> Tensor:
    return T.scale(T.tsum(per_example), 1.0 / n)


def cross_entropy_soft(target: Tensor, pred: Tensor) -> Tensor:
    """-sum(target * log(pred + eps)), averaged over the batch axis if present."""
    if target.shape != pred.shape:
        raise ShapeError(f"target {target.shape} and prediction {pred.shape} differ")
    _check_distribution("target", target.data)
    _check_distribution("prediction", pred.data)
    eps = np.asarray(LOG_EPS, dtype=pred.dtype)
    terms = T.mul(target.detach(), T.log(T.add(pred, eps)))
    n = pred.shape[0] if pred.ndim == 2 else 1
    return T.neg(_batch_mean(terms, n))


def hard_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {labels.shape}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= c:
        raise ValueError(f"label out of range for {c} outputs")
    onehot = np.zeros((n, c), dtype=logits.dtype)
    onehot[np.arange(n), labels] = 1
    return T.neg(_batch_mean(T.mul(T.log_softmax(logits), Tensor(onehot)), n))


def loss_dis_long(l_new_logits: Tensor, l_old_logits: Tensor, cfg: ConsolidationConfig) -> Tensor:
    """Keep the new L-Net's old-class distribution on the old L-Net's."""
    n_old = l_old_logits.shape[-1]
    if n_old > l_new_logits.shape[-1] or l_old_logits.shape[:-1] != l_new_logits.shape[:-1]:
        raise ShapeError(f"old logits {l_old_logits.shape} do not fit new logits {l_new_logits.shape}")
    teacher = T.softmax_with_temperature(l_old_logits.detach(), cfg.temperature)
    student = T.softmax_with_temperature(T.take_last(l_new_logits, 0, n_old), cfg.temperature)
    return cross_entropy_soft(teacher, student)


def soft_short_term(l_new_logits: Tensor, s_logits: Tensor, cfg: ConsolidationConfig) -> Tensor:
    """T^2-scaled distillation of the S-Net onto the last C_k L-Net units."""
    c_k = s_logits.shape[-1]
    total = l_new_logits.shape[-1]
    if c_k > total:
        raise ShapeError(f"S-Net has {c_k} outputs but the L-Net head only {total}")
    teacher = T.softmax_with_temperature(s_logits.detach(), cfg.temperature)
    student = T.softmax_with_temperature(T.take_last(l_new_logits, total - c_k, total), cfg.temperature)
    return T.scale(cross_entropy_soft(teacher, student), cfg.temperature**2)


def loss_dis_short(
    l_new_logits: Tensor,
    s_logits: Tensor,
    labels: np.ndarray,
    cfg: ConsolidationConfig,
) -> Tensor:
    """(1 - beta) hard CE on the full head + beta T^2 soft CE against the S-Net.

    ``labels`` are global class indices and must fall inside the current
    task's range, i.e. the last ``C_k`` head units.
    """
    labels = np.asarray(labels)
    total, c_k = l_new_logits.shape[-1], s_logits.shape[-1]
    if labels.size and (labels.min() < total - c_k or labels.max() >= total):
        raise ValueError(f"labels must lie in [{total - c_k}, {total}) for the current task")
    parts = []
    if cfg.beta < 1.0:
        parts.append(T.scale(hard_cross_entropy(l_new_logits, labels), 1.0 - cfg.beta))
    if cfg.beta > 0.0:
        parts.append(T.scale(soft_short_term(l_new_logits, s_logits, cfg), cfg.beta))
    return parts[0] if len(parts) == 1 else T.add(parts[0], parts[1])


def loss_total(
    l_new_logits: Tensor,
    l_old_logits: Tensor,
    s_logits: Tensor,
    labels: np.ndarray,
    cfg: ConsolidationConfig,
) -> Tensor:
    return T.add(
        loss_dis_long(l_new_logits, l_old_logits, cfg),
        loss_dis_short(l_new_logits, s_logits, labels, cfg),
    )
