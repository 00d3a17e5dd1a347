"""Central finite-difference checks for the autodiff engine."""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckResult:
    max_rel_err: float
    max_abs_err: float
    worst: str
    passed: bool


def numerical_grad(f: Callable[[], Tensor], param: Tensor, eps: float = 1e-5) -> np.ndarray:
    """d f / d param by central differences, perturbing ``param.data`` in place."""
    flat = param.data.reshape(-1)
    out = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f().data)
        flat[i] = orig - eps
        fm = float(f().data)
        flat[i] = orig
        out[i] = (fp - fm) / (2 * eps)
    return out.reshape(param.shape)


def check_gradients(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    rtol: float = 1e-4,
    atol: float = 1e-8,
) -> GradCheckResult:
    """Compare analytic and numerical gradients of scalar ``f`` w.r.t. ``params``.

    An entry passes when ``|a - n| <= atol`` or ``|a - n| / max(|a|, |n|) < rtol``.
    All params must be float64; the check is meaningless at single precision.
    """
    for p in params:
        if p.dtype != np.float64:
            raise TypeError("gradient checks require float64 tensors")
        p.grad = None
    f().backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst_rel, worst_abs, worst = 0.0, 0.0, ""
    passed = True
    for k, (p, a) in enumerate(zip(params, analytic)):
        n = numerical_grad(f, p, eps)
        diff = np.abs(a - n)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-300)
        rel = np.where(diff <= atol, 0.0, diff / denom)
        if rel.size:
            i = int(rel.argmax())
            if rel.flat[i] > worst_rel:
                worst_rel, worst = float(rel.flat[i]), f"param {k} index {i}"
            worst_abs = max(worst_abs, float(diff.max()))
            passed &= bool((rel < rtol).all())
    for p in params:
        p.grad = None
    return GradCheckResult(worst_rel, worst_abs, worst, passed)
