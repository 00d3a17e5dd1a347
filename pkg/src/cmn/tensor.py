"""Dense tensors with reverse-mode automatic differentiation.

Everything here is a thin layer over numpy. A ``Tensor`` wraps an ndarray and,
when it participates in a tracked computation, remembers its parents and a
closure that maps the output gradient to input gradients. ``backward`` walks
the recorded graph in reverse topological order.

Two broadcasting rules are supported and nothing else:

* over vectors and matrices, numpy-style trailing broadcast of the smaller
  operand (a bias of size ``n`` over an ``(N, n)`` batch);
* over feature maps, channel broadcast: a ``(C,)`` vector over ``C x H x W``
  or ``N x C x H x W``, and an ``(N, C)`` gate over ``N x C x H x W``.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from contextlib import contextmanager
import threading

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "NonFiniteError",
    "GraphError",
    "eager_checks",
    "set_eager_checks",
    "tensor",
    "matmul",
    "transpose",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "relu",
    "sigmoid",
    "log",
    "exp",
    "tsum",
    "mean",
    "reshape",
    "take_last",
    "conv2d",
    "global_avg_pool",
    "channel_conv1d",
    "softmax_with_temperature",
    "log_softmax",
    "elementwise",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf."""


class GraphError(RuntimeError):
    """backward() was called on something that cannot be differentiated."""


# Per-thread so that seeds trained in parallel workers cannot flip each other's mode.
_STATE = threading.local()


def set_eager_checks(enabled: bool) -> None:
    """Toggle the per-op NaN/Inf check (debug mode when on) for the calling thread."""
    _STATE.eager = bool(enabled)


def eager_checks() -> bool:
    return getattr(_STATE, "eager", True)


@contextmanager
def release_mode():
    """Disable per-op finiteness checks inside the block."""
    prev = eager_checks()
    set_eager_checks(False)
    try:
        yield
    finally:
        set_eager_checks(prev)


class Tensor:
    __slots__ = ("data", "grad", "track_grad", "op", "_parents", "_backward")

    def __init__(self, data, track_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        if arr.dtype not in (np.float32, np.float64):
            raise TypeError(f"unsupported dtype {arr.dtype}; use float32 or float64")
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.track_grad = bool(track_grad)
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", track_grad=True" if self.track_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> None:
        backward(self)


def tensor(data, track_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, track_grad=track_grad, dtype=dtype)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _check_finite(name: str, arr: np.ndarray) -> None:
    if eager_checks() and not np.isfinite(arr).all():
        raise NonFiniteError(f"{name} produced non-finite values")


def _make(op: str, data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    _check_finite(op, data)
    out = Tensor(data)
    out.op = op
    if any(p.track_grad for p in parents):
        out.track_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every tracked leaf.

    Gradients add across fan-out and across repeated calls; callers reset
    them with ``zero_grad`` between optimisation steps.
    """
    if loss.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.track_grad:
        raise GraphError("loss is detached: it depends on no tracked tensor")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.track_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.track_grad:
                continue
            _check_finite(f"grad of {node.op}", pg)
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg


# ---------------------------------------------------------------- broadcasting


def _align(big: tuple[int, ...], small: tuple[int, ...]) -> int:
    """Axis of ``big`` where ``small`` starts when broadcasting ``small`` over it.

    Maps (3-d ``C,H,W`` / 4-d ``N,C,H,W``) take channel vectors: ``(C,)`` or
    ``(N, C)`` aligned so the last axis of ``small`` lands on the channel
    axis. Vectors and matrices use numpy's trailing alignment.
    """
    if big == small:
        return 0
    if len(small) == 0:
        return len(big)
    if len(small) < len(big):
        if len(big) in (3, 4) and len(small) >= 1:
            chan = len(big) - 3
            offset = chan - len(small) + 1
            if offset >= 0 and big[offset : chan + 1] == small:
                return offset
        elif big[len(big) - len(small) :] == small:
            return len(big) - len(small)
    raise ShapeError(f"shapes {big} and {small} are not broadcast-compatible")


def _expand(arr: np.ndarray, ndim: int, offset: int) -> np.ndarray:
    return arr.reshape((1,) * offset + arr.shape + (1,) * (ndim - offset - arr.ndim))


def _reduce(grad: np.ndarray, shape: tuple[int, ...], offset: int) -> np.ndarray:
    if grad.shape == shape:
        return grad
    axes = tuple(range(offset)) + tuple(range(offset + len(shape), grad.ndim))
    return grad.sum(axis=axes).reshape(shape)


def _binary_layout(a: Tensor, b: Tensor):
    """Broadcast views of ``a`` and ``b`` plus the reducers mapping grads back."""
    if a.ndim >= b.ndim:
        off = _align(a.shape, b.shape)
        return a.data, _expand(b.data, a.ndim, off), (lambda g: g), (lambda g: _reduce(g, b.shape, off))
    off = _align(b.shape, a.shape)
    return _expand(a.data, b.ndim, off), b.data, (lambda g: _reduce(g, a.shape, off)), (lambda g: g)


# ------------------------------------------------------------------ arithmetic


def _pair(a, b) -> tuple[Tensor, Tensor]:
    like = a if isinstance(a, Tensor) else b if isinstance(b, Tensor) else None
    return _as_tensor(a, like), _as_tensor(b, like)


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    x, y, ra, rb = _binary_layout(a, b)
    return _make("add", x + y, (a, b), lambda g: (ra(g), rb(g)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return add(a, neg(b))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    x, y, ra, rb = _binary_layout(a, b)
    return _make("mul", x * y, (a, b), lambda g: (ra(g * y), rb(g * x)))


def neg(a: Tensor) -> Tensor:
    return _make("neg", -a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, c: float) -> Tensor:
    c_arr = np.asarray(c, dtype=a.dtype)
    return _make("scale", a.data * c_arr, (a,), lambda g: (g * c_arr,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} x {b.shape}")

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _make("matmul", a.data @ b.data, (a, b), bw)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got {a.shape}")
    return _make("transpose", a.data.T, (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {old} to {shape}") from exc
    return _make("reshape", out, (a,), lambda g: (g.reshape(old),))


def take_last(a: Tensor, start: int, stop: int) -> Tensor:
    """Slice ``a[..., start:stop]`` (used to split logits into task ranges)."""
    n = a.shape[-1]
    if not 0 <= start < stop <= n:
        raise ShapeError(f"slice [{start}:{stop}] out of range for last axis {n}")

    def bw(g):
        full = np.zeros_like(a.data)
        full[..., start:stop] = g
        return (full,)

    return _make("slice", a.data[..., start:stop], (a,), bw)


def tsum(a: Tensor) -> Tensor:
    shape = a.shape
    return _make("sum", np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(a: Tensor) -> Tensor:
    n = a.size
    shape = a.shape
    return _make(
        "mean",
        np.asarray(a.data.mean()),
        (a,),
        lambda g: (np.full(shape, g / n, dtype=a.dtype),),
    )


# ----------------------------------------------------------------- nonlinear


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make("relu", np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return _make("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise NonFiniteError("log of non-positive value")
    return _make("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):  # overflow surfaces as NonFiniteError instead
        e = np.exp(a.data)
    return _make("exp", e, (a,), lambda g: (g * e,))


def elementwise(kind: str, *args) -> Tensor:
    """Dispatch by name: ``relu``, ``sigmoid``, ``add`` or ``mul``."""
    table = {"relu": relu, "sigmoid": sigmoid, "add": add, "mul": mul}
    if kind not in table:
        raise ValueError(f"unknown elementwise kind {kind!r}")
    return table[kind](*args)


def softmax_with_temperature(logits: Tensor, temperature: float = 1.0) -> Tensor:
    """Softmax of ``logits / temperature`` along the last axis."""
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if logits.shape[-1] < 1:
        raise ShapeError("softmax over an empty axis")
    t = np.asarray(temperature, dtype=logits.dtype)
    z = logits.data / t
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        inner = (g * p).sum(axis=-1, keepdims=True)
        return (p * (g - inner) / t,)

    return _make("softmax", p, (logits,), bw)


def log_softmax(logits: Tensor, temperature: float = 1.0) -> Tensor:
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    t = np.asarray(temperature, dtype=logits.dtype)
    z = logits.data / t
    z = z - z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def bw(g):
        return ((g - p * g.sum(axis=-1, keepdims=True)) / t,)

    return _make("log_softmax", out, (logits,), bw)


# ---------------------------------------------------------------- spatial ops


def _batched(x: np.ndarray, ndim: int) -> tuple[np.ndarray, bool]:
    if x.ndim == ndim - 1:
        return x[None], True
    if x.ndim != ndim:
        raise ShapeError(f"expected {ndim - 1}- or {ndim}-d input, got shape {x.shape}")
    return x, False


def conv2d(x: Tensor, k: Tensor, pad: int = 0) -> Tensor:
    """Stride-1 cross-correlation of ``x`` (``C,H,W`` or ``N,C,H,W``) with ``k``.

    ``k`` has shape ``(C_out, C_in, h, w)``; zero padding ``pad`` on both
    spatial sides. Output spatial size is ``H + 2*pad - h + 1``.
    """
    xs, squeeze = _batched(x.data, 4)
    if k.ndim != 4:
        raise ShapeError(f"kernel must be 4-d, got {k.shape}")
    n, c, hh, ww = xs.shape
    co, ci, kh, kw = k.shape
    if ci != c:
        raise ShapeError(f"kernel expects {ci} input channels, input has {c}")
    if pad < 0 or int(pad) != pad:
        raise ShapeError(f"pad must be a non-negative integer, got {pad}")
    hp, wp = hh + 2 * pad, ww + 2 * pad
    if kh > hp or kw > wp:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    ho, wo = hp - kh + 1, wp - kw + 1
    xp = np.pad(xs, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xs
    kd = k.data
    out = np.zeros((n, co, ho, wo), dtype=np.result_type(xs, kd))
    for i in range(kh):
        for j in range(kw):
            out += np.einsum("ncij,oc->noij", xp[:, :, i : i + ho, j : j + wo], kd[:, :, i, j])

    def bw(g):
        g4 = g[None] if squeeze else g
        gk = np.empty_like(kd)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                win = xp[:, :, i : i + ho, j : j + wo]
                gk[:, :, i, j] = np.einsum("noij,ncij->oc", g4, win)
                gxp[:, :, i : i + ho, j : j + wo] += np.einsum("noij,oc->ncij", g4, kd[:, :, i, j])
        gx = gxp[:, :, pad : pad + hh, pad : pad + ww] if pad else gxp
        return (gx[0] if squeeze else gx), gk

    return _make("conv2d", out[0] if squeeze else out, (x, k), bw)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the two trailing spatial axes: ``C,H,W -> C``, ``N,C,H,W -> N,C``."""
    if x.ndim not in (3, 4):
        raise ShapeError(f"global_avg_pool expects C,H,W or N,C,H,W, got {x.shape}")
    h, w = x.shape[-2:]
    if h < 1 or w < 1:
        raise ShapeError("global_avg_pool on empty spatial dims")
    shape = x.shape

    def bw(g):
        return (np.broadcast_to(g[..., None, None] / (h * w), shape).copy(),)

    return _make("gap", x.data.mean(axis=(-2, -1)), (x,), bw)


def channel_conv1d(v: Tensor, w: Tensor) -> Tensor:
    """1-d zero-padded 'same' cross-correlation along the last (channel) axis.

    ``out[..., c] = sum_j w[j] * v[..., c + j - k//2]``; no bias.
    """
    if w.ndim != 1 or w.shape[0] % 2 == 0:
        raise ShapeError(f"channel kernel must be 1-d with odd length, got {w.shape}")
    k = w.shape[0]
    r = k // 2
    c = v.shape[-1]
    pad = [(0, 0)] * (v.ndim - 1) + [(r, r)]
    vp = np.pad(v.data, pad)
    out = np.zeros(v.shape, dtype=np.result_type(v.data, w.data))
    for j in range(k):
        out += w.data[j] * vp[..., j : j + c]

    def bw(g):
        gvp = np.zeros_like(vp)
        gw = np.empty_like(w.data)
        for j in range(k):
            gvp[..., j : j + c] += w.data[j] * g
            gw[j] = (g * vp[..., j : j + c]).sum()
        return gvp[..., r : r + c], gw

    return _make("channel_conv1d", out, (v, w), bw)

