"""Layer-structured networks, ECA channel attention, init schemes, param counting."""

from __future__ import annotations

import hashlib
import math
from collections.abc import Iterable
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

LAYER_KINDS = ("linear", "conv_block")
INIT_SCHEMES = ("fan_in_uniform", "constant", "orthogonal")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    n_in: int
    n_out: int
    kernel: int = 3

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.n_in < 1 or self.n_out < 1:
            raise ValueError("layer dims must be positive")
        if self.kind == "conv_block" and (self.kernel < 1 or self.kernel % 2 == 0):
            raise ValueError("conv_block kernel must be odd and positive")

    @property
    def weight_shape(self) -> tuple[int, ...]:
        if self.kind == "linear":
            return (self.n_out, self.n_in)
        return (self.n_out, self.n_in, self.kernel, self.kernel)

    @property
    def fan_in(self) -> int:
        return self.n_in * (self.kernel**2 if self.kind == "conv_block" else 1)


@dataclass(frozen=True)
class NetworkSpec:
    """Hidden layers plus a linear head producing ``head_dim`` logits.

    ``input_shape`` is ``(d,)`` for vector inputs or ``(C, H, W)`` for maps.
    Conv blocks are 'same'-padded conv + bias + ReLU; the first linear layer
    (or the head) after a conv block sees the global-average-pooled map.
    """

    input_shape: tuple[int, ...]
    layers: tuple[LayerSpec, ...]
    head_dim: int

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.head_dim < 1:
            raise ValueError("head_dim must be >= 1")
        if len(self.input_shape) not in (1, 3):
            raise ValueError(f"input_shape must be (d,) or (C, H, W), got {self.input_shape}")
        spatial = len(self.input_shape) == 3
        width = self.input_shape[0]
        for i, layer in enumerate(self.layers):
            if layer.kind == "conv_block" and not spatial:
                raise ValueError(f"layer {i}: conv_block after vector features")
            if layer.kind == "linear":
                spatial = False
            if layer.n_in != width:
                raise ValueError(f"layer {i}: expects {layer.n_in} inputs, previous gives {width}")
            width = layer.n_out

    @property
    def head_in(self) -> int:
        return self.layers[-1].n_out if self.layers else self.input_shape[0]

    def with_head(self, head_dim: int) -> "NetworkSpec":
        return replace(self, head_dim=head_dim)


def tiny_mlp(input_dim: int, head_dim: int, width: int = 128, depth: int = 2) -> NetworkSpec:
    dims = [input_dim] + [width] * depth
    layers = tuple(LayerSpec("linear", a, b) for a, b in zip(dims, dims[1:]))
    return NetworkSpec((input_dim,), layers, head_dim)


def tiny_conv(input_shape: tuple[int, int, int], head_dim: int, channels=(8, 16)) -> NetworkSpec:
    chans = [input_shape[0], *channels]
    layers = tuple(LayerSpec("conv_block", a, b, 3) for a, b in zip(chans, chans[1:]))
    return NetworkSpec(tuple(input_shape), layers, head_dim)


def _param_names(spec: NetworkSpec) -> list[str]:
    names = []
    for i in range(len(spec.layers)):
        names += [f"layer{i}.weight", f"layer{i}.bias"]
    return names + ["head.weight", "head.bias"]


def param_shapes(spec: NetworkSpec) -> dict[str, tuple[int, ...]]:
    shapes = {}
    for i, layer in enumerate(spec.layers):
        shapes[f"layer{i}.weight"] = layer.weight_shape
        shapes[f"layer{i}.bias"] = (layer.n_out,)
    shapes["head.weight"] = (spec.head_dim, spec.head_in)
    shapes["head.bias"] = (spec.head_dim,)
    return shapes


@dataclass
class NetworkParams:
    spec: NetworkSpec
    tensors: dict[str, Tensor]
    init_scheme: str = "fan_in_uniform"

    def __post_init__(self):
        expected = param_shapes(self.spec)
        if list(self.tensors) != list(expected):
            raise ShapeError(f"param names {list(self.tensors)} do not match spec {list(expected)}")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ShapeError(f"{name}: shape {self.tensors[name].shape}, spec wants {shape}")

    def parameters(self) -> list[Tensor]:
        return list(self.tensors.values())

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return list(self.tensors.items())

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    @property
    def dtype(self):
        return self.tensors["head.weight"].dtype

    def requires_grad_(self, flag: bool) -> "NetworkParams":
        for t in self.tensors.values():
            t.track_grad = flag
            t.grad = None
        return self

    def clone(self, track_grad: bool = False) -> "NetworkParams":
        return NetworkParams(
            self.spec,
            {k: Tensor(v.data.copy(), track_grad=track_grad) for k, v in self.tensors.items()},
            self.init_scheme,
        )

    def digest(self) -> str:
        return digest_tensors(self.named_parameters())


def digest_tensors(named: Iterable[tuple[str, Tensor]]) -> str:
    h = hashlib.sha256()
    for name, t in named:
        h.update(name.encode())
        h.update(str(t.shape).encode())
        h.update(np.ascontiguousarray(t.data).tobytes())
    return h.hexdigest()


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        raise ValueError("a seed is required; initialisation must be deterministic")
    return np.random.default_rng(seed)


def init_weight(
    shape: tuple[int, ...],
    fan_in: int,
    scheme: str,
    rng: np.random.Generator,
    value: float = 1.0,
    dtype=np.float64,
) -> np.ndarray:
    """Draw one weight array. ``orthogonal`` uses QR of a Gaussian matrix."""
    if scheme == "fan_in_uniform":
        bound = math.sqrt(6.0 / fan_in)
        return rng.uniform(-bound, bound, size=shape).astype(dtype)
    if scheme == "constant":
        return np.full(shape, value, dtype=dtype)
    if scheme == "orthogonal":
        rows = shape[0]
        cols = int(np.prod(shape[1:])) if len(shape) > 1 else 1
        a = rng.standard_normal((max(rows, cols), min(rows, cols)))
        q, r = np.linalg.qr(a)
        q = q * np.sign(np.diag(r))
        if rows < cols:
            q = q.T
        return q[:rows, :cols].reshape(shape).astype(dtype)
    raise ValueError(f"unknown init scheme {scheme!r}")


def init_params(
    spec: NetworkSpec,
    scheme: str = "fan_in_uniform",
    seed=0,
    value: float = 1.0,
    dtype=np.float64,
) -> NetworkParams:
    """Fresh parameters for ``spec``; biases are zero unless ``scheme='constant'``."""
    rng = make_rng(seed)
    tensors: dict[str, Tensor] = {}
    shapes = param_shapes(spec)
    fan_ins = {f"layer{i}.weight": layer.fan_in for i, layer in enumerate(spec.layers)}
    fan_ins["head.weight"] = spec.head_in
    for name, shape in shapes.items():
        if name.endswith(".bias") and scheme != "constant":
            arr = np.zeros(shape, dtype=dtype)
        else:
            arr = init_weight(shape, fan_ins.get(name, 1), scheme, rng, value, dtype)
        tensors[name] = Tensor(arr)
    tag = f"constant({value:g})" if scheme == "constant" else scheme
    return NetworkParams(spec, tensors, tag)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    if x.shape[-1] != w.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {w.shape}")
    squeeze = x.ndim == 1
    x2 = T.reshape(x, (1, x.shape[0])) if squeeze else x
    out = T.matmul(x2, T.transpose(w))
    if b is not None:
        out = T.add(out, b)
    return T.reshape(out, (w.shape[0],)) if squeeze else out


def _is_map(h: Tensor) -> bool:
    return h.ndim in (3, 4)


def layer_forward(params: NetworkParams, i: int, h: Tensor) -> Tensor:
    """ReLU(W_i h + b_i) for hidden layer ``i``."""
    layer = params.spec.layers[i]
    w, b = params[f"layer{i}.weight"], params[f"layer{i}.bias"]
    if layer.kind == "conv_block":
        if not _is_map(h):
            raise ShapeError(f"layer {i}: conv_block needs a feature map, got {h.shape}")
        return T.relu(T.add(T.conv2d(h, w, pad=layer.kernel // 2), b))
    if _is_map(h):
        h = T.global_avg_pool(h)
    return T.relu(linear(h, w, b))


def head_forward(params: NetworkParams, h: Tensor) -> Tensor:
    if _is_map(h):
        h = T.global_avg_pool(h)
    return linear(h, params["head.weight"], params["head.bias"])


def check_input(spec: NetworkSpec, x: Tensor) -> None:
    per_example = x.shape[1:] if x.ndim == len(spec.input_shape) + 1 else x.shape
    if tuple(per_example) != spec.input_shape:
        raise ShapeError(f"input shape {x.shape} does not match network input {spec.input_shape}")


def forward_plain(params: NetworkParams, x: Tensor) -> tuple[Tensor, list[Tensor]]:
    """Raw head logits and every hidden activation, in layer order."""
    check_input(params.spec, x)
    hidden = []
    h = x
    for i in range(len(params.spec.layers)):
        h = layer_forward(params, i, h)
        hidden.append(h)
    return head_forward(params, h), hidden


# ------------------------------------------------------------------------ ECA


def eca_kernel_size(channels: int, gamma: int = 2, b: int = 1) -> int:
    """Adaptive ECA kernel: nearest odd >= 3 to |log2(C)/gamma + b/gamma|."""
    t = int(abs(math.log2(channels) / gamma + b / gamma))
    k = t if t % 2 else t + 1
    return max(k, 3)


@dataclass
class EcaParams:
    kernel: Tensor

    def __post_init__(self):
        k = self.kernel.shape[0] if self.kernel.ndim == 1 else -1
        if k < 3 or k % 2 == 0:
            raise ShapeError(f"ECA kernel must be 1-d with odd length >= 3, got {self.kernel.shape}")

    @property
    def kernel_size(self) -> int:
        return self.kernel.shape[0]

    def parameters(self) -> list[Tensor]:
        return [self.kernel]


def init_eca(channels: int, rng: np.random.Generator, dtype=np.float64, kernel_size: int | None = None) -> EcaParams:
    k = kernel_size or eca_kernel_size(channels)
    return EcaParams(Tensor(init_weight((k,), k, "fan_in_uniform", rng, dtype=dtype)))


def eca_attention(params: EcaParams, x: Tensor) -> Tensor:
    """Scale each channel of ``x`` by sigmoid(conv1d(GAP(x))).

    Accepts ``(C,)``, ``(N, C)``, ``(C, H, W)`` or ``(N, C, H, W)``; vector
    inputs act as their own pooled descriptor. Kernels wider than ``C`` are
    fine: the channel axis is zero padded.
    """
    if x.ndim not in (1, 2, 3, 4):
        raise ShapeError(f"eca_attention: unsupported input shape {x.shape}")
    pooled = T.global_avg_pool(x) if _is_map(x) else x
    s = T.sigmoid(T.channel_conv1d(pooled, params.kernel))
    return T.mul(x, s)


# ------------------------------------------------------------------ counting


def count_params(obj) -> int:
    """Exact number of scalar parameters in a network, cell, model or a list of them."""
    if obj is None:
        return 0
    if isinstance(obj, Tensor):
        return obj.size
    if isinstance(obj, (list, tuple)):
        return sum(count_params(o) for o in obj)
    if hasattr(obj, "parameters"):
        return sum(t.size for t in obj.parameters())
    raise TypeError(f"cannot count parameters of {type(obj).__name__}")


def layer_size(layer: LayerSpec) -> int:
    return int(np.prod(layer.weight_shape)) + layer.n_out


@dataclass
class EmptyNetwork:
    """Placeholder with no parameters (``count_params`` returns 0)."""

    tensors: dict = field(default_factory=dict)

    def parameters(self) -> list[Tensor]:
        return []
