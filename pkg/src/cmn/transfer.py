"""Gated transfer of long-term (L-Net) features into the short-term net (S-Net).

One connector sits after every hidden layer. The full ``TransferCell`` runs
memory processing (ECA attention + projection + ReLU), a per-channel recall
gate, and additive integration. ``LinearAdapter`` and ``DirectLink`` are the
stripped-down strategies used in the transfer ablation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import (
    EcaParams,
    NetworkParams,
    NetworkSpec,
    eca_attention,
    forward_plain,
    head_forward,
    init_eca,
    init_weight,
    layer_forward,
    linear,
    make_rng,
)
from .tensor import ShapeError, Tensor

STRATEGIES = ("cell", "none", "matrix", "direct")


def _pool(h: Tensor) -> Tensor:
    return T.global_avg_pool(h) if h.ndim in (3, 4) else h


def _project(h: Tensor, w: Tensor) -> Tensor:
    """Channel-mixing map ``w`` (out x in): a matmul on vectors, a 1x1 conv on maps."""
    if h.ndim in (3, 4):
        return T.conv2d(h, T.reshape(w, w.shape + (1, 1)))
    return linear(h, w)


@dataclass
class TransferCell:
    eca: EcaParams
    proj: Tensor
    e_bar: Tensor
    e_tilde: Tensor
    bias: Tensor

    def __post_init__(self):
        c_s, c_l = self.proj.shape
        if self.e_bar.shape != (c_s, c_l):
            raise ShapeError(f"e_bar must be {(c_s, c_l)}, got {self.e_bar.shape}")
        if self.e_tilde.shape[0] != c_s or self.e_tilde.ndim != 2:
            raise ShapeError(f"e_tilde must map to {c_s} gate channels, got {self.e_tilde.shape}")
        if self.bias.shape != (c_s,):
            raise ShapeError(f"gate bias must be ({c_s},), got {self.bias.shape}")

    @property
    def l_channels(self) -> int:
        return self.proj.shape[1]

    @property
    def s_channels(self) -> int:
        return self.proj.shape[0]

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return [
            ("eca.kernel", self.eca.kernel),
            ("proj", self.proj),
            ("e_bar", self.e_bar),
            ("e_tilde", self.e_tilde),
            ("bias", self.bias),
        ]

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]


@dataclass
class LinearAdapter:
    """PNN-style lateral connection: ``h_s + W h_l``, no gate, no attention."""

    weight: Tensor

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return [("weight", self.weight)]

    def parameters(self) -> list[Tensor]:
        return [self.weight]


@dataclass
class DirectLink:
    """Raw addition of L-Net features onto S-Net features."""

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return []

    def parameters(self) -> list[Tensor]:
        return []


def make_cell(c_l: int, c_s: int, seed, dtype=np.float64) -> TransferCell:
    """Gate embeddings start at constant 1 and the bias at 0; ECA and P are fan-in uniform."""
    rng = make_rng(seed)
    eca = init_eca(c_l, rng, dtype)
    proj = init_weight((c_s, c_l), c_l, "fan_in_uniform", rng, dtype=dtype)
    return TransferCell(
        eca=eca,
        proj=Tensor(proj),
        e_bar=Tensor(np.ones((c_s, c_l), dtype=dtype)),
        e_tilde=Tensor(np.ones((c_s, c_s), dtype=dtype)),
        bias=Tensor(np.zeros(c_s, dtype=dtype)),
    )


def make_connectors(strategy: str, l_spec: NetworkSpec, s_spec: NetworkSpec, seed, dtype=np.float64) -> list:
    """One connector per hidden layer for the given transfer strategy."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown transfer strategy {strategy!r}; expected one of {STRATEGIES}")
    if strategy == "none":
        return []
    if len(l_spec.layers) != len(s_spec.layers):
        raise ShapeError("L-Net and S-Net must have the same number of hidden layers")
    rng = make_rng(seed)
    out = []
    for ll, sl in zip(l_spec.layers, s_spec.layers):
        if ll.kind != sl.kind:
            raise ShapeError("L-Net and S-Net layer kinds differ")
        if strategy == "cell":
            out.append(make_cell(ll.n_out, sl.n_out, rng, dtype))
        elif strategy == "matrix":
            w = init_weight((sl.n_out, ll.n_out), ll.n_out, "fan_in_uniform", rng, dtype=dtype)
            out.append(LinearAdapter(Tensor(w)))
        else:
            if ll.n_out != sl.n_out:
                raise ShapeError("direct transfer needs equal feature widths")
            out.append(DirectLink())
    return out


def memory_processing(cell: TransferCell, h_check: Tensor) -> Tensor:
    """ReLU(P . eca(h_check)): L-Net features mapped into S-Net feature space."""
    chan = h_check.shape[-3] if h_check.ndim in (3, 4) else h_check.shape[-1]
    if chan != cell.l_channels:
        raise ShapeError(f"cell expects {cell.l_channels} L-Net channels, got {chan}")
    return T.relu(_project(eca_attention(cell.eca, h_check), cell.proj))


def recall_gate(cell: TransferCell, h_check: Tensor, h_tilde: Tensor) -> Tensor:
    """Per-channel gate sigmoid(E_bar GAP(h_check) + E_tilde GAP(h_tilde) + b), in (0, 1)."""
    p_l, p_s = _pool(h_check), _pool(h_tilde)
    if p_l.shape[-1] != cell.e_bar.shape[1] or p_s.shape[-1] != cell.e_tilde.shape[1]:
        raise ShapeError(f"gate inputs {h_check.shape}, {h_tilde.shape} do not match the cell")
    return T.sigmoid(T.add(T.add(linear(p_l, cell.e_bar), linear(p_s, cell.e_tilde)), cell.bias))


def memory_integration(h_tilde: Tensor, g: Tensor, h_vec: Tensor) -> Tensor:
    """h_tilde + g * h_vec with the gate broadcast over spatial positions."""
    if h_tilde.shape != h_vec.shape:
        raise ShapeError(f"integration needs equal shapes, got {h_tilde.shape} and {h_vec.shape}")
    return T.add(h_tilde, T.mul(h_vec, g))


def integrate(conn, h_check: Tensor, h_tilde: Tensor) -> Tensor:
    if isinstance(conn, TransferCell):
        h_vec = memory_processing(conn, h_check)
        return memory_integration(h_tilde, recall_gate(conn, h_check, h_tilde), h_vec)
    if isinstance(conn, LinearAdapter):
        return T.add(h_tilde, _project(h_check, conn.weight))
    if isinstance(conn, DirectLink):
        return T.add(h_tilde, h_check)
    raise TypeError(f"unknown connector {type(conn).__name__}")


def transfer_forward(
    cells: list,
    s_params: NetworkParams,
    l_params: NetworkParams | None,
    x: Tensor,
    bypass: bool = False,
) -> Tensor:
    """S-Net logits with L-Net features merged in after every hidden layer.

    The L-Net forward runs on detached copies of its weights, so no graph
    ever reaches the long-term parameters. ``bypass=True`` (or no cells)
    reproduces ``forward_plain`` exactly.
    """
    if bypass or not cells:
        return forward_plain(s_params, x)[0]
    n_layers = len(s_params.spec.layers)
    if len(cells) != n_layers:
        raise ShapeError(f"{len(cells)} cells for {n_layers} hidden layers")
    if l_params is None:
        raise ValueError("transfer needs an L-Net")
    l_hidden = frozen_features(l_params, x)
    h = x
    for i in range(n_layers):
        h = layer_forward(s_params, i, h)
        h = integrate(cells[i], l_hidden[i], h)
    return head_forward(s_params, h)


def frozen_features(l_params: NetworkParams, x: Tensor) -> list[Tensor]:
    detached = NetworkParams(l_params.spec, {k: v.detach() for k, v in l_params.tensors.items()})
    _, hidden = forward_plain(detached, x)
    return hidden
