"""Semi-adaptive graph convolution over the variable axis.

Input windows are laid out node-major as ``[B, V, T]``. Node features after
expansion are ``[B, C, V, T]``.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import tensor as T
from .layers import Conv1d, Module, Parameter
from .tensor import Tensor


class GraphPair(NamedTuple):
    Gc: Tensor
    Gsa: Tensor


def _per_node_conv(conv: Conv1d, u: Tensor) -> Tensor:
    """Apply a shared temporal conv to every node: ``[B, C_in, V, T] -> [B, C_out, V, T]``."""
    B, C, V, L = u.shape
    x = T.reshape(T.transpose(u, (0, 2, 1, 3)), (B * V, C, L))
    y = conv(x)
    return T.transpose(T.reshape(y, (B, V, y.shape[1], L)), (0, 2, 1, 3))


class SemiAdaptiveGraph(Module):
    """Graph branch: node expansion, computed similarity graph, learned graph, two-path conv.

    ``learn_graph=False`` freezes the learned graph at zero, leaving the
    computed graph alone.
    """

    def __init__(self, V: int, T_len: int, rng: np.random.Generator, c_in: int = 16,
                 c_mid: int = 8, c_out: int = 16, expand_kernel: int = 3,
                 learn_graph: bool = True, logit_scale: float | None = None):
        self.V, self.T_len = V, T_len
        self.c_in, self.c_mid, self.c_out = c_in, c_mid, c_out
        self.expand = Conv1d(1, c_in, expand_kernel, rng)           # W_f
        self.phi = Conv1d(c_in, c_mid, 1, rng)
        # a psi bias only shifts each logit row by a constant, which softmax ignores
        self.psi = Conv1d(c_in, c_mid, 1, rng, bias=False)
        self.conv_h = Conv1d(c_in, c_out, 1, rng)                   # W_h
        self.conv_g = Conv1d(c_in, c_out, 1, rng)                   # W_g
        init = rng.uniform(-1e-3, 1e-3, size=(V, V)) if learn_graph else np.zeros((V, V))
        self.A = Parameter(init, requires_grad=learn_graph)
        self.logit_scale = 1.0 / np.sqrt(c_mid * T_len) if logit_scale is None else logit_scale

    def node_expand(self, x: Tensor) -> Tensor:
        """``[B, V, T] -> [B, C_in, V, T]``, one shared conv per node."""
        B, V, L = x.shape
        if V != self.V or L != self.T_len:
            raise T.ShapeError(f"graph input {x.shape[1:]} vs configured ({self.V}, {self.T_len})")
        u = self.expand(T.reshape(x, (B * V, 1, L)))
        return T.transpose(T.reshape(u, (B, V, self.c_in, L)), (0, 2, 1, 3))

    def embeddings(self, u: Tensor) -> tuple[Tensor, Tensor]:
        """Flattened ``[B, V, C_mid*T]`` node embeddings from the two similarity convs."""
        B, _, V, L = u.shape
        flat = lambda z: T.reshape(T.transpose(z, (0, 2, 1, 3)), (B, V, self.c_mid * L))
        return flat(_per_node_conv(self.phi, u)), flat(_per_node_conv(self.psi, u))

    def computed_graph(self, u: Tensor) -> Tensor:
        a, b = self.embeddings(u)
        return similarity_graph(a, b, self.logit_scale)

    def graphs(self, u: Tensor) -> GraphPair:
        Gc = self.computed_graph(u)
        return GraphPair(Gc, Gc + self.A)

    def forward(self, x: Tensor) -> Tensor:
        """``z = conv_h(u) + conv_g(u) G_sa`` with ``u = node_expand(x)``; returns ``[B, C_out, V, T]``."""
        u = self.node_expand(x)
        _, Gsa = self.graphs(u)
        return mix_nodes(_per_node_conv(self.conv_h, u), _per_node_conv(self.conv_g, u), Gsa)


def similarity_graph(a: Tensor, b: Tensor, scale: float = 1.0) -> Tensor:
    """Row-softmax of ``scale * a_i . b_j`` over ``j``; ``a``, ``b`` are ``[..., V, D]``."""
    logits = T.matmul(a, T.swapaxes(b, -1, -2))
    if scale != 1.0:
        logits = logits * scale
    return T.softmax(logits, axis=-1)


def mix_nodes(h: Tensor, g: Tensor, Gsa: Tensor) -> Tensor:
    """``h + g @ Gsa`` along the node axis: output node j sums ``Gsa[i, j] * g_i``.

    ``h``, ``g`` are ``[B, C, V, T]``; ``Gsa`` is ``[B, V, V]`` or ``[V, V]``.
    """
    B, C, V, L = g.shape
    gt = T.reshape(T.transpose(g, (0, 1, 3, 2)), (B, C * L, V))
    mixed = T.matmul(gt, Gsa)
    mixed = T.transpose(T.reshape(mixed, (B, C, L, V)), (0, 1, 3, 2))
    return h + mixed
