"""Position-aware relational graph layers with gated fusion between layers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import DialogueGraph, EdgeAttentionHead, edge_weights
from .numerics import (ACTIVATIONS, Tensor, as_tensor, concat, index_add, linear, matmul,
                       parameter, sigmoid)


@dataclass
class PagLayerParams:
    w_rel: Tensor  # (R, F, F): one matrix per non-self relation
    w_self: Tensor  # (F, F)
    heads: list[EdgeAttentionHead]
    fuse_w: Tensor  # (4F, F)
    fuse_b: Tensor  # (F,)


@dataclass
class PagParams:
    layers: list[PagLayerParams] = field(default_factory=list)
    pos_table: Tensor | None = None  # (past + future + 1, F'), shared by all layers

    @classmethod
    def init(cls, rng: np.random.Generator, width: int, num_relations: int, num_layers: int,
             edge_dim: int, edge_heads: int, past: int, future: int) -> PagParams:
        def glorot(*shape, fan_in, fan_out):
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            return parameter(rng.uniform(-lim, lim, shape))

        layers = []
        for _ in range(num_layers):
            heads = [EdgeAttentionHead(glorot(width, edge_dim, fan_in=width, fan_out=edge_dim),
                                       glorot(2 * edge_dim, fan_in=2 * edge_dim, fan_out=1))
                     for _ in range(edge_heads)]
            layers.append(PagLayerParams(
                w_rel=glorot(num_relations, width, width, fan_in=width, fan_out=width),
                w_self=glorot(width, width, fan_in=width, fan_out=width),
                heads=heads,
                fuse_w=glorot(4 * width, width, fan_in=4 * width, fan_out=width),
                fuse_b=parameter(np.zeros(width)),
            ))
        pos = parameter(rng.normal(0.0, 0.1, (past + future + 1, edge_dim)))
        return cls(layers, pos)


def relation_counts(graph: DialogueGraph) -> np.ndarray:
    """|N_i^r| for every edge's (target, relation) pair."""
    key = graph.dst * graph.num_relations + graph.relation
    _, inverse, counts = np.unique(key, return_inverse=True, return_counts=True)
    return counts[inverse].astype(np.float64)


def aggregate(g_prev, graph: DialogueGraph, alpha, layer: PagLayerParams,
              activation: str = "relu") -> Tensor:
    """Relational message passing reweighted by edge attention.

    ``g_i = act( sum_r sum_{j in N_i^r} alpha_ij / |N_i^r| * W_r g_j + alpha_ii * W_o g_i )``
    """
    g_prev, alpha = as_tensor(g_prev), as_tensor(alpha)
    n = graph.num_nodes
    # canonical (dst, src) order makes the float summation independent of edge order
    order = np.lexsort((graph.src, graph.dst))
    src, dst, rel = graph.src[order], graph.dst[order], graph.relation[order]
    alpha = alpha[order]
    is_self = rel == graph.self_relation

    coef = alpha / relation_counts(graph)[order]
    nb = np.flatnonzero(~is_self)
    self_idx = np.flatnonzero(is_self)

    parts = []
    if nb.size:
        present, local = np.unique(rel[nb], return_inverse=True)
        transformed = matmul(g_prev, layer.w_rel[present])  # (P, N, F)
        msgs = transformed[local, src[nb]] * coef[nb].reshape(-1, 1)
        parts.append((dst[nb], msgs))
    if self_idx.size:
        own = matmul(g_prev[src[self_idx]], layer.w_self) * coef[self_idx].reshape(-1, 1)
        parts.append((dst[self_idx], own))
    if not parts:
        raise ValueError("graph has no edges")

    index = np.concatenate([p[0] for p in parts])
    msgs = concat([p[1] for p in parts], axis=0)
    resort = np.argsort(index, kind="stable")
    pre = index_add(n, index[resort], msgs[resort])
    return ACTIVATIONS[activation](pre)


def fuse(a, b, w, bias) -> Tensor:
    """Gated sum ``z*a + (1-z)*b`` with ``z = sigmoid(W[a; b; a*b; a-b] + bias)``.

    Evaluated as the two-sided lerp ``b + z*(a-b)`` for z < 1/2 and
    ``a - (1-z)*(a-b)`` otherwise: equal inputs come back bit-exact, a
    saturated gate returns exactly ``a`` or ``b``, and rounding can never push
    a coordinate outside ``[min(a, b), max(a, b)]``.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"fuse needs equal widths, got {a.shape} and {b.shape}")
    diff = a - b
    z = sigmoid(linear(concat([a, b, a * b, diff], axis=-1), w, bias))
    upper = (z.data >= 0.5).astype(np.float64)
    return upper * (a - (1.0 - z) * diff) + (1.0 - upper) * (b + z * diff)


def pag_forward(h, graph: DialogueGraph, params: PagParams, activation: str = "relu",
                slope: float = 0.2, return_alpha: bool = False):
    """Refine TSCT features through the stacked layers; returns g (and per-layer alphas)."""
    g = as_tensor(h)
    if g.shape[0] != graph.num_nodes:
        raise ValueError(f"{g.shape[0]} feature rows for a {graph.num_nodes}-node graph")
    alphas = []
    for layer in params.layers:
        alpha = edge_weights(g, graph, layer.heads, params.pos_table, slope)
        alphas.append(alpha)
        new = aggregate(g, graph, alpha, layer, activation)
        g = fuse(new, g, layer.fuse_w, layer.fuse_b)
    return (g, alphas) if return_alpha else g
