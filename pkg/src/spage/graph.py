"""Dialogue graph with speaker/distance relations plus attention-based edge weights."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .numerics import Tensor, as_tensor, concat, leaky_relu, matmul, segment_softmax


@dataclass(frozen=True)
class DialogueGraph:
    """Directed edges ``src -> dst`` with relation ids and signed offsets ``src - dst``.

    Non-self relations are ``speaker * max_distance + (distance - 1)`` where
    ``speaker`` is the source utterance's speaker; every self-loop carries the
    reserved id ``self_relation == num_speakers * max_distance``.
    """

    num_nodes: int
    src: np.ndarray
    dst: np.ndarray
    relation: np.ndarray
    offset: np.ndarray
    past: int
    future: int
    num_speakers: int

    @property
    def max_distance(self) -> int:
        return max(self.past, self.future, 1)

    @property
    def self_relation(self) -> int:
        return self.num_speakers * self.max_distance

    @property
    def num_relations(self) -> int:
        """Size of the relation vocabulary including the self relation."""
        return self.self_relation + 1

    @property
    def num_edges(self) -> int:
        return len(self.src)

    def edge_set(self) -> set[tuple[int, int]]:
        return set(zip(self.src.tolist(), self.dst.tolist()))

    def relation_pair(self, rel: int) -> tuple[int, int] | None:
        """(source speaker, distance) for a relation id; None for the self relation."""
        if rel == self.self_relation:
            return None
        return rel // self.max_distance, rel % self.max_distance + 1

    def to_json(self, alpha=None, speakers=None) -> dict:
        alpha = None if alpha is None else np.asarray(alpha)
        nodes = [{"index": i} for i in range(self.num_nodes)]
        if speakers is not None:
            for node, spk in zip(nodes, speakers):
                node["speaker"] = spk
        edges = []
        for e in range(self.num_edges):
            edges.append({"src": int(self.src[e]), "dst": int(self.dst[e]),
                          "relation": int(self.relation[e]), "offset": int(self.offset[e]),
                          "alpha": None if alpha is None else float(alpha[e])})
        return {"nodes": nodes, "edges": edges, "past": self.past, "future": self.future}

    def dumps(self, alpha=None, speakers=None) -> str:
        return json.dumps(self.to_json(alpha, speakers), indent=2)


def relation_id(speaker: int, distance: int, max_distance: int) -> int:
    return speaker * max_distance + distance - 1


def build_graph(n: int, speakers: Sequence[int], past: int, future: int,
                num_speakers: int | None = None) -> DialogueGraph:
    """Window graph: ``j -> i`` iff ``-past <= j - i <= future``; self-loops always present."""
    if n < 1:
        raise ValueError("a dialogue graph needs at least one node")
    if past < 0 or future < 0:
        raise ValueError(f"window sizes must be nonnegative, got past={past} future={future}")
    spk = np.asarray(speakers, dtype=np.int64)
    if spk.shape != (n,):
        raise ValueError(f"expected {n} speaker ids, got {spk.shape}")
    if num_speakers is None:
        num_speakers = int(spk.max()) + 1
    if spk.min() < 0 or spk.max() >= num_speakers:
        raise ValueError(f"speaker ids must lie in [0, {num_speakers})")
    dmax = max(past, future, 1)
    src, dst, rel, off = [], [], [], []
    for i in range(n):
        for j in range(max(0, i - past), min(n, i + future + 1)):
            src.append(j)
            dst.append(i)
            off.append(j - i)
            rel.append(num_speakers * dmax if j == i else relation_id(spk[j], abs(j - i), dmax))
    as_int = lambda xs: np.array(xs, dtype=np.int64)
    return DialogueGraph(n, as_int(src), as_int(dst), as_int(rel), as_int(off),
                         past, future, num_speakers)


@dataclass
class EdgeAttentionHead:
    w: Tensor  # (F, F')
    a: Tensor  # (2F',): first half scores the target, second half the source


def position_row(offset: int, past: int, future: int) -> int:
    """Row of the position table for a signed offset; row ``past`` is offset 0."""
    if not -past <= offset <= future:
        raise ValueError(f"offset {offset} outside window [-{past}, {future}]")
    return offset + past


def edge_logit(g_i, g_j, offset: int, w, a, pos_table, past: int, future: int,
               slope: float = 0.2) -> Tensor:
    """Single attention logit ``LeakyReLU(a . [W g_i || (W g_j + beta)])``."""
    row = position_row(offset, past, future)
    wi = matmul(as_tensor(g_i), w)
    wj = matmul(as_tensor(g_j), w) + as_tensor(pos_table)[row]
    return leaky_relu(matmul(concat([wi, wj]), a), slope)


def edge_logits(g, graph: DialogueGraph, head: EdgeAttentionHead, pos_table,
                slope: float = 0.2) -> Tensor:
    """All edge logits for one head; vectorised form of :func:`edge_logit`."""
    g = as_tensor(g)
    width = head.w.shape[1]
    wg = matmul(g, head.w)
    a_tgt, a_src = head.a[:width], head.a[width:]
    s_tgt = matmul(wg, a_tgt)
    s_src = matmul(wg, a_src)
    s_pos = matmul(as_tensor(pos_table), a_src)
    rows = graph.offset + graph.past
    return leaky_relu(s_tgt[graph.dst] + s_src[graph.src] + s_pos[rows], slope)


def edge_weights(g, graph: DialogueGraph, heads: Sequence[EdgeAttentionHead], pos_table,
                 slope: float = 0.2) -> Tensor:
    """Per-target softmax over in-edges (self-loop included), averaged over heads."""
    total = None
    for head in heads:
        alpha = segment_softmax(edge_logits(g, graph, head, pos_table, slope),
                                graph.dst, graph.num_nodes)
        total = alpha if total is None else total + alpha
    return total / float(len(heads))
