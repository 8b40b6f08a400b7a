"""Brute-force reference implementations, used only as ground truth in tests.

Nothing here imports the model code under test; the only shared piece is
``spage.numerics.logsumexp``. Everything is written as literal loops so it can
be checked by eye against hand-computed fixtures (see test_oracles.py).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from spage.numerics import logsumexp

MAX_ENUMERATION = 10 ** 6


@dataclass
class OracleResult:
    value: object
    target: object
    abs_dev: float
    rel_dev: float


def compare(value, target) -> OracleResult:
    a, b = np.asarray(value, dtype=float), np.asarray(target, dtype=float)
    abs_dev = float(np.max(np.abs(a - b))) if a.size else 0.0
    scale = float(np.max(np.abs(b))) if b.size else 0.0
    return OracleResult(value, target, abs_dev, abs_dev / scale if scale else abs_dev)


# -- CRF ---------------------------------------------------------------------

def path_score(Q, T, y) -> float:
    """Transitions START->y_1..y_n->STOP summed first, then emissions, in order."""
    n, K = len(Q), len(Q[0])
    start, stop = K, K + 1
    trans = float(T[start][y[0]])
    for a, b in zip(y[:-1], y[1:]):
        trans += float(T[a][b])
    trans += float(T[y[-1]][stop])
    emit = 0.0
    for i in range(n):
        emit += float(Q[i][y[i]])
    return trans + emit


def crf_enumerate(Q, T):
    """(log partition, best sequence, best score) over all K^n sequences.

    Sequences are visited in lexicographic order and the best is replaced only
    on a strictly higher score, so ties go to the lexicographically smallest.
    """
    Q, T = np.asarray(Q, dtype=float), np.asarray(T, dtype=float)
    n, K = Q.shape
    if K ** n > MAX_ENUMERATION:
        raise ValueError(f"{K}^{n} sequences exceed the enumeration limit {MAX_ENUMERATION}")
    scores = []
    best, best_score = None, -math.inf
    for y in itertools.product(range(K), repeat=n):
        s = path_score(Q, T, y)
        scores.append(s)
        if s > best_score:
            best, best_score = list(y), s
    return float(logsumexp(np.array(scores))), best, best_score


# -- graph -------------------------------------------------------------------

def enumerate_edges(N: int, speakers, p: int, f: int) -> set[tuple[int, int]]:
    """Every (src, dst) pair allowed by the window rule, found by scanning all pairs."""
    edges = set()
    for i in range(N):
        for j in range(N):
            if -p <= j - i <= f:
                edges.add((j, i))
    return edges


def relation_types(N: int, speakers, p: int, f: int) -> set[tuple[object, int]]:
    """Distinct (source speaker, distance) pairs over non-self window edges."""
    return {(speakers[j], abs(j - i)) for j, i in enumerate_edges(N, speakers, p, f) if j != i}


# -- aggregation -----------------------------------------------------------------

def dense_rgcn(g, edges, alpha, w_rel, w_self, activation=None):
    """Relational aggregation by double loop over targets and relations.

    ``edges`` is a list of ``(src, dst, relation)`` with ``relation=None`` for
    the self-loop; ``alpha`` holds one weight per edge in the same order.
    """
    g = np.asarray(g, dtype=float)
    N, F = g.shape
    A = {}
    R = {}
    for (j, i, r), a in zip(edges, alpha):
        A[i, j] = float(a)
        R[i, j] = r
    relations = sorted({r for (_, _, r) in edges if r is not None})
    out = np.zeros((N, F))
    for i in range(N):
        total = np.zeros(F)
        for r in relations:
            neighbours = [j for j in range(N) if (i, j) in R and R[i, j] == r]
            for j in neighbours:
                total = total + A[i, j] / len(neighbours) * (np.asarray(w_rel[r]).T @ g[j])
        if (i, i) in R and R[i, i] is None:
            total = total + A[i, i] * (np.asarray(w_self).T @ g[i])
        out[i] = total
    if activation == "relu":
        out = np.maximum(out, 0.0)
    return out


# -- attention -----------------------------------------------------------------

def naive_attention(q, k, v, allowed=None):
    """Row-by-row scaled dot-product attention; ``allowed[i][j]`` False excludes j.

    Returns (output, weights) with weights exactly 0 at excluded positions.
    """
    q, k, v = (np.asarray(x, dtype=float) for x in (q, k, v))
    N, d = q.shape
    weights = np.zeros((N, k.shape[0]))
    for i in range(N):
        cols = [j for j in range(k.shape[0]) if allowed is None or allowed[i][j]]
        logits = [sum(q[i, t] * k[j, t] for t in range(d)) / math.sqrt(d) for j in cols]
        top = max(logits)
        e = [math.exp(x - top) for x in logits]
        z = sum(e)
        for j, ej in zip(cols, e):
            weights[i, j] = ej / z
    out = np.zeros((N, v.shape[1]))
    for i in range(N):
        for j in range(k.shape[0]):
            out[i] += weights[i, j] * v[j]
    return out, weights
