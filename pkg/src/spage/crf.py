"""Linear-chain CRF over emotion tags.

Transition matrices are ``(K + 2) x (K + 2)``: the K tags, then START and
STOP. Entries into START and out of STOP are -inf, as is START -> STOP
(every dialogue has at least one utterance).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .numerics import (NEG_INF, Tensor, as_tensor, concat, custom_op, linear, log_softmax,
                       logsumexp, parameter, softmax)


def start_index(K: int) -> int:
    return K


def stop_index(K: int) -> int:
    return K + 1


def forbidden_mask(K: int) -> np.ndarray:
    """Additive mask (0 / -inf) for the unusable transition entries."""
    m = np.zeros((K + 2, K + 2))
    m[:, K] = NEG_INF
    m[K + 1, :] = NEG_INF
    m[K, K + 1] = NEG_INF
    return m


@dataclass
class CrfParams:
    emit_w: Tensor  # (2 * d_model, K)
    emit_b: Tensor  # (K,)
    transitions: Tensor  # (K + 2, K + 2); forbidden entries are masked, not stored as -inf

    @classmethod
    def init(cls, rng: np.random.Generator, in_dim: int, K: int) -> CrfParams:
        lim = np.sqrt(6.0 / (in_dim + K))
        return cls(parameter(rng.uniform(-lim, lim, (in_dim, K))), parameter(np.zeros(K)),
                   parameter(rng.uniform(-0.1, 0.1, (K + 2, K + 2)) * (forbidden_mask(K) == 0)))

    @property
    def num_tags(self) -> int:
        return self.emit_b.shape[0]

    def transition_matrix(self) -> Tensor:
        return self.transitions + forbidden_mask(self.num_tags)


def emissions(h, g, params: CrfParams, raw_softmax: bool = False) -> Tensor:
    """Per-utterance tag scores from ``[h_i || g_i]``; log-probabilities by default."""
    h, g = as_tensor(h), as_tensor(g)
    if h.shape[0] != g.shape[0]:
        raise ValueError(f"h has {h.shape[0]} rows but g has {g.shape[0]}")
    logits = linear(concat([h, g], axis=-1), params.emit_w, params.emit_b)
    return softmax(logits, axis=-1) if raw_softmax else log_softmax(logits, axis=-1)


def _check(Q: np.ndarray, T: np.ndarray) -> int:
    if Q.ndim != 2 or Q.shape[0] < 1:
        raise ValueError(f"emission matrix must be (n >= 1, K), got {Q.shape}")
    K = Q.shape[1]
    if T.shape != (K + 2, K + 2):
        raise ValueError(f"transition matrix must be {(K + 2, K + 2)}, got {T.shape}")
    return K


def sequence_score(Q, T, y: Sequence[int]) -> float:
    """``sum_{i=0..n} T[y_i, y_{i+1}] + sum_{i=1..n} Q[i, y_i]`` with y_0=START, y_{n+1}=STOP."""
    Q, T = np.asarray(Q, dtype=np.float64), np.asarray(T, dtype=np.float64)
    K = _check(Q, T)
    if len(y) != Q.shape[0]:
        raise ValueError(f"tag sequence of length {len(y)} for {Q.shape[0]} utterances")
    path = [start_index(K), *(int(t) for t in y), stop_index(K)]
    trans = sum(float(T[path[i], path[i + 1]]) for i in range(len(path) - 1))
    emit = sum(float(Q[i, path[i + 1]]) for i in range(Q.shape[0]))
    return trans + emit


def _forward(Q: np.ndarray, T: np.ndarray) -> np.ndarray:
    K = Q.shape[1]
    tt = T[:K, :K]
    alpha = np.empty_like(Q)
    alpha[0] = T[start_index(K), :K] + Q[0]
    for t in range(1, Q.shape[0]):
        alpha[t] = logsumexp(alpha[t - 1][:, None] + tt, axis=0) + Q[t]
    return alpha


def _backward(Q: np.ndarray, T: np.ndarray) -> np.ndarray:
    K = Q.shape[1]
    tt = T[:K, :K]
    beta = np.empty_like(Q)
    beta[-1] = T[:K, stop_index(K)]
    for t in range(Q.shape[0] - 2, -1, -1):
        beta[t] = logsumexp(tt + (Q[t + 1] + beta[t + 1])[None, :], axis=1)
    return beta


def log_partition(Q, T) -> float:
    """log of the summed exp-scores over all K^n tag sequences (forward algorithm)."""
    Q, T = np.asarray(Q, dtype=np.float64), np.asarray(T, dtype=np.float64)
    K = _check(Q, T)
    alpha = _forward(Q, T)
    return float(logsumexp(alpha[-1] + T[:K, stop_index(K)]))


def marginals(Q, T) -> tuple[np.ndarray, np.ndarray, float]:
    """Node marginals (n x K), expected transition counts ((K+2) x (K+2)), log Z."""
    Q, T = np.asarray(Q, dtype=np.float64), np.asarray(T, dtype=np.float64)
    K = _check(Q, T)
    n = Q.shape[0]
    alpha, beta = _forward(Q, T), _backward(Q, T)
    logz = float(logsumexp(alpha[-1] + T[:K, stop_index(K)]))
    node = np.exp(alpha + beta - logz)
    counts = np.zeros_like(T)
    counts[start_index(K), :K] = node[0]
    counts[:K, stop_index(K)] = node[-1]
    tt = T[:K, :K]
    for t in range(n - 1):
        counts[:K, :K] += np.exp(alpha[t][:, None] + tt + (Q[t + 1] + beta[t + 1])[None, :] - logz)
    return node, counts, logz


def _gold_counts(y: Sequence[int], n: int, K: int) -> tuple[np.ndarray, np.ndarray]:
    onehot = np.zeros((n, K))
    onehot[np.arange(n), y] = 1.0
    counts = np.zeros((K + 2, K + 2))
    path = [start_index(K), *y, stop_index(K)]
    for a, b in zip(path[:-1], path[1:]):
        counts[a, b] += 1.0
    return onehot, counts


def nll(Q, T, y_gold: Sequence[int]) -> Tensor:
    """``log Z - score(y_gold)``, differentiable in both ``Q`` and ``T``."""
    Q, T = as_tensor(Q), as_tensor(T)
    y = [int(t) for t in y_gold]
    K = _check(Q.data, T.data)
    if len(y) != Q.shape[0] or any(not 0 <= t < K for t in y):
        raise ValueError(f"invalid tag sequence {y} for {Q.shape[0]} x {K} emissions")
    node, counts, logz = marginals(Q.data, T.data)
    # log Z >= any single score; clamp the rounding noise when one path holds all the mass
    value = max(logz - sequence_score(Q.data, T.data, y), 0.0)
    onehot, gold = _gold_counts(y, Q.shape[0], K)

    def backward(g):
        return g * (node - onehot), g * (counts - gold)

    return custom_op(np.array(value), (Q, T), backward)


def viterbi(Q, T) -> tuple[list[int], float]:
    """Best tag sequence and its score.

    Among equally scored sequences the lexicographically smallest wins: a
    backward max pass gives the best completion score from every (position,
    tag), then tags are chosen left to right taking the lowest optimal index.
    """
    Q, T = np.asarray(Q, dtype=np.float64), np.asarray(T, dtype=np.float64)
    K = _check(Q, T)
    n = Q.shape[0]
    tt = T[:K, :K]
    best_after = np.empty_like(Q)  # best score of positions t+1.. given tag at t
    best_after[-1] = T[:K, stop_index(K)]
    for t in range(n - 2, -1, -1):
        best_after[t] = np.max(tt + (Q[t + 1] + best_after[t + 1])[None, :], axis=1)
    path = [int(np.argmax(T[start_index(K), :K] + Q[0] + best_after[0]))]
    for t in range(1, n):
        path.append(int(np.argmax(tt[path[-1]] + Q[t] + best_after[t])))
    return path, sequence_score(Q, T, path)


def cross_entropy(logits, y_gold: Sequence[int]) -> Tensor:
    """Independent per-utterance loss used when the CRF is switched off."""
    logp = log_softmax(as_tensor(logits), axis=-1)
    y = np.asarray(y_gold, dtype=np.int64)
    return -(logp[np.arange(len(y)), y].sum())
