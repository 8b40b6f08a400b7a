"""Two-stream conversational transformer.

Each head computes one projection triple (q, k, v) and attends twice: once
over the whole dialogue (inter-speaker stream) and once restricted to the
utterances of the same speaker (intra-speaker stream). The two head outputs
are concatenated, all heads are concatenated, projected back to the model
width and passed through ``LayerNorm(FeedForward(.))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .numerics import (NEG_INF, Tensor, as_tensor, concat, dropout, layer_norm, linear,
                       matmul, parameter, relu, softmax)


def build_mask(speakers: Sequence) -> np.ndarray:
    """Additive attention mask: 0 where two utterances share a speaker, -inf elsewhere."""
    spk = np.asarray(speakers)
    if spk.size == 0:
        raise ValueError("build_mask needs at least one utterance")
    return np.where(spk[:, None] == spk[None, :], 0.0, NEG_INF)


def _attend(q: Tensor, k: Tensor, v: Tensor, mask=None, *, rate: float = 0.0,
            rng=None, training: bool = False) -> tuple[Tensor, Tensor]:
    d = q.shape[-1]
    scores = matmul(q, k.transpose(*range(k.ndim - 2), k.ndim - 1, k.ndim - 2)) / np.sqrt(d)
    weights = softmax(scores, axis=-1, mask=mask)
    return matmul(dropout(weights, rate, rng, training), v), weights


def _qkv(H, wq, wk, wv):
    H = as_tensor(H)
    return matmul(H, wq), matmul(H, wk), matmul(H, wv)


def inter_attention(H, wq, wk, wv, return_weights: bool = False):
    """Full self-attention for a single head; returns (N, d)."""
    out, w = _attend(*_qkv(H, wq, wk, wv))
    return (out, w) if return_weights else out


def intra_attention(H, wq, wk, wv, mask, return_weights: bool = False):
    """Same-speaker self-attention for a single head; ``mask`` from :func:`build_mask`."""
    out, w = _attend(*_qkv(H, wq, wk, wv), mask=mask)
    return (out, w) if return_weights else out


@dataclass
class TsctLayerParams:
    wq: Tensor  # (M, d_model, d), shared by both streams
    wk: Tensor
    wv: Tensor
    wo: Tensor  # (streams * M * d, d_model)
    ff_w1: Tensor
    ff_b1: Tensor
    ff_w2: Tensor
    ff_b2: Tensor
    ln_gain: Tensor
    ln_bias: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, d_model: int, heads: int, head_dim: int,
             ffn_dim: int, streams: int = 2) -> TsctLayerParams:
        def g(*shape, fan_in, fan_out):
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            return parameter(rng.uniform(-lim, lim, shape))

        return cls(
            wq=g(heads, d_model, head_dim, fan_in=d_model, fan_out=head_dim),
            wk=g(heads, d_model, head_dim, fan_in=d_model, fan_out=head_dim),
            wv=g(heads, d_model, head_dim, fan_in=d_model, fan_out=head_dim),
            wo=g(streams * heads * head_dim, d_model,
                 fan_in=streams * heads * head_dim, fan_out=d_model),
            ff_w1=g(d_model, ffn_dim, fan_in=d_model, fan_out=ffn_dim),
            ff_b1=parameter(np.zeros(ffn_dim)),
            ff_w2=g(ffn_dim, d_model, fan_in=ffn_dim, fan_out=d_model),
            ff_b2=parameter(np.zeros(d_model)),
            ln_gain=parameter(np.ones(d_model)),
            ln_bias=parameter(np.zeros(d_model)),
        )


@dataclass
class TsctParams:
    layers: list[TsctLayerParams] = field(default_factory=list)
    input_proj: Tensor | None = None  # (d_u, d_model), only when widths differ
    two_stream: bool = True

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, d_model: int, heads: int,
             head_dim: int, ffn_dim: int, num_layers: int, two_stream: bool = True) -> TsctParams:
        proj = None
        if d_in != d_model:
            lim = np.sqrt(6.0 / (d_in + d_model))
            proj = parameter(rng.uniform(-lim, lim, (d_in, d_model)))
        streams = 2 if two_stream else 1
        layers = [TsctLayerParams.init(rng, d_model, heads, head_dim, ffn_dim, streams)
                  for _ in range(num_layers)]
        return cls(layers, proj, two_stream)


def feed_forward(x: Tensor, p: TsctLayerParams) -> Tensor:
    return linear(relu(linear(x, p.ff_w1, p.ff_b1)), p.ff_w2, p.ff_b2)


def tsct_layer(H, speakers: Sequence, p: TsctLayerParams, *, two_stream: bool = True,
               residual: bool = False, dropout_rate: float = 0.0, rng=None,
               training: bool = False, eps: float = 1e-5, mask=None) -> Tensor:
    """One layer. With ``two_stream=False`` this is the single-stream (vanilla) variant."""
    H = as_tensor(H)
    n = H.shape[0]
    q, k, v = _qkv(H, p.wq, p.wk, p.wv)  # (M, N, d)
    f, _ = _attend(q, k, v, rate=dropout_rate, rng=rng, training=training)
    parts = [f]
    if two_stream:
        if mask is None:
            mask = build_mask(speakers)
        z, _ = _attend(q, k, v, mask=mask, rate=dropout_rate, rng=rng, training=training)
        parts.append(z)
    heads = concat(parts, axis=-1)  # (M, N, streams*d): head_i = f_i || z_i
    multi = heads.transpose(1, 0, 2).reshape(n, -1)
    x = matmul(multi, p.wo)
    ff = dropout(feed_forward(x, p), dropout_rate, rng, training)
    if residual:
        ff = ff + H
    return layer_norm(ff, p.ln_gain, p.ln_bias, eps)


def tsct_forward(U, speakers: Sequence, params: TsctParams, *, residual: bool = False,
                 dropout_rate: float = 0.0, rng=None, training: bool = False,
                 eps: float = 1e-5) -> Tensor:
    """Stack of layers over utterance features ``U`` (N x d_u); returns the h_i (N x d_model)."""
    H = as_tensor(U)
    if H.shape[0] != len(speakers):
        raise ValueError(f"{H.shape[0]} utterances but {len(speakers)} speakers")
    if params.input_proj is not None:
        H = matmul(H, params.input_proj)
    mask = build_mask(speakers) if params.two_stream else None
    for layer in params.layers:
        H = tsct_layer(H, speakers, layer, two_stream=params.two_stream, residual=residual,
                       dropout_rate=dropout_rate, rng=rng, training=training, eps=eps,
                       mask=mask)
    return H
