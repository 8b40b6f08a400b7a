"""Context-independent utterance features: word vectors, one conv layer, max-pool, FC."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .numerics import NEG_INF, Tensor, concat, linear, max_, parameter, relu, stack

OOV = "<oov>"
_TOKEN_RE = re.compile(r"[a-z0-9]+(?:'[a-z0-9]+)*|[^\sa-z0-9]")


def tokenize(text: str) -> list[str]:
    """Lowercase, then split into word runs and single punctuation marks."""
    return _TOKEN_RE.findall(text.lower())


@dataclass
class EmbeddingTable:
    """Token -> row lookup. Row 0 is always the OOV row."""

    vocab: dict[str, int]
    vectors: np.ndarray
    oov_policy: str = "zero"

    def __post_init__(self):
        if self.vocab.get(OOV) != 0:
            raise ValueError("EmbeddingTable needs the OOV token at row 0")
        if self.oov_policy not in ("zero", "trainable"):
            raise ValueError(f"unknown OOV policy {self.oov_policy!r}")
        if self.vectors.shape[0] != len(self.vocab):
            raise ValueError(f"{len(self.vocab)} tokens but {self.vectors.shape[0]} vector rows")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def index(self, tokens: Sequence[str]) -> np.ndarray:
        if not tokens:
            return np.zeros(1, dtype=np.int64)
        return np.array([self.vocab.get(t, 0) for t in tokens], dtype=np.int64)

    @classmethod
    def build(cls, tokens: Iterable[str], vectors: dict[str, np.ndarray] | None, dim: int,
              rng: np.random.Generator, oov_policy: str = "zero") -> EmbeddingTable:
        """Table over ``tokens``. Tokens missing from ``vectors`` get small random rows
        when ``vectors`` is None (toy corpora), otherwise they fall back to OOV."""
        vocab = {OOV: 0}
        rows = [np.zeros(dim)]
        for tok in sorted(set(tokens)):
            if tok == OOV or tok in vocab:
                continue
            if vectors is None:
                vec = rng.normal(0.0, 1.0, dim)
            elif tok in vectors:
                vec = vectors[tok]
            else:
                continue
            vocab[tok] = len(rows)
            rows.append(np.asarray(vec, dtype=np.float64))
        return cls(vocab, np.stack(rows), oov_policy)


def load_word_vectors(path: str | Path, wanted: set[str] | None = None,
                      dim: int = 300) -> dict[str, np.ndarray]:
    """Read whitespace-separated ``token v1 .. vdim`` lines.

    Lines whose width is wrong are rejected; multi-word tokens (present in
    some GloVe dumps) are handled by taking the last ``dim`` fields as values.
    """
    out: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip().split(" ")
            if len(parts) < dim + 1:
                if not line.strip():
                    continue
                raise ValueError(f"{path}:{lineno}: expected {dim} values, found {len(parts) - 1}")
            token = " ".join(parts[:-dim])
            if wanted is not None and token not in wanted:
                continue
            out[token] = np.array(parts[-dim:], dtype=np.float64)
    return out


def embed_tokens(tokens: Sequence[str], table: EmbeddingTable) -> np.ndarray:
    """(len x dim) matrix of word vectors; an empty utterance becomes one OOV row."""
    return table.vectors[table.index(tokens)]


@dataclass
class EncoderParams:
    conv_w: list[Tensor]  # per kernel size: (k * dim, filters)
    conv_b: list[Tensor]
    fc_w: Tensor
    fc_b: Tensor
    kernel_sizes: tuple[int, ...]
    oov: Tensor | None = None
    embeddings: Tensor | None = None  # only when the table is fine-tuned

    @classmethod
    def init(cls, rng: np.random.Generator, dim: int, kernel_sizes: Sequence[int],
             filters: int, out_dim: int) -> EncoderParams:
        conv_w, conv_b = [], []
        for k in kernel_sizes:
            conv_w.append(parameter(_glorot(rng, k * dim, filters)))
            conv_b.append(parameter(np.zeros(filters)))
        fc_in = filters * len(kernel_sizes)
        return cls(conv_w, conv_b, parameter(_glorot(rng, fc_in, out_dim)),
                   parameter(np.zeros(out_dim)), tuple(kernel_sizes))


def _glorot(rng, fan_in, fan_out):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, (fan_in, fan_out))


def _conv_pool(x: Tensor, lengths: np.ndarray, params: EncoderParams) -> Tensor:
    """x: (B, L, dim) zero-padded token matrices with L >= max kernel size."""
    B, L, _ = x.shape
    pooled = []
    for k, w, b in zip(params.kernel_sizes, params.conv_w, params.conv_b):
        n_win = L - k + 1
        windows = concat([x[:, s:s + n_win, :] for s in range(k)], axis=-1)
        act = relu(linear(windows, w, b))
        # windows past an utterance's padded length do not exist
        valid = np.arange(n_win)[None, :] <= (np.maximum(lengths, k) - k)[:, None]
        mask = np.where(valid, 0.0, NEG_INF)[:, :, None]
        pooled.append(max_(act + mask, axis=1))
    return relu(linear(concat(pooled, axis=-1), params.fc_w, params.fc_b))


def encode_utterance(token_matrix, params: EncoderParams) -> Tensor:
    """Encode one (len x dim) token matrix into a feature vector of width d_u."""
    tm = token_matrix if isinstance(token_matrix, Tensor) else Tensor(token_matrix)
    if tm.ndim != 2 or tm.shape[0] < 1:
        raise ValueError(f"token matrix must be (len >= 1, dim), got {tm.shape}")
    return encode_batch([tm], params)[0]


def encode_batch(token_matrices: Sequence[Tensor], params: EncoderParams) -> Tensor:
    """Encode several utterances at once; returns (B, d_u)."""
    lengths = np.array([t.shape[0] for t in token_matrices])
    L = max(int(lengths.max()), max(params.kernel_sizes))
    dim = token_matrices[0].shape[1]
    rows = []
    for t in token_matrices:
        pad = L - t.shape[0]
        rows.append(concat([t, Tensor(np.zeros((pad, dim)))], axis=0) if pad else t)
    return _conv_pool(stack(rows, axis=0), lengths, params)


def lookup(ids: np.ndarray, table: EmbeddingTable, params: EncoderParams) -> Tensor:
    """Token ids -> (len x dim) tensor, honouring fine-tuning and trainable OOV."""
    if params.embeddings is not None:
        return params.embeddings[ids]
    out = Tensor(table.vectors[ids])
    if params.oov is not None:
        is_oov = (ids == 0).astype(np.float64)[:, None]
        out = out + is_oov * params.oov
    return out


# -- precomputed features ---------------------------------------------------

class FeatureFileError(ValueError):
    pass


def write_precomputed(path: str | Path, features: dict[str, np.ndarray]) -> None:
    """One JSON object per utterance: {"dialogue_id", "turn", "vector"}."""
    with open(path, "w", encoding="utf-8") as fh:
        for did, mat in features.items():
            for turn, vec in enumerate(np.asarray(mat)):
                fh.write(json.dumps({"dialogue_id": did, "turn": turn,
                                     "vector": [float(v) for v in vec]}) + "\n")


def load_precomputed(path: str | Path, expected: dict[str, int], width: int) -> dict[str, np.ndarray]:
    """Read a feature file and check it against ``expected`` (dialogue id -> turn count)."""
    rows: dict[str, dict[int, list[float]]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                did, turn, vec = str(obj["dialogue_id"]), int(obj["turn"]), obj["vector"]
            except (ValueError, KeyError, TypeError) as exc:
                raise FeatureFileError(f"{path}:{lineno}: bad feature record ({exc})") from exc
            if len(vec) != width:
                raise FeatureFileError(
                    f"{path}:{lineno}: vector width mismatch: expected {width}, found {len(vec)}")
            rows.setdefault(did, {})[turn] = vec
    out = {}
    for did, n in expected.items():
        got = rows.get(did, {})
        if sorted(got) != list(range(n)):
            raise FeatureFileError(
                f"dialogue {did!r}: expected {n} feature rows, found {len(got)}")
        out[did] = np.array([got[t] for t in range(n)], dtype=np.float64)
    extra = set(rows) - set(expected)
    if extra:
        raise FeatureFileError(f"feature rows for unknown dialogues: {sorted(extra)[:5]}")
    return out
