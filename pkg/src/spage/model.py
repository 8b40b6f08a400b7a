"""Model configuration, parameter bundle and the three-stage forward pipeline."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

from . import crf as crf_mod
from .corpus import Dialogue, Vocabulary
from .encoder import EmbeddingTable, EncoderParams, encode_batch, lookup
from .graph import DialogueGraph, build_graph
from .numerics import Tensor, no_grad, parameter
from .pag import PagParams, pag_forward
from .tsct import TsctParams, tsct_forward


@dataclass
class ModelConfig:
    # utterance input
    input_mode: str = "text"  # "text" or "features"
    word_dim: int = 300
    kernel_sizes: tuple[int, ...] = (3, 4, 5)
    num_filters: int = 100
    freeze_embeddings: bool = True
    oov_policy: str = "zero"
    d_u: int = 300
    # contextual stage
    d_model: int = 300
    tsct_heads: int = 8
    tsct_head_dim: int = 0  # 0: d_model // tsct_heads
    tsct_layers: int = 1
    ffn_dim: int = 0  # 0: 4 * d_model
    tsct_residual: bool = False
    # graph stage
    pag_layers: int = 2
    edge_dim: int = 64
    edge_heads: int = 3
    past_window: int = 10
    future_window: int = 10
    pag_activation: str = "relu"
    leaky_slope: float = 0.2
    # consistency stage
    raw_softmax_emissions: bool = False
    # ablation switches
    use_tsct: bool = True
    use_pag: bool = True
    use_crf: bool = True
    # optimisation
    dropout: float = 0.1
    lr_transformer: float = 1e-4
    lr_pag: float = 2e-3
    lr_crf: float = 2e-2
    weight_decay: float = 0.01
    warmup_steps: int = 400
    epochs: int = 100
    batch_size: int = 8
    grad_clip: float = 5.0
    patience: int = 10
    seed: int = 0
    layer_norm_eps: float = 1e-5
    # evaluation
    micro_exclude_label: str | None = None
    # filled in from the training data
    num_labels: int = 0
    num_speakers: int = 0

    def __post_init__(self):
        self.kernel_sizes = tuple(int(k) for k in self.kernel_sizes)

    @property
    def head_dim(self) -> int:
        return self.tsct_head_dim or max(1, self.d_model // self.tsct_heads)

    @property
    def ffn_width(self) -> int:
        return self.ffn_dim or 4 * self.d_model

    def validate(self) -> None:
        positive = ["word_dim", "num_filters", "d_u", "d_model", "tsct_heads", "edge_dim",
                    "edge_heads", "epochs", "batch_size"]
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ["tsct_layers", "pag_layers", "past_window", "future_window",
                     "warmup_steps", "patience", "tsct_head_dim", "ffn_dim"]:
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative, got {getattr(self, name)}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.input_mode not in ("text", "features"):
            raise ValueError(f"input_mode must be 'text' or 'features', got {self.input_mode!r}")
        if not self.kernel_sizes or min(self.kernel_sizes) < 1:
            raise ValueError(f"bad kernel sizes {self.kernel_sizes}")
        for name in ["lr_transformer", "lr_pag", "lr_crf"]:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["kernel_sizes"] = list(self.kernel_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes) -> ModelConfig:
        return dataclasses.replace(self, **changes)


def named_tensors(obj, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    """Walk nested dataclasses/lists and yield every Tensor with a dotted path."""
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from named_tensors(item, f"{prefix}.{i}")
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            yield from named_tensors(getattr(obj, f.name), f"{prefix}.{f.name}" if prefix else f.name)


class Forward(NamedTuple):
    emissions: Tensor  # Q, n x K
    h: Tensor
    g: Tensor
    graph: DialogueGraph
    alphas: list


PARAM_GROUPS = ("transformer", "pag", "crf")


def param_group(name: str) -> str:
    head = name.split(".", 1)[0]
    return {"encoder": "transformer", "tsct": "transformer", "pag": "pag", "crf": "crf"}[head]


@dataclass
class Params:
    encoder: EncoderParams | None
    tsct: TsctParams
    pag: PagParams | None
    crf: crf_mod.CrfParams


class SPageModel:
    """Encoder -> TSCT -> PAG -> CRF with the vocabularies needed to run it."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary,
                 table: EmbeddingTable | None = None):
        config.num_labels = len(vocab.labels)
        config.num_speakers = vocab.num_speakers
        config.validate()
        if config.input_mode == "text" and table is None:
            raise ValueError("text input needs an embedding table")
        self.config = config
        self.vocab = vocab
        self.table = table
        self.params = self._init_params(np.random.default_rng(config.seed))

    # -- construction ---------------------------------------------------------
    def _init_params(self, rng: np.random.Generator) -> Params:
        c = self.config
        enc = None
        if c.input_mode == "text":
            enc = EncoderParams.init(rng, self.table.dim, c.kernel_sizes, c.num_filters, c.d_u)
            if not c.freeze_embeddings:
                enc.embeddings = parameter(self.table.vectors.copy())
            elif c.oov_policy == "trainable":
                enc.oov = parameter(np.zeros((1, self.table.dim)))
        tsct = TsctParams.init(rng, c.d_u, c.d_model, c.tsct_heads, c.head_dim, c.ffn_width,
                               c.tsct_layers, two_stream=c.use_tsct)
        pag = None
        if c.use_pag:
            pag = PagParams.init(rng, c.d_model, self.num_relations, c.pag_layers, c.edge_dim,
                                 c.edge_heads, c.past_window, c.future_window)
        crf = crf_mod.CrfParams.init(rng, 2 * c.d_model, c.num_labels)
        return Params(enc, tsct, pag, crf)

    @property
    def num_relations(self) -> int:
        """Non-self relation vocabulary: dataset speakers x max window distance."""
        c = self.config
        return c.num_speakers * max(c.past_window, c.future_window, 1)

    def named_parameters(self) -> dict[str, Tensor]:
        return dict(named_tensors(self.params))

    def parameter_groups(self) -> dict[str, list[Tensor]]:
        groups: dict[str, list[Tensor]] = {g: [] for g in PARAM_GROUPS}
        for name, p in self.named_parameters().items():
            groups[param_group(name)].append(p)
        return groups

    def zero_grad(self) -> None:
        for p in self.named_parameters().values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = self.named_parameters()
        if set(own) != set(state):
            missing, extra = sorted(set(own) - set(state)), sorted(set(state) - set(own))
            raise ValueError(f"parameter mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
        for k, p in own.items():
            if p.shape != state[k].shape:
                raise ValueError(f"{k}: expected shape {p.shape}, got {state[k].shape}")
            p.data = np.array(state[k], dtype=np.float64)

    # -- forward --------------------------------------------------------------
    def utterance_features(self, dialogue: Dialogue) -> Tensor:
        if self.config.input_mode == "features":
            if dialogue.features is None:
                raise ValueError(f"dialogue {dialogue.dialogue_id!r} has no feature vectors")
            if dialogue.features.shape[1] != self.config.d_u:
                raise ValueError(f"feature width {dialogue.features.shape[1]} != d_u {self.config.d_u}")
            return Tensor(dialogue.features)
        if dialogue.tokens is None:
            raise ValueError(f"dialogue {dialogue.dialogue_id!r} has no text")
        mats = [lookup(self.table.index(toks), self.table, self.params.encoder)
                for toks in dialogue.tokens]
        return encode_batch(mats, self.params.encoder)

    def graph(self, dialogue: Dialogue) -> DialogueGraph:
        c = self.config
        return build_graph(len(dialogue), dialogue.speakers, c.past_window, c.future_window,
                           num_speakers=c.num_speakers)

    def forward(self, dialogue: Dialogue, training: bool = False,
                rng: np.random.Generator | None = None) -> Forward:
        c = self.config
        rate = c.dropout if training else 0.0
        U = self.utterance_features(dialogue)
        h = tsct_forward(U, dialogue.local_speakers, self.params.tsct, residual=c.tsct_residual,
                         dropout_rate=rate, rng=rng, training=training, eps=c.layer_norm_eps)
        graph = self.graph(dialogue)
        alphas: list = []
        if self.params.pag is not None:
            g, alphas = pag_forward(h, graph, self.params.pag, c.pag_activation, c.leaky_slope,
                                    return_alpha=True)
        else:
            g = h
        raw = c.raw_softmax_emissions and c.use_crf
        Q = crf_mod.emissions(h, g, self.params.crf, raw_softmax=raw)
        return Forward(Q, h, g, graph, alphas)

    def loss(self, dialogue: Dialogue, training: bool = False,
             rng: np.random.Generator | None = None) -> Tensor:
        if dialogue.labels is None:
            raise ValueError(f"dialogue {dialogue.dialogue_id!r} has no labels")
        out = self.forward(dialogue, training, rng)
        if self.config.use_crf:
            return crf_mod.nll(out.emissions, self.params.crf.transition_matrix(), dialogue.labels)
        y = np.asarray(dialogue.labels)
        return -(out.emissions[np.arange(len(y)), y].sum())

    def decode(self, out: Forward) -> list[int]:
        if self.config.use_crf:
            T = self.params.crf.transition_matrix().data
            return crf_mod.viterbi(out.emissions.data, T)[0]
        return [int(k) for k in np.argmax(out.emissions.data, axis=1)]

    def predict(self, dialogue: Dialogue) -> list[int]:
        with no_grad():
            return self.decode(self.forward(dialogue))


def forward_pipeline(dialogue: Dialogue, model: SPageModel, training: bool = False,
                     rng: np.random.Generator | None = None) -> Forward:
    """Run all three stages on one dialogue, honouring the ablation switches."""
    return model.forward(dialogue, training, rng)
