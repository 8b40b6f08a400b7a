"""Shared generators for tests: random graphs, tiny models, the toy corpus setup."""

from __future__ import annotations

import numpy as np

from spage.corpus import CorpusRecord, Turn, Vocabulary, encode_corpus
from spage.encoder import EmbeddingTable
from spage.graph import DialogueGraph
from spage.model import ModelConfig, SPageModel
from spage.toy import make_toy_corpus


def random_graph(rng: np.random.Generator, n: int, num_relations: int,
                 edge_prob: float = 0.5) -> DialogueGraph:
    """Arbitrary directed graph with self-loops and non-self relations in [0, num_relations)."""
    src, dst, rel = [], [], []
    for i in range(n):
        for j in range(n):
            if j == i:
                src.append(j), dst.append(i), rel.append(num_relations)
            elif rng.random() < edge_prob:
                src.append(j), dst.append(i), rel.append(int(rng.integers(num_relations)))
    as_int = lambda xs: np.array(xs, dtype=np.int64)
    s, d = as_int(src), as_int(dst)
    # one speaker slot per relation with window 1 makes self_relation == num_relations
    return DialogueGraph(n, s, d, as_int(rel), s - d, 1, 1, num_relations)


def oracle_edges(graph: DialogueGraph) -> list[tuple[int, int, int | None]]:
    return [(int(s), int(d), None if r == graph.self_relation else int(r))
            for s, d, r in zip(graph.src, graph.dst, graph.relation)]


def random_alpha(rng: np.random.Generator, graph: DialogueGraph) -> np.ndarray:
    raw = rng.random(graph.num_edges) + 0.05
    total = np.bincount(graph.dst, weights=raw, minlength=graph.num_nodes)
    return raw / total[graph.dst]


TINY = dict(word_dim=6, kernel_sizes=(1, 2), num_filters=3, d_u=6, d_model=6, tsct_heads=2,
            tsct_head_dim=3, ffn_dim=8, pag_layers=2, edge_dim=4, edge_heads=3,
            past_window=2, future_window=2, dropout=0.0, warmup_steps=10, batch_size=2)


def tiny_dialogue_records() -> list[CorpusRecord]:
    """One 4-utterance, 2-speaker dialogue over 3 labels."""
    turns = [Turn("A", "i love this great day", label="joy"),
             Turn("B", "that is awful news", label="anger"),
             Turn("A", "oh no really", label="neutral"),
             Turn("B", "yes great awful", label="joy")]
    return [CorpusRecord("fixture", turns)]


def tiny_model(**overrides):
    records = tiny_dialogue_records()
    vocab = Vocabulary.build(records)
    dialogues = encode_corpus(records, vocab)
    config = ModelConfig(**{**TINY, **overrides})
    tokens = {t for d in dialogues for utt in d.tokens for t in utt}
    table = EmbeddingTable.build(tokens, None, config.word_dim, np.random.default_rng(0))
    return SPageModel(config, vocab, table), dialogues[0]


TOY_CONFIG = dict(input_mode="text", word_dim=16, kernel_sizes=(1, 2), num_filters=8, d_u=16,
                  d_model=16, tsct_heads=2, tsct_head_dim=8, ffn_dim=32, pag_layers=2,
                  edge_dim=8, edge_heads=3, past_window=2, future_window=2, dropout=0.1,
                  lr_transformer=5e-3, lr_pag=5e-3, lr_crf=2e-2, warmup_steps=50,
                  batch_size=4, patience=10, epochs=300)


def toy_setup(train_n=40, dev_n=10, test_n=20):
    """The synthetic keyword + speaker-parity corpus split into train/dev/test."""
    train = make_toy_corpus(train_n, seed=100, prefix="train")
    dev = make_toy_corpus(dev_n, seed=200, prefix="dev")
    test = make_toy_corpus(test_n, seed=300, prefix="test")
    vocab = Vocabulary.build(train)
    enc = [encode_corpus(x, vocab) for x in (train, dev, test)]
    tokens = {t for d in enc[0] for utt in d.tokens for t in utt}
    table = EmbeddingTable.build(tokens, None, TOY_CONFIG["word_dim"], np.random.default_rng(0))
    return vocab, table, enc[0], enc[1], enc[2]
