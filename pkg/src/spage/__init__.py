"""Emotion recognition in conversation: speaker-masked attention, a relational dialogue graph, CRF decoding."""

from .corpus import CorpusRecord, Dialogue, Turn, Vocabulary, encode_corpus, load_corpus
from .model import ModelConfig, SPageModel, forward_pipeline
from .train import Metrics, compute_metrics, evaluate, sweep, train_model

__version__ = "0.1.0"

__all__ = [
    "CorpusRecord", "Dialogue", "Metrics", "ModelConfig", "SPageModel", "Turn", "Vocabulary",
    "compute_metrics", "encode_corpus", "evaluate", "forward_pipeline", "load_corpus", "sweep",
    "train_model",
]
