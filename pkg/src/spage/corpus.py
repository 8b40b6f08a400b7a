"""JSON Lines dialogue corpora, vocabularies and the encoded ``Dialogue`` form.

One dialogue per line::

    {"dialogue_id": "d1", "turns": [{"speaker": "A", "text": "hi", "label": "joy"}, ...]}

A turn carries either ``text`` or a precomputed ``vector``; ``label`` is
optional at inference time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .encoder import tokenize

UNK_SPEAKER = "<unk>"


class CorpusError(ValueError):
    """Malformed corpus content (bad JSON, missing fields, unknown labels)."""


@dataclass
class Turn:
    speaker: str
    text: str | None = None
    vector: list[float] | None = None
    label: str | None = None


@dataclass
class CorpusRecord:
    dialogue_id: str
    turns: list[Turn] = field(default_factory=list)

    def to_json(self) -> dict:
        turns = []
        for t in self.turns:
            d = {"speaker": t.speaker}
            if t.text is not None:
                d["text"] = t.text
            if t.vector is not None:
                d["vector"] = t.vector
            if t.label is not None:
                d["label"] = t.label
            turns.append(d)
        return {"dialogue_id": self.dialogue_id, "turns": turns}


def _parse_turn(obj, lineno: int, k: int) -> Turn:
    where = f"line {lineno}, turn {k}"
    if not isinstance(obj, dict):
        raise CorpusError(f"{where}: turn must be an object")
    if "speaker" not in obj:
        raise CorpusError(f"{where}: missing field 'speaker'")
    text, vector = obj.get("text"), obj.get("vector")
    if text is None and vector is None:
        raise CorpusError(f"{where}: missing field 'text' (or 'vector')")
    if text is not None and not isinstance(text, str):
        raise CorpusError(f"{where}: field 'text' must be a string")
    if vector is not None:
        if not isinstance(vector, list) or not all(isinstance(v, (int, float)) for v in vector):
            raise CorpusError(f"{where}: field 'vector' must be a list of numbers")
        vector = [float(v) for v in vector]
    label = obj.get("label")
    return Turn(str(obj["speaker"]), text, vector, None if label is None else str(label))


def parse_corpus(lines, labels: Sequence[str] | None = None, source: str = "<corpus>") -> list[CorpusRecord]:
    records = []
    allowed = None if labels is None else set(labels)
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"{source}: line {lineno}: invalid JSON ({exc.msg})") from exc
        if not isinstance(obj, dict):
            raise CorpusError(f"{source}: line {lineno}: expected a JSON object")
        for key in ("dialogue_id", "turns"):
            if key not in obj:
                raise CorpusError(f"{source}: line {lineno}: missing field {key!r}")
        if not isinstance(obj["turns"], list) or not obj["turns"]:
            raise CorpusError(f"{source}: line {lineno}: 'turns' must be a nonempty list")
        try:
            turns = [_parse_turn(t, lineno, k) for k, t in enumerate(obj["turns"])]
        except CorpusError as exc:
            raise CorpusError(f"{source}: {exc}") from None
        if allowed is not None:
            for k, t in enumerate(turns):
                if t.label is not None and t.label not in allowed:
                    raise CorpusError(f"{source}: line {lineno}, turn {k}: unknown label {t.label!r}")
        records.append(CorpusRecord(str(obj["dialogue_id"]), turns))
    return records


def load_corpus(path: str | Path, fmt: str = "jsonl",
                labels: Sequence[str] | None = None) -> list[CorpusRecord]:
    """Read a corpus file in file order. ``labels`` restricts the allowed label set."""
    if fmt != "jsonl":
        raise CorpusError(f"unsupported corpus format {fmt!r}")
    with open(path, encoding="utf-8") as fh:
        return parse_corpus(fh, labels, source=str(path))


def save_corpus(path: str | Path, records: Sequence[CorpusRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json()) + "\n")


@dataclass
class Vocabulary:
    """Sorted label and speaker inventories; unseen speakers map to a trailing UNK slot."""

    labels: list[str]
    speakers: list[str]

    @classmethod
    def build(cls, records: Sequence[CorpusRecord]) -> Vocabulary:
        labels = sorted({t.label for r in records for t in r.turns if t.label is not None})
        speakers = sorted({t.speaker for r in records for t in r.turns})
        return cls(labels, speakers)

    @property
    def num_speakers(self) -> int:
        return len(self.speakers) + 1

    @property
    def unk_speaker(self) -> int:
        return len(self.speakers)

    def speaker_index(self, speaker: str) -> int:
        try:
            return self.speakers.index(speaker)
        except ValueError:
            return self.unk_speaker

    def label_index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise CorpusError(f"unknown label {label!r}") from None


@dataclass
class Dialogue:
    """A dialogue ready for the model."""

    dialogue_id: str
    speakers: np.ndarray  # vocabulary indices, UNK for unseen speakers
    local_speakers: np.ndarray  # dense first-appearance ids within this dialogue
    tokens: list[list[str]] | None = None
    features: np.ndarray | None = None
    labels: list[int] | None = None
    speaker_names: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.speakers)


def local_speaker_ids(names: Sequence[str]) -> np.ndarray:
    seen: dict[str, int] = {}
    return np.array([seen.setdefault(s, len(seen)) for s in names], dtype=np.int64)


def encode_record(record: CorpusRecord, vocab: Vocabulary, require_labels: bool = True) -> Dialogue:
    names = [t.speaker for t in record.turns]
    has_labels = all(t.label is not None for t in record.turns)
    if require_labels and not has_labels:
        raise CorpusError(f"dialogue {record.dialogue_id!r}: every turn needs a label")
    labels = [vocab.label_index(t.label) for t in record.turns] if has_labels else None
    tokens = None
    if all(t.text is not None for t in record.turns):
        tokens = [tokenize(t.text) for t in record.turns]
    features = None
    if all(t.vector is not None for t in record.turns):
        features = np.array([t.vector for t in record.turns], dtype=np.float64)
    return Dialogue(record.dialogue_id,
                    np.array([vocab.speaker_index(s) for s in names], dtype=np.int64),
                    local_speaker_ids(names), tokens, features, labels, names)


def encode_corpus(records: Sequence[CorpusRecord], vocab: Vocabulary,
                  require_labels: bool = True) -> list[Dialogue]:
    return [encode_record(r, vocab, require_labels) for r in records]


def attach_features(dialogues: Sequence[Dialogue], features: dict[str, np.ndarray]) -> None:
    for d in dialogues:
        d.features = features[d.dialogue_id]
