"""Synthetic dialogues whose labels need speaker identity and turn order.

Every turn contains one polarity keyword, optionally among filler words
(``max_filler``; filler makes utterances unique and easy to memorise). The first turn
is labelled ``neutral``; every later turn reacts to the turn right before
it: it takes that turn's polarity, flipped when the previous speaker is the
odd-parity speaker ``B``. A model that sees only an unordered bag of
utterances cannot recover these labels; a window graph with relation types
and signed offsets can.
"""

from __future__ import annotations

import numpy as np

from .corpus import CorpusRecord, Turn

POSITIVE = ("great", "love", "happy", "wonderful")
NEGATIVE = ("awful", "hate", "sad", "terrible")
FILLER = ("the", "we", "it", "today", "then", "so", "maybe", "really", "that", "was")
SPEAKERS = ("A", "B")


def toy_label(prev_polarity: int | None, prev_speaker: str | None) -> str:
    if prev_polarity is None:
        return "neutral"
    flipped = prev_polarity ^ (SPEAKERS.index(prev_speaker) % 2)
    return "positive" if flipped else "negative"


def make_toy_corpus(num_dialogues: int, seed: int = 0, min_turns: int = 5,
                    max_turns: int = 9, max_filler: int = 0,
                    prefix: str = "toy") -> list[CorpusRecord]:
    rng = np.random.default_rng(seed)
    records = []
    for d in range(num_dialogues):
        n = int(rng.integers(min_turns, max_turns + 1))
        turns = []
        prev = (None, None)
        for _ in range(n):
            speaker = SPEAKERS[int(rng.integers(2))]
            polarity = int(rng.integers(2))
            words = list(rng.choice(FILLER, size=int(rng.integers(max_filler + 1))))
            kw = rng.choice(POSITIVE if polarity else NEGATIVE)
            words.insert(int(rng.integers(len(words) + 1)), str(kw))
            turns.append(Turn(speaker, " ".join(words), label=toy_label(*prev)))
            prev = (polarity, speaker)
        records.append(CorpusRecord(f"{prefix}{d:03d}", turns))
    return records
