"""Dialogue data model, JSONL ingestion, tokenization and augmentation."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MAX_CANDIDATE_TOKENS = 72
MAX_THREAD_TOKENS = 360

PAD, UNK, SEP = "[PAD]", "[UNK]", "[S]"
SPECIAL_TOKENS = (PAD, UNK, SEP)


class CorpusError(ValueError):
    """Raised when a corpus file or record is malformed."""


@dataclass(frozen=True)
class Turn:
    index: int
    speaker: str
    text: str


@dataclass(frozen=True)
class Dialogue:
    id: str
    turns: tuple[Turn, ...]
    candidates: tuple[str, ...]
    label: int | None = None
    # id of the dialogue an augmented sample was cut from
    origin: str | None = None

    def __post_init__(self):
        if not self.turns:
            raise CorpusError(f"dialogue {self.id!r}: no turns")
        for pos, turn in enumerate(self.turns, 1):
            if turn.index != pos:
                raise CorpusError(f"dialogue {self.id!r}: turn indices must be 1..n")
        if self.label is not None and not 0 <= self.label < len(self.candidates):
            raise CorpusError(
                f"dialogue {self.id!r}: label out of range "
                f"({self.label} with {len(self.candidates)} candidates)"
            )

    @property
    def n(self) -> int:
        return len(self.turns)

    @property
    def response(self) -> str:
        if self.label is None:
            raise CorpusError(f"dialogue {self.id!r}: no label")
        return self.candidates[self.label]

    @classmethod
    def build(cls, id, turns, candidates, label=None, origin=None) -> "Dialogue":
        """Build from ``(speaker, text)`` pairs, numbering turns 1..n."""
        return cls(
            id=str(id),
            turns=tuple(Turn(i, str(s), str(t)) for i, (s, t) in enumerate(turns, 1)),
            candidates=tuple(str(c) for c in candidates),
            label=label,
            origin=origin,
        )


def dialogue_from_json(obj: dict) -> Dialogue:
    if not isinstance(obj, dict):
        raise CorpusError(f"expected a JSON object, got {type(obj).__name__}")
    try:
        did = obj["id"]
        turns = [(t.get("speaker", ""), t["text"]) for t in obj["turns"]]
        candidates = obj.get("candidates", [])
    except (KeyError, TypeError, AttributeError) as exc:
        raise CorpusError(f"missing or malformed field: {exc}") from exc
    label = obj.get("label")
    if label is not None and (isinstance(label, bool) or not isinstance(label, int)):
        raise CorpusError(f"dialogue {did!r}: label must be an integer or null")
    return Dialogue.build(did, turns, candidates, label, obj.get("origin"))


def dialogue_to_json(dialogue: Dialogue) -> dict:
    obj = {
        "id": dialogue.id,
        "turns": [{"speaker": t.speaker, "text": t.text} for t in dialogue.turns],
        "candidates": list(dialogue.candidates),
        "label": dialogue.label,
    }
    if dialogue.origin is not None:
        obj["origin"] = dialogue.origin
    return obj


def load_corpus(path: str | Path, format: str = "jsonl") -> list[Dialogue]:
    """Read dialogues from a JSONL file, one object per line, in file order."""
    if format != "jsonl":
        raise CorpusError(f"unsupported corpus format: {format}")
    dialogues = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_num, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{line_num}: malformed JSON: {exc}") from exc
            try:
                dialogues.append(dialogue_from_json(obj))
            except CorpusError as exc:
                raise CorpusError(f"{path}:{line_num}: {exc}") from exc
    return dialogues


def dumps_dialogue(dialogue: Dialogue) -> str:
    return json.dumps(dialogue_to_json(dialogue), ensure_ascii=False)


def save_corpus(dialogues: Iterable[Dialogue], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in dialogues:
            fh.write(dumps_dialogue(d) + "\n")


def filter_unanswerable(dialogues: Iterable[Dialogue]) -> list[Dialogue]:
    """Drop dialogues that have no correct candidate."""
    return [d for d in dialogues if d.label is not None]


def augment(dialogues: Iterable[Dialogue], min_context: int = 1) -> list[Dialogue]:
    """Turn every turn past ``min_context`` into a response for the turns before it.

    Augmented samples hold a single candidate (the true next turn); negatives
    come from the other responses in a training batch.
    """
    if min_context < 1:
        raise ValueError("min_context must be >= 1")
    out = []
    for d in dialogues:
        for k in range(min_context + 1, d.n + 1):
            out.append(
                Dialogue(
                    id=f"{d.id}#{k}",
                    turns=d.turns[: k - 1],
                    candidates=(d.turns[k - 1].text,),
                    label=0,
                    origin=d.origin or d.id,
                )
            )
    return out


def split_words(text: str) -> list[str]:
    return text.lower().split()


@dataclass(frozen=True)
class Tokenizer:
    """Lowercased whitespace tokenizer with a fixed vocabulary.

    Any object with ``encode``, ``decode``, ``__len__`` and the ``pad_id``,
    ``unk_id`` and ``sep_id`` attributes can stand in for it.
    """

    vocab: dict[str, int]
    _inverse: list[str] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        inverse = [""] * len(self.vocab)
        for tok, i in self.vocab.items():
            if not 0 <= i < len(self.vocab) or inverse[i]:
                raise ValueError("vocabulary ids must be dense 0..|V|-1")
            inverse[i] = tok
        for tok in SPECIAL_TOKENS:
            if tok not in self.vocab:
                raise ValueError(f"vocabulary lacks special token {tok}")
        object.__setattr__(self, "_inverse", inverse)

    def __len__(self) -> int:
        return len(self.vocab)

    @property
    def pad_id(self) -> int:
        return self.vocab[PAD]

    @property
    def unk_id(self) -> int:
        return self.vocab[UNK]

    @property
    def sep_id(self) -> int:
        return self.vocab[SEP]

    def encode(self, text: str) -> np.ndarray:
        unk = self.unk_id
        return np.array([self.vocab.get(w, unk) for w in split_words(text)], dtype=np.int64)

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self._inverse[int(i)] for i in ids]

    def to_dict(self) -> dict:
        return {"tokens": list(self._inverse)}

    @classmethod
    def from_dict(cls, obj: dict) -> "Tokenizer":
        return cls({tok: i for i, tok in enumerate(obj["tokens"])})


def build_vocab(dialogues: Iterable[Dialogue], max_size: int = 30000, min_freq: int = 1) -> Tokenizer:
    """Rank words by frequency, breaking ties lexicographically."""
    if max_size <= len(SPECIAL_TOKENS):
        raise ValueError(f"max_size must exceed the {len(SPECIAL_TOKENS)} special tokens")
    counts: Counter[str] = Counter()
    for d in dialogues:
        for t in d.turns:
            counts.update(split_words(t.text))
        for c in d.candidates:
            counts.update(split_words(c))
    for tok in SPECIAL_TOKENS:
        counts.pop(tok.lower(), None)
    ranked = sorted((w for w, c in counts.items() if c >= min_freq), key=lambda w: (-counts[w], w))
    tokens = list(SPECIAL_TOKENS) + ranked[: max_size - len(SPECIAL_TOKENS)]
    return Tokenizer({tok: i for i, tok in enumerate(tokens)})


def tokenize(tokenizer: Tokenizer, text: str) -> np.ndarray:
    return tokenizer.encode(text)


def truncate_candidate(tokens: Sequence[int], limit: int = MAX_CANDIDATE_TOKENS):
    """Keep the head of a response."""
    return tokens[:limit]


def truncate_thread(tokens: Sequence[int], limit: int = MAX_THREAD_TOKENS):
    """Keep the tail of a chronologically concatenated thread."""
    return tokens[-limit:] if len(tokens) > limit else tokens
