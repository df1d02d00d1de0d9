"""Seeded generator of tangled multi-topic dialogues with gold reply-to edges.

Each dialogue holds several topic threads drawn from disjoint word pools.
Threads are merged into one history, the correct candidate continues one
of them, and the distractors continue other topics.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .corpus import Dialogue
from .dependency import DependencyForest, validate_forest

ANSWER_POLICIES = ("oldest", "newest", "random")
DISTRACTOR_POLICIES = ("random", "others", "mixed")


@dataclass(frozen=True)
class SyntheticSpec:
    num_dialogues: int = 100
    threads_per_dialogue: int = 3
    turns_per_thread: tuple[int, int] = (3, 6)
    # turn count for the thread that the answer continues; defaults to turns_per_thread
    answer_thread_turns: tuple[int, int] | None = None
    num_topics: int = 20
    topic_vocab: int = 50
    turn_length: tuple[int, int] = (6, 10)
    filler_vocab: int = 20
    filler_rate: float = 0.0
    pool_size: int = 10
    distractors: str = "random"
    answer: str = "oldest"
    id_prefix: str = "syn"

    def __post_init__(self):
        if self.threads_per_dialogue < 1:
            raise ValueError("threads_per_dialogue must be >= 1")
        if self.pool_size < 2:
            raise ValueError("pool_size must be >= 2")
        if self.num_topics < self.threads_per_dialogue:
            raise ValueError("num_topics must cover threads_per_dialogue")
        if self.distractors == "random" and self.num_topics == self.threads_per_dialogue:
            raise ValueError("random distractors need topics outside the dialogue")
        if self.answer not in ANSWER_POLICIES:
            raise ValueError(f"answer must be one of {ANSWER_POLICIES}")
        if self.distractors not in DISTRACTOR_POLICIES:
            raise ValueError(f"distractors must be one of {DISTRACTOR_POLICIES}")
        for lo, hi in (self.turns_per_thread, self.turn_length, self.answer_thread_turns or (1, 1)):
            if not 1 <= lo <= hi:
                raise ValueError("ranges must satisfy 1 <= low <= high")

    def to_dict(self) -> dict:
        return asdict(self)


def topic_word(topic: int, k: int) -> str:
    return f"t{topic:02d}w{k:02d}"


def filler_word(k: int) -> str:
    return f"f{k:02d}"


class _TurnWriter:
    def __init__(self, spec: SyntheticSpec, rng: np.random.Generator):
        self.spec = spec
        self.rng = rng

    def turn(self, topic: int, previous: list[str] | None) -> list[str]:
        spec, rng = self.spec, self.rng
        length = int(rng.integers(spec.turn_length[0], spec.turn_length[1] + 1))
        words = [topic_word(topic, int(k)) for k in rng.integers(0, spec.topic_vocab, size=length)]
        if spec.filler_rate > 0:
            for i in np.flatnonzero(rng.random(length) < spec.filler_rate):
                words[i] = filler_word(int(rng.integers(spec.filler_vocab)))
        if previous:
            # replies echo a topical word of the turn they answer
            topical = [w for w in previous if w.startswith("t")]
            if topical:
                words[0] = topical[int(rng.integers(len(topical)))]
        return words


def _merge(lengths: list[int], rng: np.random.Generator) -> list[int]:
    """Order-preserving random merge: each slot goes to a uniformly chosen
    thread among those with turns left."""
    left = list(lengths)
    order = []
    while any(left):
        live = [j for j, n in enumerate(left) if n]
        j = live[int(rng.integers(len(live)))]
        order.append(j)
        left[j] -= 1
    return order


def generate_dialogue(spec: SyntheticSpec, rng: np.random.Generator, did: str):
    writer = _TurnWriter(spec, rng)
    kappa = spec.threads_per_dialogue
    topics = [int(t) for t in rng.choice(spec.num_topics, size=kappa, replace=False)]
    lengths = [int(rng.integers(spec.turns_per_thread[0], spec.turns_per_thread[1] + 1)) for _ in range(kappa)]
    if spec.answer_thread_turns is not None:
        lo, hi = spec.answer_thread_turns
        lengths[0] = int(rng.integers(lo, hi + 1))
    order = _merge(lengths, rng)

    turns, edges = [], []
    last_turn: dict[int, int] = {}
    last_words: dict[int, list[str]] = {}
    said = [0] * kappa
    for pos, j in enumerate(order, 1):
        words = writer.turn(topics[j], last_words.get(j))
        # two speakers alternate within each thread
        turns.append((f"s{j}{'ab'[said[j] % 2]}", " ".join(words)))
        said[j] += 1
        if j in last_turn:
            edges.append((pos, last_turn[j], 1.0))
        last_turn[j], last_words[j] = pos, words

    if spec.answer == "oldest":
        answer = min(range(kappa), key=lambda j: last_turn[j])
    elif spec.answer == "newest":
        answer = max(range(kappa), key=lambda j: last_turn[j])
    else:
        answer = int(rng.integers(kappa))

    correct = " ".join(writer.turn(topics[answer], last_words[answer]))
    n_distract = spec.pool_size - 1
    others = [j for j in range(kappa) if j != answer]
    distractors = []
    if spec.distractors in ("others", "mixed"):
        take = others if spec.distractors == "mixed" else others * n_distract
        for j in take[:n_distract]:
            distractors.append(" ".join(writer.turn(topics[j], last_words[j])))
    absent = [t for t in range(spec.num_topics) if t not in topics]
    while len(distractors) < n_distract:
        pool = absent if absent else topics
        picks = rng.permutation(pool)[: n_distract - len(distractors)]
        for t in picks:
            distractors.append(" ".join(writer.turn(int(t), None)))
    label = int(rng.integers(spec.pool_size))
    candidates = distractors[:label] + [correct] + distractors[label:]
    dialogue = Dialogue.build(did, turns, candidates, label)
    forest = validate_forest(len(turns), edges)
    threads = [tuple(p for p, j in enumerate(order, 1) if j == k) for k in range(kappa)]
    return dialogue, forest, threads, answer


def generate_synthetic(spec: SyntheticSpec, seed: int = 0) -> tuple[list[Dialogue], dict[str, DependencyForest]]:
    """Generate ``spec.num_dialogues`` dialogues and their gold forests."""
    dialogues, forests = [], {}
    for d, f, _threads, _answer in iter_synthetic(spec, seed):
        dialogues.append(d)
        forests[d.id] = f
    return dialogues, forests


def iter_synthetic(spec: SyntheticSpec, seed: int = 0):
    """Yield ``(dialogue, forest, construction_threads, answer_thread)``."""
    rng = np.random.default_rng(seed)
    for i in range(spec.num_dialogues):
        yield generate_dialogue(spec, rng, f"{spec.id_prefix}-{seed}-{i:05d}")
