"""Thread construction from dependency forests, plus the distance and
full-history baselines and corpus-level thread statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dependency import DependencyForest

DEP_EXTR = "dep-extr"
DIST_SEG = "dist-seg"
FULL_HTY = "full-hty"
MODES = (DEP_EXTR, DIST_SEG, FULL_HTY)


@dataclass(frozen=True)
class ExtractionConfig:
    threshold: float = 0.2
    max_threads: int = 4

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"threshold must lie in [0, 1], got {self.threshold}")
        if self.max_threads < 1:
            raise ValueError("max_threads must be >= 1")


@dataclass(frozen=True)
class ThreadSet:
    """Threads ordered most-recent first; each thread is a chronological
    tuple of 1-based turn indices."""

    threads: tuple[tuple[int, ...], ...]
    source: str

    def as_lists(self) -> list[list[int]]:
        return [list(t) for t in self.threads]

    def __len__(self) -> int:
        return len(self.threads)


def extract_threads(forest: DependencyForest, config: ExtractionConfig = ExtractionConfig()) -> ThreadSet:
    # edges at exactly the threshold survive
    parent = {e.child: e.parent for e in forest.edges if e.confidence >= config.threshold}
    has_child = set(parent.values())
    leaves = [j for j in range(forest.n, 0, -1) if j not in has_child]
    threads = []
    for leaf in leaves[: config.max_threads]:
        path = [leaf]
        while path[-1] in parent:
            path.append(parent[path[-1]])
        threads.append(tuple(reversed(path)))
    return ThreadSet(tuple(threads), DEP_EXTR)


def dist_seg(n: int, max_threads: int = 4) -> ThreadSet:
    """Chunk turns by distance to the response, ``ceil(n / M)`` turns per chunk."""
    if n < 1 or max_threads < 1:
        raise ValueError("dist_seg needs n >= 1 and max_threads >= 1")
    size = math.ceil(n / max_threads)
    threads = []
    end = n
    while end >= 1:
        start = max(1, end - size + 1)
        threads.append(tuple(range(start, end + 1)))
        end = start - 1
    return ThreadSet(tuple(threads), DIST_SEG)


def full_history(n: int) -> ThreadSet:
    if n < 1:
        raise ValueError("full_history needs n >= 1")
    return ThreadSet((tuple(range(1, n + 1)),), FULL_HTY)


def build_threads(forest: DependencyForest, mode: str, config: ExtractionConfig = ExtractionConfig()) -> ThreadSet:
    if mode == DEP_EXTR:
        return extract_threads(forest, config)
    if mode == DIST_SEG:
        return dist_seg(forest.n, config.max_threads)
    if mode == FULL_HTY:
        return full_history(forest.n)
    raise ValueError(f"unknown thread mode {mode!r}; expected one of {', '.join(MODES)}")


@dataclass
class ThreadStats:
    avg_thd: float
    avg_turn: float
    std_turn: float
    thd_distribution: dict[int, float] = field(default_factory=dict)
    n_dialogues: int = 0

    def to_dict(self) -> dict:
        return {
            "avg_thd": self.avg_thd,
            "avg_turn": self.avg_turn,
            "std_turn": self.std_turn,
            "thd_distribution": {str(k): v for k, v in self.thd_distribution.items()},
            "n_dialogues": self.n_dialogues,
        }

    def table(self) -> str:
        ks = sorted(self.thd_distribution)
        head = ["avg#thd", "avg#turn", "std#turn"] + [f"{k}-thd(%)" for k in ks]
        row = [f"{self.avg_thd:.2f}", f"{self.avg_turn:.2f}", f"{self.std_turn:.2f}"]
        row += [f"{self.thd_distribution[k]:.2f}" for k in ks]
        widths = [max(len(h), len(r)) for h, r in zip(head, row)]
        fmt = "  ".join("{:>%d}" % w for w in widths)
        return fmt.format(*head) + "\n" + fmt.format(*row)


def thread_stats(thread_sets: Sequence[ThreadSet], max_threads: int = 4) -> ThreadStats:
    """Per-dialogue thread count and length statistics, averaged over dialogues.

    Lengths use the population standard deviation within each dialogue.
    """
    if not thread_sets:
        raise ValueError("empty corpus")
    counts = np.array([len(ts) for ts in thread_sets], dtype=float)
    if counts.max() > max_threads:
        raise ValueError(f"thread set exceeds the cap of {max_threads} threads")
    if counts.min() < 1:
        raise ValueError("every dialogue needs at least one thread")
    lengths = [np.array([len(t) for t in ts.threads], dtype=float) for ts in thread_sets]
    dist = {k: 100.0 * float(np.mean(counts == k)) for k in range(1, max_threads + 1)}
    return ThreadStats(
        avg_thd=float(counts.mean()),
        avg_turn=float(np.mean([ls.mean() for ls in lengths])),
        std_turn=float(np.mean([ls.std() for ls in lengths])),
        thd_distribution=dist,
        n_dialogues=len(thread_sets),
    )
