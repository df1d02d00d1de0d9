"""Candidate ranking, hits@k and MRR."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import numeric as nm
from .corpus import Dialogue
from .dependency import DependencyForest, forest_for
from .extraction import ExtractionConfig
from .model import ThreadEncoderModel


@dataclass(frozen=True)
class RankingResult:
    dialogue_id: str
    rank: int
    order: tuple[int, ...]


def rank_from_scores(scores: Sequence[float], label: int, dialogue_id: str = "") -> RankingResult:
    """Sort candidates by descending score; ties go to the lower index."""
    scores = np.asarray(scores, dtype=float)
    if not 0 <= label < len(scores):
        raise ValueError(f"dialogue {dialogue_id!r}: label {label} outside {len(scores)} candidates")
    order = tuple(int(i) for i in np.lexsort((np.arange(len(scores)), -scores)))
    return RankingResult(dialogue_id, order.index(label) + 1, order)


def score_candidates(model: ThreadEncoderModel, dialogue: Dialogue, forest: DependencyForest,
                     mode: str, extraction: ExtractionConfig = ExtractionConfig()) -> np.ndarray:
    with nm.no_grad():
        threads = model.thread_inputs(dialogue, forest, mode, extraction)
        cands = [model.candidate_input(c) for c in dialogue.candidates]
        return model.score(threads, cands)


def rank_candidates(model: ThreadEncoderModel, dialogue: Dialogue, forests: dict[str, DependencyForest] | None,
                    mode: str, extraction: ExtractionConfig = ExtractionConfig()) -> RankingResult:
    if dialogue.label is None:
        raise ValueError(f"dialogue {dialogue.id!r} has no label; use predict for unlabeled scoring")
    scores = score_candidates(model, dialogue, forest_for(dialogue, forests), mode, extraction)
    return rank_from_scores(scores, dialogue.label, dialogue.id)


def hits_at_k(results: Sequence[RankingResult], k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    if not results:
        raise ValueError("no ranking results")
    return sum(r.rank <= k for r in results) / len(results)


def mrr(results: Sequence[RankingResult]) -> float:
    if not results:
        raise ValueError("no ranking results")
    return sum(1.0 / r.rank for r in results) / len(results)


@dataclass
class MetricsReport:
    hits: dict[int, float]
    mrr: float
    n: int
    rankings: list[RankingResult] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {"hits": {str(k): v for k, v in sorted(self.hits.items())}, "mrr": self.mrr, "n": self.n}

    def table(self) -> str:
        head = [f"hits@{k}" for k in sorted(self.hits)] + ["MRR", "N"]
        row = [f"{100 * self.hits[k]:.1f}" for k in sorted(self.hits)] + [f"{100 * self.mrr:.1f}", str(self.n)]
        widths = [max(len(h), len(r)) for h, r in zip(head, row)]
        fmt = "  ".join("{:>%d}" % w for w in widths)
        return fmt.format(*head) + "\n" + fmt.format(*row)


def metrics(results: Sequence[RankingResult], ks: Sequence[int] = (1, 2, 5)) -> MetricsReport:
    return MetricsReport({k: hits_at_k(results, k) for k in ks}, mrr(results), len(results), list(results))


def evaluate(model: ThreadEncoderModel, dialogues: Sequence[Dialogue], forests: dict[str, DependencyForest] | None,
             mode: str, extraction: ExtractionConfig = ExtractionConfig(), ks: Sequence[int] = (1, 2, 5),
             workers: int = 1) -> MetricsReport:
    """Rank every labeled dialogue's candidate pool and summarise."""
    labeled = [d for d in dialogues if d.label is not None]
    if not labeled:
        raise ValueError("no labeled dialogues to evaluate")

    def one(d):
        return rank_candidates(model, d, forests, mode, extraction)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, labeled))
    else:
        results = [one(d) for d in labeled]
    return metrics(results, ks)
