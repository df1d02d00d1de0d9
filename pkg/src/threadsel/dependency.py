"""Per-dialogue reply-to forests with parser confidences."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .corpus import Dialogue


class ForestError(ValueError):
    """Raised for dependency records that violate the forest invariants."""


@dataclass(frozen=True)
class DependencyEdge:
    child: int
    parent: int
    confidence: float


@dataclass(frozen=True)
class DependencyForest:
    n: int
    edges: tuple[DependencyEdge, ...]

    def parents(self) -> dict[int, tuple[int, float]]:
        return {e.child: (e.parent, e.confidence) for e in self.edges}

    def restrict(self, n: int) -> "DependencyForest":
        """Forest over the first ``n`` turns only."""
        if not 1 <= n <= self.n:
            raise ForestError(f"cannot restrict a {self.n}-turn forest to {n} turns")
        return DependencyForest(n, tuple(e for e in self.edges if e.child <= n))


def validate_forest(n: int, edges: Iterable) -> DependencyForest:
    """Check and freeze a forest.

    ``edges`` may hold :class:`DependencyEdge` objects or ``(child, parent,
    confidence)`` triples.
    """
    if isinstance(n, bool) or not isinstance(n, int) or n < 1:
        raise ForestError(f"n must be a positive integer, got {n!r}")
    seen: set[int] = set()
    out = []
    for e in edges:
        if not isinstance(e, DependencyEdge):
            child, parent, confidence = e
            e = DependencyEdge(int(child), int(parent), float(confidence))
        if not (1 <= e.child <= n and 1 <= e.parent <= n):
            raise ForestError(f"index out of range: edge {e.child}->{e.parent} with n={n}")
        if e.parent >= e.child:
            raise ForestError(f"forward edge: {e.child}->{e.parent}")
        if not 0.0 <= e.confidence <= 1.0:
            raise ForestError(f"confidence out of range: {e.confidence} on edge {e.child}->{e.parent}")
        if e.child in seen:
            raise ForestError(f"multiple parents for turn {e.child}")
        seen.add(e.child)
        out.append(e)
    return DependencyForest(n, tuple(sorted(out, key=lambda e: e.child)))


def resolve_nearest_parent(edges: list[dict]) -> list[dict]:
    """Keep, for each child, only the edge to its closest (latest) parent."""
    best: dict[int, dict] = {}
    for e in edges:
        cur = best.get(e["child"])
        if cur is None or e["parent"] > cur["parent"]:
            best[e["child"]] = e
    return [best[c] for c in sorted(best)]


def forest_from_json(obj: dict, resolve_nearest: bool = False) -> tuple[str, DependencyForest]:
    did = obj.get("dialogue_id")
    try:
        raw = list(obj["edges"])
        for e in raw:
            if "confidence" not in e:
                raise ForestError(f"edge {e.get('child')}->{e.get('parent')} lacks a confidence")
        if resolve_nearest:
            raw = resolve_nearest_parent(raw)
        forest = validate_forest(obj["n"], [(e["child"], e["parent"], e["confidence"]) for e in raw])
    except (KeyError, TypeError) as exc:
        raise ForestError(f"dialogue {did!r}: malformed record: {exc}") from exc
    except ForestError as exc:
        raise ForestError(f"dialogue {did!r}: {exc}") from exc
    if did is None:
        raise ForestError("record lacks dialogue_id")
    return str(did), forest


def forest_to_json(dialogue_id: str, forest: DependencyForest) -> dict:
    return {
        "dialogue_id": dialogue_id,
        "n": forest.n,
        "edges": [{"child": e.child, "parent": e.parent, "confidence": e.confidence} for e in forest.edges],
    }


def load_edges(path: str | Path, resolve_nearest: bool = False) -> dict[str, DependencyForest]:
    forests: dict[str, DependencyForest] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_num, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ForestError(f"{path}:{line_num}: malformed JSON: {exc}") from exc
            did, forest = forest_from_json(obj, resolve_nearest)
            if did in forests:
                raise ForestError(f"{path}:{line_num}: duplicate dialogue_id {did!r}")
            forests[did] = forest
    return forests


def save_edges(forests: dict[str, DependencyForest], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for did, forest in forests.items():
            fh.write(json.dumps(forest_to_json(did, forest)) + "\n")


def chain_parser(dialogue: Dialogue | int) -> DependencyForest:
    """Fallback parser: every turn replies to the one before it."""
    n = dialogue if isinstance(dialogue, int) else dialogue.n
    return validate_forest(n, [(j, j - 1, 1.0) for j in range(2, n + 1)])


def forest_for(dialogue: Dialogue, forests: dict[str, DependencyForest] | None) -> DependencyForest:
    """Look up a dialogue's forest, cutting it down for augmented samples.

    With no forest map at all, falls back to :func:`chain_parser`.
    """
    if forests is None:
        return chain_parser(dialogue)
    key = dialogue.origin or dialogue.id
    if key not in forests:
        raise ForestError(f"no dependency forest for dialogue {key!r}")
    forest = forests[key]
    if forest.n == dialogue.n:
        return forest
    if dialogue.origin is not None and dialogue.n < forest.n:
        return forest.restrict(dialogue.n)
    raise ForestError(f"dialogue {dialogue.id!r} has {dialogue.n} turns but its forest has n={forest.n}")
