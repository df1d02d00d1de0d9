"""Response-attended pooling over thread vectors, matching scores and the
in-batch-negative loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numeric as nm
from .numeric import Tensor


@dataclass
class MatchResult:
    weights: np.ndarray
    score: float


def match_score(context, r_emb) -> MatchResult:
    """Score one response vector against a context of one or more vectors.

    The response attends over the context vectors; the score is the dot
    product of the response with the attended context.
    """
    v = np.atleast_2d(np.asarray(context, dtype=float))
    r = np.asarray(r_emb, dtype=float)
    if v.shape[0] == 0 or v.size == 0:
        raise ValueError("empty context")
    if r.ndim != 1 or v.shape[1] != r.shape[0]:
        raise nm.ShapeError(f"match_score: incompatible shapes {v.shape} and {r.shape}")
    s = v @ r
    w = np.exp(s - s.max())
    w /= w.sum()
    return MatchResult(weights=w, score=float(r @ (w @ v)))


def batch_scores(contexts, responses, mask: np.ndarray | None = None) -> Tensor:
    """Score every context against every response.

    ``contexts`` is (A, V, d) with ``mask`` (A, V) marking real vectors;
    ``responses`` is (B, d).  Returns the (A, B) score matrix.  Attention
    weights are recomputed for each (context, response) pair.
    """
    c = nm.as_tensor(contexts)
    r = nm.as_tensor(responses)
    if c.ndim != 3 or r.ndim != 2 or c.shape[2] != r.shape[1]:
        raise nm.ShapeError(f"batch_scores: incompatible shapes {c.shape} and {r.shape}")
    A, V, d = c.shape
    if V == 0:
        raise ValueError("empty context")
    if mask is None:
        mask = np.ones((A, V), dtype=bool)
    s = nm.transpose(nm.matmul(c, nm.transpose(r)), (0, 2, 1))  # (A, B, V)
    w = nm.softmax(s, mask=np.asarray(mask, dtype=bool)[:, None, :])
    pooled = nm.matmul(w, c)  # (A, B, d)
    return nm.sum(pooled * r, axis=-1)


def batch_loss(scores) -> Tensor:
    """Mean cross-entropy of each row's softmax against its diagonal entry."""
    S = nm.as_tensor(scores)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise nm.ShapeError(f"batch_loss: expected a square matrix, got {S.shape}")
    A = S.shape[0]
    diag = nm.log_softmax(S, axis=-1)[np.arange(A), np.arange(A)]
    # + 0.0 turns the -0.0 of a singleton batch into 0.0
    return nm.scale(nm.sum(diag), -1.0 / A) + 0.0
