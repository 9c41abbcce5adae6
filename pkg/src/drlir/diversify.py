"""Candidate diversification: score each retrieved item by its summed angular
dissimilarity to every other candidate, then keep the top-N.

The score of a candidate is the sum over all *other* candidates of
``1 - cosine``; scoring is against the full candidate set, not the already
selected prefix, so selection reduces to a sort.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from drlir.ann import Forest, query

log = logging.getLogger(__name__)

DEFAULT_CANDIDATES = 30
DEFAULT_TOP_N = 10


@dataclass
class CandidateSet:
    """Retrieved candidates, ascending by angular distance to the proto-action."""

    indices: np.ndarray  # (n,) item rows
    vectors: np.ndarray  # (n, m)
    distances: np.ndarray  # (n,) angular distance to the proto-action

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        self.distances = np.asarray(self.distances, dtype=np.float64)
        if len(np.unique(self.indices)) != len(self.indices):
            raise ValueError("candidate set contains duplicate items")
        key = np.lexsort((self.indices, self.distances))
        if not np.array_equal(key, np.arange(len(self.indices))):
            raise ValueError("candidates must be sorted ascending by (distance, index)")

    def __len__(self) -> int:
        return len(self.indices)


@dataclass
class RecommendationList:
    """Final ranked items with the vectors and scores the ranking used."""

    indices: np.ndarray
    vectors: np.ndarray
    tde: np.ndarray
    distances: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)


def _unit_rows(vectors: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    out = np.zeros_like(vectors)
    nz = norms[:, 0] > 0.0
    out[nz] = vectors[nz] / norms[nz]  # zero rows stay zero: cosine-with-zero is 0
    return out


def tde_scores(candidates: CandidateSet) -> np.ndarray:
    """Total diversity effect of every candidate against the full set."""
    n = len(candidates)
    if n < 2:
        raise ValueError("diversity scores need at least 2 candidates")
    unit = _unit_rows(candidates.vectors)
    gram = unit @ unit.T
    return (n - 1) - (gram.sum(axis=1) - np.diag(gram))


def tde_score(i: int, candidates: CandidateSet) -> float:
    """Total diversity effect of candidate ``i``: sum over j != i of (1 - cos)."""
    n = len(candidates)
    if n < 2:
        raise ValueError("diversity scores need at least 2 candidates")
    unit = _unit_rows(candidates.vectors)
    cos_row = unit @ unit[i]
    return float((n - 1) - (cos_row.sum() - cos_row[i]))


def diversify(candidates: CandidateSet, n: int) -> RecommendationList:
    """Pick the ``n`` candidates with the largest diversity scores.

    Descending score; ties broken by smaller distance to the proto-action,
    then by item index. Asking for more items than exist returns everything.
    """
    size = len(candidates)
    if n > size:
        log.warning("requested %d items from %d candidates; returning all", n, size)
        n = size
    if size == 0:
        empty = np.empty(0)
        return RecommendationList(np.empty(0, np.int64), np.empty((0, 0)), empty, empty)
    if size == 1:
        return RecommendationList(
            candidates.indices.copy(),
            candidates.vectors.copy(),
            np.zeros(1),
            candidates.distances.copy(),
        )
    scores = tde_scores(candidates)
    order = np.lexsort((candidates.indices, candidates.distances, -scores))[:n]
    return RecommendationList(
        candidates.indices[order],
        candidates.vectors[order],
        scores[order],
        candidates.distances[order],
    )


def recommend(
    proto_action: np.ndarray,
    forest: Forest,
    k: int = DEFAULT_CANDIDATES,
    n: int = DEFAULT_TOP_N,
    exclude: frozenset[int] | set[int] = frozenset(),
    search_budget: int | None = None,
) -> RecommendationList:
    """Full proto-action-to-list pipeline: retrieve, exclude, diversify.

    Queries the forest for ``k`` nearest candidates, drops excluded rows
    (doubling ``k`` once if too few survive), and re-ranks by diversity.
    """
    results = query(forest, proto_action, k, search_budget)
    survivors = [(i, d) for i, d in results if i not in exclude]
    if len(survivors) < n and k < forest.num_items:
        results = query(forest, proto_action, 2 * k, search_budget)
        survivors = [(i, d) for i, d in results if i not in exclude]
    if len(survivors) < n:
        log.warning("only %d candidates survive exclusion (wanted %d)", len(survivors), n)
    if not survivors:
        empty = np.empty(0)
        return RecommendationList(np.empty(0, np.int64), np.empty((0, forest.m)), empty, empty)
    idx = np.array([i for i, _ in survivors], dtype=np.int64)
    dist = np.array([d for _, d in survivors])
    candidates = CandidateSet(idx, forest.items[idx], dist)
    return diversify(candidates, n)
