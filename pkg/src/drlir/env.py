"""Simulated user feedback loop.

A trained embedding model plays the role of the user: each recommended item
is scored by the clamped dot product of user and item vectors (or a known
held-out rating when one exists), items rated at or above the positive
threshold enter the state, and the scalar reward couples how diverse the
list is with how well it was rated.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .pmf import EmbeddingModel, predict_rating_rows
from .state import UserState, update_state

LAMBDA_DEFAULT = 1.8
POSITIVE_THRESHOLD = 3.0
REWARD_EPS = 1e-9


class RewardBoundError(RuntimeError):
    """A computed reward escaped its provable range; something upstream is wrong."""


@dataclass(frozen=True)
class StepOutcome:
    ratings: np.ndarray          # simulated rating per recommended item, list order
    positives: tuple[int, ...]   # model rows rated >= threshold, list order
    reward: float
    ild: float
    rating_avg: float
    next_state: UserState


class RatingOracle:
    """Rates (user row, item row) pairs: real held-out ratings win, model fills in."""

    def __init__(self, model: EmbeddingModel, known: dict[tuple[int, int], float] | None = None):
        self.model = model
        self.known = dict(known) if known else {}

    def rate(self, user_row: int, item_rows) -> np.ndarray:
        item_rows = np.asarray(item_rows, dtype=np.int64)
        out = predict_rating_rows(self.model, user_row, item_rows)
        if self.known:
            for i, row in enumerate(item_rows):
                hit = self.known.get((user_row, int(row)))
                if hit is not None:
                    out[i] = hit
        return out


def ild(vectors: np.ndarray) -> float:
    """Mean pairwise angular distance, scaled into [0, 1].

    Lists with fewer than two items have no pair to compare; they score 0.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    n = vectors.shape[0]
    if n < 2:
        warnings.warn("intra-list diversity needs at least two items; returning 0.0", stacklevel=2)
        return 0.0
    norms = np.linalg.norm(vectors, axis=1)
    safe = np.where(norms == 0.0, 1.0, norms)
    unit = vectors / safe[:, None]
    unit[norms == 0.0] = 0.0
    cos = unit @ unit.T
    iu = np.triu_indices(n, k=1)
    dist = (1.0 - cos[iu]) / 2.0
    return float(np.mean(dist))


def rating_avg(ratings: np.ndarray) -> float:
    ratings = np.asarray(ratings, dtype=np.float64)
    if ratings.size == 0:
        raise ValueError("cannot average an empty rating list")
    return float(np.mean(ratings))


def _bounded_reward(div: float, avg: float, lam: float) -> float:
    value = div * avg - lam
    lo, hi = -lam, 5.0 - lam
    if not (lo - REWARD_EPS <= value <= hi + REWARD_EPS):
        raise RewardBoundError(f"reward {value} outside [{lo}, {hi}]")
    return float(min(max(value, lo), hi))


def reward(vectors: np.ndarray, ratings: np.ndarray, lam: float = LAMBDA_DEFAULT) -> float:
    """Diversity-weighted rating quality: ild * mean(rating) - lam.

    With ratings clamped to [1, 5] and ild in [0, 1] the value must land in
    [-lam, 5 - lam]; a result outside that band (beyond float slop) raises.
    """
    return _bounded_reward(ild(vectors), rating_avg(ratings), lam)


def step(
    state: UserState,
    item_rows,
    oracle: RatingOracle,
    user_row: int,
    lam: float = LAMBDA_DEFAULT,
    threshold: float = POSITIVE_THRESHOLD,
) -> StepOutcome:
    """Simulate one interaction round for a recommended list of model rows."""
    item_rows = np.asarray(item_rows, dtype=np.int64)
    if item_rows.size == 0:
        raise ValueError("cannot step on an empty recommendation list")
    ratings = oracle.rate(user_row, item_rows)
    vectors = oracle.model.item_vectors[item_rows]
    div = ild(vectors)
    avg = rating_avg(ratings)
    positives = tuple(int(row) for row, rating in zip(item_rows, ratings) if rating >= threshold)
    nxt = update_state(state, positives)
    return StepOutcome(
        ratings=ratings,
        positives=positives,
        reward=_bounded_reward(div, avg, lam),
        ild=div,
        rating_avg=avg,
        next_state=nxt,
    )
