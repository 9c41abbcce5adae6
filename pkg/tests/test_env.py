"""Simulated-environment tests: diversity metric, reward algebra, step semantics."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drlir.ann import angular_distance
from drlir.env import (
    LAMBDA_DEFAULT,
    RatingOracle,
    RewardBoundError,
    StepOutcome,
    ild,
    rating_avg,
    reward,
    step,
)
from drlir.pmf import EmbeddingModel
from drlir.state import UserState, initial_state


def double_loop_ild(vectors):
    """Independent O(n^2) oracle: mean over unordered pairs of (1 - cos)/2."""
    n = len(vectors)
    total = 0.0
    count = 0
    for i in range(n):
        for j in range(i + 1, n):
            total += angular_distance(vectors[i], vectors[j]) / 2.0
            count += 1
    return total / count


def make_model(user_vectors, item_vectors):
    U = np.asarray(user_vectors, dtype=np.float64)
    V = np.asarray(item_vectors, dtype=np.float64)
    return EmbeddingModel(
        U, V,
        np.arange(1, len(U) + 1), np.arange(1, len(V) + 1),
        {i + 1: i for i in range(len(U))}, {i + 1: i for i in range(len(V))},
    )


class TestIld:
    @given(st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_matches_double_loop_oracle(self, seed):
        rng = np.random.default_rng(seed)
        vectors = rng.normal(size=(rng.integers(2, 10), 6))
        assert ild(vectors) == pytest.approx(double_loop_ild(vectors), abs=1e-12)

    def test_range(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            v = rng.normal(size=(5, 4))
            assert -1e-12 <= ild(v) <= 1.0 + 1e-12

    def test_identical_items_zero(self):
        assert ild(np.tile([[1.0, 2.0]], (4, 1))) == pytest.approx(0.0, abs=1e-12)

    def test_opposite_pair_is_one(self):
        assert ild(np.array([[1.0, 0.0], [-1.0, 0.0]])) == pytest.approx(1.0)

    def test_orthogonal_pair_is_half(self):
        assert ild(np.array([[1.0, 0.0], [0.0, 1.0]])) == pytest.approx(0.5)

    def test_zero_vector_counts_as_orthogonal(self):
        got = ild(np.array([[0.0, 0.0], [3.0, 0.0]]))
        assert got == pytest.approx(0.5)

    def test_short_list_warns_and_returns_zero(self):
        with pytest.warns(UserWarning, match="at least two"):
            assert ild(np.ones((1, 3))) == 0.0
        with pytest.warns(UserWarning):
            assert ild(np.empty((0, 3))) == 0.0

    def test_scale_invariance(self):
        rng = np.random.default_rng(1)
        v = rng.normal(size=(6, 5))
        scales = rng.uniform(0.1, 10.0, size=(6, 1))
        assert ild(v) == pytest.approx(ild(v * scales), abs=1e-12)


class TestReward:
    @given(st.integers(0, 10_000))
    @settings(max_examples=100, deadline=None)
    def test_algebra_and_bounds(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 11))
        vectors = rng.normal(size=(n, 8))
        ratings = rng.uniform(1.0, 5.0, size=n)
        got = reward(vectors, ratings)
        expect = ild(vectors) * float(np.mean(ratings)) - LAMBDA_DEFAULT
        assert got == pytest.approx(expect, abs=1e-12)
        assert -1.8 - 1e-12 <= got <= 3.2 + 1e-12

    def test_corner_case_max(self):
        # perfectly diverse pair rated 5.0 by everyone: reward hits 5 - lambda
        vectors = np.array([[1.0, 0.0], [-1.0, 0.0]])
        assert reward(vectors, np.array([5.0, 5.0])) == pytest.approx(3.2)

    def test_corner_case_min(self):
        vectors = np.tile([[1.0, 1.0]], (3, 1))
        assert reward(vectors, np.array([1.0, 1.0, 1.0])) == pytest.approx(-1.8)

    def test_custom_lambda(self):
        vectors = np.array([[1.0, 0.0], [-1.0, 0.0]])
        assert reward(vectors, np.array([4.0, 4.0]), lam=0.5) == pytest.approx(3.5)

    def test_out_of_range_rating_raises(self):
        vectors = np.array([[1.0, 0.0], [-1.0, 0.0]])
        with pytest.raises(RewardBoundError, match="outside"):
            reward(vectors, np.array([9.0, 9.0]))

    def test_empty_ratings_raise(self):
        with pytest.raises(ValueError, match="empty"):
            rating_avg(np.array([]))


class TestRatingOracle:
    def test_model_predictions_clamped(self):
        model = make_model([[2.0, 0.0]], [[3.0, 0.0], [0.1, 0.0], [-1.0, 0.0]])
        oracle = RatingOracle(model)
        got = oracle.rate(0, [0, 1, 2])
        np.testing.assert_allclose(got, [5.0, 1.0, 1.0])  # 6.0 and -2.0 clamp

    def test_known_ratings_override_model(self):
        model = make_model([[2.0, 0.0]], [[3.0, 0.0], [1.0, 0.0]])
        oracle = RatingOracle(model, known={(0, 0): 2.0})
        got = oracle.rate(0, [0, 1])
        assert got[0] == 2.0          # held-out truth wins
        assert got[1] == pytest.approx(2.0)  # 1.0*2.0 dot product

    def test_known_ratings_only_for_their_user(self):
        model = make_model([[1.0, 0.0], [1.0, 0.0]], [[4.0, 0.0]])
        oracle = RatingOracle(model, known={(0, 0): 1.5})
        assert oracle.rate(0, [0])[0] == 1.5
        assert oracle.rate(1, [0])[0] == pytest.approx(4.0)


class TestStep:
    def _setup(self):
        # user 1 loves x-axis items, hates y-axis ones
        items = np.array([[4.5, 0.0], [4.0, 0.0], [0.0, 4.0], [-4.0, 0.0]])
        model = make_model([[1.0, 0.0]], items)
        oracle = RatingOracle(model)
        state = initial_state([3, 2], n=2)  # seeded with the two disliked rows
        return model, oracle, state

    def test_outcome_fields_consistent(self):
        model, oracle, state = self._setup()
        out = step(state, [0, 1, 2], oracle, user_row=0)
        np.testing.assert_allclose(out.ratings, [4.5, 4.0, 1.0])
        assert out.positives == (0, 1)
        vectors = model.item_vectors[[0, 1, 2]]
        assert out.ild == pytest.approx(ild(vectors))
        assert out.rating_avg == pytest.approx((4.5 + 4.0 + 1.0) / 3)
        assert out.reward == pytest.approx(out.ild * out.rating_avg - LAMBDA_DEFAULT)
        assert isinstance(out, StepOutcome)

    def test_positives_enter_state_in_list_order(self):
        _, oracle, state = self._setup()
        out = step(state, [1, 0], oracle, user_row=0)
        assert out.positives == (1, 0)
        assert out.next_state.items == (1, 0)  # n=2 window, oldest dropped

    def test_no_positives_leaves_state_unchanged(self):
        _, oracle, state = self._setup()
        out = step(state, [2, 3], oracle, user_row=0)  # both rated 1.0
        assert out.positives == ()
        assert out.next_state.items == state.items

    def test_custom_threshold(self):
        _, oracle, state = self._setup()
        out = step(state, [0, 2], oracle, user_row=0, threshold=1.0)
        assert out.positives == (0, 2)

    def test_empty_list_rejected(self):
        _, oracle, state = self._setup()
        with pytest.raises(ValueError, match="empty"):
            step(state, [], oracle, user_row=0)

    def test_known_rating_changes_positives(self):
        model, _, state = self._setup()
        oracle = RatingOracle(model, known={(0, 0): 1.0})  # held-out says: disliked
        out = step(state, [0, 1], oracle, user_row=0)
        assert out.positives == (1,)

    def test_single_item_list_warns_on_diversity(self):
        _, oracle, state = self._setup()
        with pytest.warns(UserWarning, match="at least two"):
            out = step(state, [0], oracle, user_row=0)
        assert out.ild == 0.0
        assert out.reward == pytest.approx(-LAMBDA_DEFAULT)
