"""Diverse interactive recommendation: an actor-critic agent over a factorized
catalog, with approximate-neighbor retrieval and diversity-aware re-ranking.

The pipeline stages live in their own modules:

- :mod:`drlir.data` -- rating ingestion, dedup, chronological split
- :mod:`drlir.pmf` -- matrix-factorization embeddings and the rating oracle
- :mod:`drlir.ann` -- random-hyperplane forest for nearest-item retrieval
- :mod:`drlir.diversify` -- total-diversity-effect re-ranking of candidates
- :mod:`drlir.state` -- user state, positional encoding, state transitions
- :mod:`drlir.nets` -- actor/critic networks, replay buffer, checkpoints
- :mod:`drlir.env` -- simulated user feedback and the reward signal
- :mod:`drlir.train` -- the episode training loop
- :mod:`drlir.evaluate` -- metrics and the evaluation/ablation harness
- :mod:`drlir.cli` -- the ``drlir`` command
- :mod:`drlir.kernels` -- compiled hot loops with a pure-python fallback
"""

from ._version import __version__
from .ann import Forest, angular_distance, build_forest, load_forest, query, save_forest
from .data import (
    DatasetSplit,
    RatingEvent,
    UserHistory,
    build_histories,
    filter_positive,
    parse_ratings,
    split_train_test,
)
from .diversify import CandidateSet, RecommendationList, diversify, recommend, tde_scores
from .env import RatingOracle, StepOutcome, ild, reward, step
from .evaluate import (
    EvalConfig,
    EvalReport,
    evaluate,
    ndcg_at_n,
    precision_at_n,
    precision_frac,
)
from .nets import AgentNets, MlpParams, ReplayBuffer, init_agent, load_checkpoint, save_checkpoint
from .pmf import EmbeddingModel, PmfHyperparams, load_model, predict_rating, save_model, train_pmf
from .state import UserState, encode_state, positional_encoding, update_state
from .train import TrainConfig, TrainReport, train

__all__ = [
    "__version__",
    "AgentNets",
    "CandidateSet",
    "DatasetSplit",
    "EmbeddingModel",
    "EvalConfig",
    "EvalReport",
    "Forest",
    "MlpParams",
    "PmfHyperparams",
    "RatingEvent",
    "RatingOracle",
    "RecommendationList",
    "ReplayBuffer",
    "StepOutcome",
    "TrainConfig",
    "TrainReport",
    "UserHistory",
    "UserState",
    "angular_distance",
    "build_forest",
    "build_histories",
    "diversify",
    "encode_state",
    "evaluate",
    "filter_positive",
    "ild",
    "init_agent",
    "load_checkpoint",
    "load_forest",
    "load_model",
    "ndcg_at_n",
    "parse_ratings",
    "positional_encoding",
    "precision_at_n",
    "precision_frac",
    "predict_rating",
    "query",
    "recommend",
    "reward",
    "save_checkpoint",
    "save_forest",
    "save_model",
    "split_train_test",
    "step",
    "tde_scores",
    "train",
    "train_pmf",
    "update_state",
]
