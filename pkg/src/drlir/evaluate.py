"""Evaluation harness: list-quality metrics and the per-user rollout protocol.

Precision here follows the gated raw-rating convention: each recommended item
contributes its simulated rating when that rating clears the positive
threshold and zero otherwise, and the sum is divided by list length, so values
live in [0, 5]. A conventional fraction-relevant precision is emitted next to
it as precision_frac. NDCG uses raw-rating gain with a log2(i+1) discount.
Diversity is the intra-list distance of the recommended vectors.

Rollouts are greedy: no exploration noise, state advanced by the simulated
positives after each list, metrics averaged per step, then per user, then
across users in sorted-user order.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .ann import Forest
from .artifacts import atomic_write_text, config_hash
from .data import DatasetSplit, UserHistory
from .diversify import recommend
from .env import RatingOracle, ild
from .nets import AgentNets, actor_forward
from .pmf import EmbeddingModel, UnknownItemError, UnknownUserError
from .state import UserState, encode_state, update_state

log = logging.getLogger(__name__)

METRICS = ("precision_at_n", "precision_frac", "ndcg_at_n", "diversity_at_n")
AGGREGATE_USER = "aggregate"


def precision_at_n(ratings, threshold: float = 3.0) -> float:
    """Mean of ratings that clear the threshold, zeros for the rest; in [0, 5]."""
    ratings = np.asarray(ratings, dtype=np.float64)
    if ratings.size == 0:
        raise ValueError("precision needs a non-empty list")
    gated = np.where(ratings >= threshold, ratings, 0.0)
    return float(np.sum(gated) / ratings.size)


def precision_frac(ratings, threshold: float = 3.0) -> float:
    """Fraction of the list rated at or above the threshold; in [0, 1]."""
    ratings = np.asarray(ratings, dtype=np.float64)
    if ratings.size == 0:
        raise ValueError("precision needs a non-empty list")
    return float(np.count_nonzero(ratings >= threshold) / ratings.size)


def ndcg_at_n(ratings) -> float:
    """Rank-discounted rating sum over its ideal reordering; 0 when ideal is 0."""
    ratings = np.asarray(ratings, dtype=np.float64)
    if ratings.size == 0:
        raise ValueError("ndcg needs a non-empty list")
    discounts = 1.0 / np.log2(np.arange(2, ratings.size + 2))
    dcg = float(np.sum(ratings * discounts))
    idcg = float(np.sum(np.sort(ratings)[::-1] * discounts))
    if idcg == 0.0:
        return 0.0
    return dcg / idcg


@dataclass(frozen=True)
class EvalConfig:
    seed: int = 0
    eval_steps: int = 10
    n_state_items: int = 10
    candidates: int = 30
    top_n: int = 10
    use_pe: bool = True
    allow_repeats: bool = False
    positive_threshold: float = 3.0
    search_budget: int | None = None
    max_users: int | None = None

    def __post_init__(self):
        if self.eval_steps < 1:
            raise ValueError("eval_steps must be >= 1")
        if not 1 <= self.top_n <= self.candidates:
            raise ValueError("need 1 <= top_n <= candidates")
        if self.n_state_items < 1:
            raise ValueError("n_state_items must be >= 1")


@dataclass
class EvalReport:
    per_user: dict[str, dict[int, float]]
    aggregates: dict[str, float]
    metadata: dict[str, str]


def known_ratings_from_histories(
    histories: dict[int, UserHistory],
    model: EmbeddingModel,
) -> dict[tuple[int, int], float]:
    """(user row, item row) -> real rating, for pairs the model can address."""
    known: dict[tuple[int, int], float] = {}
    for uid, hist in histories.items():
        try:
            u_row = model.user_row(uid)
        except UnknownUserError:
            continue
        for ev in hist.events:
            try:
                known[(u_row, model.item_row(ev.item_id))] = float(ev.rating)
            except UnknownItemError:
                continue
    return known


def _seed_state(
    hist: UserHistory,
    model: EmbeddingModel,
    n: int,
    threshold: float,
) -> UserState | None:
    """Most recent n positive embeddable train items, oldest first; None if short."""
    rows: list[int] = []
    for ev in hist.events:
        if ev.rating < threshold:
            continue
        try:
            rows.append(model.item_row(ev.item_id))
        except UnknownItemError:
            continue
    if len(rows) < n:
        return None
    return UserState(tuple(rows[-n:]))


def evaluate(
    agent: AgentNets,
    data: DatasetSplit,
    model: EmbeddingModel,
    forest: Forest,
    config: EvalConfig = EvalConfig(),
) -> EvalReport:
    """Score the greedy policy for every evaluable test user."""
    if forest.num_items != model.num_items or forest.m != model.m:
        raise ValueError("forest and embedding model describe different catalogs")
    oracle = RatingOracle(model, known_ratings_from_histories(data.test, model))

    per_user: dict[str, dict[int, float]] = {m: {} for m in METRICS}
    users = sorted(data.test)
    if config.max_users is not None:
        users = users[: config.max_users]
    skipped = 0
    for uid in users:
        train_hist = data.train.get(uid)
        if train_hist is None:
            skipped += 1
            continue
        try:
            user_row = model.user_row(uid)
        except UnknownUserError:
            skipped += 1
            continue
        state = _seed_state(train_hist, model, config.n_state_items, config.positive_threshold)
        if state is None:
            skipped += 1
            continue

        sums = {m: 0.0 for m in METRICS}
        steps = 0
        for _ in range(config.eval_steps):
            s_vec = encode_state(state, model, use_pe=config.use_pe)
            action = actor_forward(agent.actor, s_vec)
            exclude = frozenset() if config.allow_repeats else frozenset(state.items)
            rec = recommend(
                action,
                forest,
                k=config.candidates,
                n=config.top_n,
                exclude=exclude,
                search_budget=config.search_budget,
            )
            if rec.indices.size == 0:
                break
            ratings = oracle.rate(user_row, rec.indices)
            sums["precision_at_n"] += precision_at_n(ratings, config.positive_threshold)
            sums["precision_frac"] += precision_frac(ratings, config.positive_threshold)
            sums["ndcg_at_n"] += ndcg_at_n(ratings)
            sums["diversity_at_n"] += ild(model.item_vectors[rec.indices])
            steps += 1
            positives = tuple(
                int(row)
                for row, rating in zip(rec.indices, ratings)
                if rating >= config.positive_threshold
            )
            state = update_state(state, positives)
        if steps == 0:
            skipped += 1
            continue
        for m in METRICS:
            per_user[m][uid] = sums[m] / steps

    if skipped:
        log.warning("evaluation skipped %d test users without a usable rollout", skipped)

    aggregates = {}
    for m in METRICS:
        vals = [per_user[m][u] for u in sorted(per_user[m])]
        aggregates[m] = float(np.mean(vals)) if vals else math.nan

    cfg = asdict(config)
    metadata = {
        "config_hash": config_hash(cfg, exclude=("use_pe",)),
        "use_pe": str(config.use_pe).lower(),
        "seed": str(config.seed),
        "eval_steps": str(config.eval_steps),
        "n_state_items": str(config.n_state_items),
        "candidates": str(config.candidates),
        "top_n": str(config.top_n),
        "positive_threshold": repr(config.positive_threshold),
        "averaging": "per-step",
        "users_evaluated": str(len(per_user[METRICS[0]])),
    }
    return EvalReport(per_user=per_user, aggregates=aggregates, metadata=metadata)


def write_report_csv(report: EvalReport, path) -> str:
    """Render and write the report; metadata lines, then one row per value."""
    lines = [f"# {k}={report.metadata[k]}" for k in sorted(report.metadata)]
    lines.append("metric,user,value")
    for m in sorted(report.per_user):
        for uid in sorted(report.per_user[m]):
            lines.append(f"{m},{uid},{report.per_user[m][uid]!r}")
        lines.append(f"{m},{AGGREGATE_USER},{report.aggregates[m]!r}")
    text = "\n".join(lines) + "\n"
    atomic_write_text(path, text)
    return text


def read_report_csv(path) -> EvalReport:
    metadata: dict[str, str] = {}
    per_user: dict[str, dict[int, float]] = {}
    aggregates: dict[str, float] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("# "):
                key, _, value = line[2:].partition("=")
                metadata[key] = value
                continue
            if line == "metric,user,value":
                continue
            metric, user, value = line.split(",")
            if user == AGGREGATE_USER:
                aggregates[metric] = float(value)
            else:
                per_user.setdefault(metric, {})[int(user)] = float(value)
    return EvalReport(per_user=per_user, aggregates=aggregates, metadata=metadata)


def write_learning_curve_csv(episode_rewards, path, window: int = 50) -> None:
    """Plot-ready (episode, trailing-window mean reward); NaN entries skipped."""
    rewards = np.asarray(episode_rewards, dtype=np.float64)
    lines = ["episode,reward_moving_avg"]
    for i in range(rewards.size):
        lo = max(0, i - window + 1)
        chunk = rewards[lo : i + 1]
        good = chunk[np.isfinite(chunk)]
        avg = float(np.mean(good)) if good.size else math.nan
        lines.append(f"{i},{avg!r}")
    atomic_write_text(path, "\n".join(lines) + "\n")
