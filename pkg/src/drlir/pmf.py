"""Dot-product matrix factorization: embedding trainer and simulated-rating oracle.

Plain squared-loss factorization with L2 regularization, trained by
sequential SGD (visitation order is part of the determinism contract).
The trained model doubles as the environment's rating oracle via
:func:`predict_rating`.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from drlir import kernels
from drlir.data import RatingEvent

MAGIC = b"DRLIRPMF"
FORMAT_VERSION = 1

RATING_MIN = 1.0
RATING_MAX = 5.0


class UnknownUserError(KeyError):
    pass


class UnknownItemError(KeyError):
    pass


class PmfDivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class PmfHyperparams:
    seed: int
    learning_rate: float = 0.01
    l2_user: float = 0.02
    l2_item: float = 0.02
    epochs: int = 50
    init_scale: float = 0.05

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.l2_user < 0 or self.l2_item < 0:
            raise ValueError("l2 penalties must be >= 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.init_scale <= 0:
            raise ValueError("init_scale must be > 0")


@dataclass
class EmbeddingModel:
    user_vectors: np.ndarray  # (num_users, m)
    item_vectors: np.ndarray  # (num_items, m)
    user_ids: np.ndarray  # row -> raw id
    item_ids: np.ndarray
    user_rows: dict[int, int]  # raw id -> row
    item_rows: dict[int, int]
    train_losses: list[float] = field(default_factory=list)

    @property
    def m(self) -> int:
        return self.user_vectors.shape[1]

    @property
    def num_users(self) -> int:
        return self.user_vectors.shape[0]

    @property
    def num_items(self) -> int:
        return self.item_vectors.shape[0]

    def user_row(self, user_id: int) -> int:
        try:
            return self.user_rows[user_id]
        except KeyError:
            raise UnknownUserError(f"user {user_id} not in model")

    def item_row(self, item_id: int) -> int:
        try:
            return self.item_rows[item_id]
        except KeyError:
            raise UnknownItemError(f"item {item_id} not in model")


def observation_loss(u: np.ndarray, v: np.ndarray, r: float, l2_user: float, l2_item: float) -> float:
    """Per-visit objective: squared error plus L2 on the two visited rows."""
    err = r - float(u @ v)
    return err * err + l2_user * float(u @ u) + l2_item * float(v @ v)


def observation_gradient(u, v, r, l2_user, l2_item):
    """Analytic gradient of :func:`observation_loss` wrt (u, v) at the current point."""
    err = r - float(u @ v)
    g_u = (-2.0 * err) * v + (2.0 * l2_user) * u
    g_v = (-2.0 * err) * u + (2.0 * l2_item) * v
    return g_u, g_v


def _id_maps(events: list[RatingEvent]):
    user_ids = np.array(sorted({e.user_id for e in events}), dtype=np.int64)
    item_ids = np.array(sorted({e.item_id for e in events}), dtype=np.int64)
    user_rows = {int(uid): i for i, uid in enumerate(user_ids)}
    item_rows = {int(iid): i for i, iid in enumerate(item_ids)}
    return user_ids, item_ids, user_rows, item_rows


def train_pmf(events: list[RatingEvent], m: int, hp: PmfHyperparams) -> EmbeddingModel:
    """Fit user/item factors to the given rating events by SGD.

    Minimizes ``sum (r - u.v)^2 + l2_user*|U|^2 + l2_item*|V|^2``. Each epoch
    visits every rating once in a seeded random order; runs are deterministic
    for a fixed seed. Raises :class:`PmfDivergenceError` when the objective
    stops being finite.
    """
    if not events:
        raise ValueError("cannot train on an empty event list")
    if m < 1:
        raise ValueError("embedding width must be >= 1")

    user_ids, item_ids, user_rows, item_rows = _id_maps(events)
    u_rows = np.array([user_rows[e.user_id] for e in events], dtype=np.int64)
    i_rows = np.array([item_rows[e.item_id] for e in events], dtype=np.int64)
    ratings = np.array([e.rating for e in events], dtype=np.float64)

    rng = np.random.default_rng(hp.seed)
    s = hp.init_scale
    U = rng.uniform(-s, s, size=(len(user_ids), m))
    V = rng.uniform(-s, s, size=(len(item_ids), m))

    losses = []
    for _ in range(hp.epochs):
        order = rng.permutation(len(events)).astype(np.int64)
        kernels.pmf_epoch(U, V, u_rows, i_rows, ratings, order, hp.learning_rate, hp.l2_user, hp.l2_item)
        preds = np.einsum("ij,ij->i", U[u_rows], V[i_rows])
        loss = float(np.sum((ratings - preds) ** 2) + hp.l2_user * np.sum(U * U) + hp.l2_item * np.sum(V * V))
        if not math.isfinite(loss):
            raise PmfDivergenceError("factorization objective diverged; reduce learning_rate")
        losses.append(loss)

    U.flags.writeable = False
    V.flags.writeable = False
    return EmbeddingModel(U, V, user_ids, item_ids, user_rows, item_rows, train_losses=losses)


def _clamp_rating(score: float) -> float:
    if math.isnan(score):
        score = RATING_MIN  # NaN never escapes: rewards and metrics assume the [1,5] scale
    return min(RATING_MAX, max(RATING_MIN, score))


def predict_rating(model: EmbeddingModel, user_id: int, item_id: int) -> float:
    """Simulated rating of user for item: the factor dot product clamped to [1,5]."""
    u = model.user_row(user_id)
    i = model.item_row(item_id)
    return _clamp_rating(float(model.user_vectors[u] @ model.item_vectors[i]))


def predict_rating_rows(model: EmbeddingModel, user_row: int, item_rows: np.ndarray) -> np.ndarray:
    """Vectorized :func:`predict_rating` over item rows for one user row."""
    scores = model.item_vectors[item_rows] @ model.user_vectors[user_row]
    scores = np.nan_to_num(scores, nan=RATING_MIN)
    return np.clip(scores, RATING_MIN, RATING_MAX)


def item_vector(model: EmbeddingModel, item_id: int) -> np.ndarray:
    """The item's embedding row (a read-only view, never a mutable copy)."""
    return model.item_vectors[model.item_row(item_id)]


def save_model(model: EmbeddingModel, path) -> None:
    """Write the model: binary header + float32 LE matrices, id maps in a JSON sidecar."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIII", FORMAT_VERSION, model.m, model.num_users, model.num_items))
        fh.write(np.ascontiguousarray(model.user_vectors, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(model.item_vectors, dtype="<f4").tobytes())
    with open(str(path) + ".idmap.json", "w", encoding="utf-8") as fh:
        json.dump(
            {"users": [int(x) for x in model.user_ids], "items": [int(x) for x in model.item_ids]},
            fh,
        )


def load_model(path) -> EmbeddingModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"not an embedding model file: bad magic {magic!r}")
        version, m, num_users, num_items = struct.unpack("<IIII", fh.read(16))
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported model file version {version} (expected {FORMAT_VERSION})")
        U = np.frombuffer(fh.read(num_users * m * 4), dtype="<f4").reshape(num_users, m).astype(np.float64)
        V = np.frombuffer(fh.read(num_items * m * 4), dtype="<f4").reshape(num_items, m).astype(np.float64)
    with open(str(path) + ".idmap.json", encoding="utf-8") as fh:
        maps = json.load(fh)
    user_ids = np.array(maps["users"], dtype=np.int64)
    item_ids = np.array(maps["items"], dtype=np.int64)
    if len(user_ids) != num_users or len(item_ids) != num_items:
        raise ValueError("id map sidecar does not match model header")
    U.flags.writeable = False
    V.flags.writeable = False
    return EmbeddingModel(
        U,
        V,
        user_ids,
        item_ids,
        {int(u): i for i, u in enumerate(user_ids)},
        {int(it): i for i, it in enumerate(item_ids)},
    )
