"""User state: the latest n positively-rated items, with sinusoidal position
codes injected at encoding time so the actor sees interaction order without
any recurrent machinery.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from drlir.pmf import EmbeddingModel

log = logging.getLogger(__name__)

DEFAULT_STATE_LEN = 10

_pe_cache: dict[tuple[int, int], np.ndarray] = {}


class EncodingConfigError(ValueError):
    pass


@dataclass(frozen=True)
class UserState:
    """Model rows of the user's latest positive items, oldest to newest."""

    items: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.items)


def positional_encoding(pos: int, d_model: int) -> np.ndarray:
    """Sinusoidal code for a 1-based sequence position.

    Component 2i is sin(pos / 10000^(2i/d_model)) and component 2i+1 the
    matching cosine, interleaved across the vector.
    """
    if d_model % 2 != 0:
        raise EncodingConfigError(f"d_model must be even, got {d_model}")
    if pos < 1:
        raise ValueError(f"positions are 1-based, got {pos}")
    key = (pos, d_model)
    cached = _pe_cache.get(key)
    if cached is None:
        args = pos / np.power(10000.0, 2.0 * np.arange(d_model // 2) / d_model)
        cached = np.empty(d_model)
        cached[0::2] = np.sin(args)
        cached[1::2] = np.cos(args)
        cached.flags.writeable = False
        _pe_cache[key] = cached
    return cached


def encode_state(state: UserState, model: EmbeddingModel, use_pe: bool = True) -> np.ndarray:
    """Flatten the state's item embeddings (plus position codes) into one vector."""
    rows = model.item_vectors[list(state.items)]
    if use_pe:
        pe = np.stack([positional_encoding(p, model.m) for p in range(1, len(state) + 1)])
        rows = rows + pe
    return rows.reshape(-1)


def update_state(state: UserState, positives: list[int] | tuple[int, ...]) -> UserState:
    """Shift the window: drop the oldest r items, append the r new positives.

    No positive feedback leaves the state unchanged. More positives than the
    window holds keeps only the newest ones.
    """
    r = len(positives)
    n = len(state)
    if r == 0:
        return state
    if r > n:
        log.warning("got %d positives for a %d-item state; keeping the newest %d", r, n, n)
        return UserState(tuple(int(p) for p in positives[-n:]))
    return UserState(state.items[r:] + tuple(int(p) for p in positives))


def initial_state(item_rows: list[int] | tuple[int, ...], n: int = DEFAULT_STATE_LEN) -> UserState:
    """Seed a state from the chronologically first n of a user's positive items."""
    if len(item_rows) < n:
        raise ValueError(f"need at least {n} items to initialize a state, got {len(item_rows)}")
    return UserState(tuple(int(i) for i in item_rows[:n]))
