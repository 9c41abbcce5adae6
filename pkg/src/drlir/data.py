"""MovieLens rating ingestion: parsing, positive filtering, chronological splits."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

log = logging.getLogger(__name__)

POSITIVE_THRESHOLD = 3

_SEPARATORS = {"ml100k": "\t", "ml1m": "::"}


class RatingParseError(ValueError):
    """A malformed line in a rating file; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class RatingValidationError(ValueError):
    """A structurally valid line with an out-of-range field."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass(frozen=True, order=True)
class RatingEvent:
    user_id: int
    item_id: int
    rating: int
    timestamp: int


@dataclass
class UserHistory:
    """One user's rating events in chronological (timestamp, item_id) order."""

    user_id: int
    events: list[RatingEvent] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.events)


@dataclass
class DatasetSplit:
    """Per-user chronological train/test partition of positive interactions."""

    train: dict[int, UserHistory]
    test: dict[int, UserHistory]


def parse_ratings(path, fmt: str) -> list[RatingEvent]:
    """Parse a rating file into events, preserving file order.

    ``fmt`` selects the line layout: ``ml100k`` is TAB-separated
    ``user item rating timestamp``; ``ml1m`` uses ``::`` separators.
    """
    try:
        sep = _SEPARATORS[fmt]
    except KeyError:
        raise ValueError(f"unknown rating format {fmt!r}; expected one of {sorted(_SEPARATORS)}")

    events: list[RatingEvent] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            parts = line.split(sep)
            if len(parts) != 4:
                raise RatingParseError(line_no, f"expected 4 {sep!r}-separated fields, got {len(parts)}")
            try:
                user, item, rating, ts = (int(p) for p in parts)
            except ValueError:
                raise RatingParseError(line_no, f"non-integer field in {line!r}")
            if not 1 <= rating <= 5:
                raise RatingValidationError(line_no, f"rating {rating} outside [1,5]")
            if user < 1 or item < 1:
                raise RatingValidationError(line_no, f"ids must be >= 1, got user={user} item={item}")
            events.append(RatingEvent(user, item, rating, ts))
    return events


def filter_positive(events: list[RatingEvent], threshold: int = POSITIVE_THRESHOLD) -> list[RatingEvent]:
    """Keep events with rating >= threshold, preserving input order."""
    return [e for e in events if e.rating >= threshold]


def build_histories(events: list[RatingEvent]) -> dict[int, UserHistory]:
    """Group events per user, dedupe repeat (user, item) ratings, sort chronologically.

    A re-rating supersedes the old one: for duplicate (user, item) pairs the
    event with the latest timestamp wins (latest file position on a timestamp tie).
    Events are ordered by (timestamp, item_id) within each user.
    """
    latest: dict[tuple[int, int], RatingEvent] = {}
    for e in events:
        key = (e.user_id, e.item_id)
        kept = latest.get(key)
        if kept is None or e.timestamp >= kept.timestamp:
            latest[key] = e
    histories: dict[int, UserHistory] = {}
    for e in sorted(latest.values(), key=lambda e: (e.user_id, e.timestamp, e.item_id)):
        histories.setdefault(e.user_id, UserHistory(e.user_id)).events.append(e)
    return histories


def split_train_test(
    histories: dict[int, UserHistory],
    ratio: float = 0.8,
    min_events: int = 11,
) -> DatasetSplit:
    """Split each user's chronological history: first floor(ratio*len) events train, rest test.

    Users with fewer than ``min_events`` events cannot seed an initial state
    plus one interaction step and are dropped with a warning.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0,1), got {ratio}")
    train: dict[int, UserHistory] = {}
    test: dict[int, UserHistory] = {}
    dropped = 0
    for user_id, hist in histories.items():
        if len(hist) < min_events:
            dropped += 1
            continue
        cut = int(ratio * len(hist))
        train[user_id] = UserHistory(user_id, hist.events[:cut])
        test[user_id] = UserHistory(user_id, hist.events[cut:])
    if dropped:
        log.warning("dropped %d users with fewer than %d positive events", dropped, min_events)
    return DatasetSplit(train=train, test=test)


def embedding_training_events(
    histories: dict[int, UserHistory],
    split: DatasetSplit,
    positive_only: bool = False,
    threshold: int = POSITIVE_THRESHOLD,
) -> list[RatingEvent]:
    """Select the rating events the embedding model may train on.

    Default: every deduped rating of the split's train users, including
    negatives (so the rating oracle can emit low scores), minus each user's
    held-out test items. ``positive_only`` restricts to the train split's
    positive events instead.
    """
    if positive_only:
        out: list[RatingEvent] = []
        for user_id in sorted(split.train):
            out.extend(e for e in split.train[user_id].events if e.rating >= threshold)
        return out
    out = []
    for user_id in sorted(split.train):
        held_out = {e.item_id for e in split.test.get(user_id, UserHistory(user_id)).events}
        out.extend(e for e in histories[user_id].events if e.item_id not in held_out)
    return out


def write_events_csv(events: list[RatingEvent], path) -> None:
    """Write events as ``user,item,rating,timestamp`` rows ascending by (user, timestamp)."""
    ordered = sorted(events, key=lambda e: (e.user_id, e.timestamp, e.item_id))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("user,item,rating,timestamp\n")
        for e in ordered:
            fh.write(f"{e.user_id},{e.item_id},{e.rating},{e.timestamp}\n")


def read_events_csv(path) -> list[RatingEvent]:
    """Read a normalized event file written by :func:`write_events_csv`."""
    events: list[RatingEvent] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line == "user,item,rating,timestamp":
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise RatingParseError(line_no, f"expected 4 comma-separated fields, got {len(parts)}")
            user, item, rating, ts = (int(p) for p in parts)
            events.append(RatingEvent(user, item, rating, ts))
    return events
