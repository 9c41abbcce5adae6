"""Shared fixtures: the synthetic catalog-scale corpus and its trained stages.

The expensive artifacts (full-scale embedding model, forest) are built once
per session; module tests that only need small inputs construct their own.
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import numpy as np
import pytest

from corpus import write_ml100k_corpus
from drlir.ann import build_forest
from drlir.data import (
    build_histories,
    embedding_training_events,
    filter_positive,
    parse_ratings,
    split_train_test,
)
from drlir.pmf import PmfHyperparams, train_pmf


@pytest.fixture(scope="session")
def ml_ratings_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("corpus") / "u.data"
    write_ml100k_corpus(path)
    return path


@pytest.fixture(scope="session")
def ml_data(ml_ratings_path):
    """(split, embedding events) from the catalog-scale corpus."""
    events = parse_ratings(ml_ratings_path, "ml100k")
    hist_all = build_histories(events)
    hist_pos = build_histories(filter_positive(events, 3))
    split = split_train_test(hist_pos, ratio=0.8, min_events=11)
    embed = embedding_training_events(hist_all, split, positive_only=False, threshold=3)
    return split, embed


@pytest.fixture(scope="session")
def ml_split(ml_data):
    return ml_data[0]


@pytest.fixture(scope="session")
def ml_model(ml_data):
    return train_pmf(ml_data[1], m=100, hp=PmfHyperparams(seed=0))


@pytest.fixture(scope="session")
def ml_forest(ml_model):
    return build_forest(ml_model.item_vectors, n_trees=5, leaf_size=30, seed=0)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    from acceptance_report import LINES

    if LINES:
        terminalreporter.section("acceptance checklist")
        for line in LINES:
            terminalreporter.write_line(line)
