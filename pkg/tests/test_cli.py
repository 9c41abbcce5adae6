"""Command-line coverage: exit codes, artifact round trips, option layering,
and the manifest overwrite guard.

Commands run in-process through ``cli.main`` so a full pipeline stays cheap;
stage artifacts are reloaded through the library loaders to prove the files
are real, not just present.
"""

from __future__ import annotations

import shutil
from pathlib import Path

import pytest

from corpus import write_small_corpus
from drlir import cli
from drlir.ann import load_forest
from drlir.artifacts import RunManifest
from drlir.data import build_histories, read_events_csv
from drlir.nets import load_checkpoint
from drlir.pmf import load_model

SMALL_TRAIN_BASE = [
    "--n", "3", "--top-n", "3", "--candidates", "9", "--fixed-t", "3",
    "--batch-size", "8", "--warmup-batches", "2", "--buffer-capacity", "500",
    "--actor-hidden", "16,8", "--critic-hidden", "16,8",
]
SMALL_TRAIN = ["--episodes", "12", *SMALL_TRAIN_BASE]
SMALL_EVAL = ["--n", "3", "--top-n", "3", "--candidates", "9", "--eval-steps", "4"]


def run(*argv: str) -> int:
    return cli.main(list(argv))


def build_pipeline(workdir: Path, ratings: Path, seed: int = 0) -> None:
    assert run("ingest", "--workdir", str(workdir), "--ratings", str(ratings), "--n", "3") == 0
    assert run("train-embeddings", "--workdir", str(workdir), "--m", "8", "--epochs", "6", "--seed", str(seed)) == 0
    assert run("build-index", "--workdir", str(workdir), "--trees", "3", "--leaf-size", "10", "--seed", str(seed)) == 0
    assert run("train-agent", "--workdir", str(workdir), "--seed", str(seed), *SMALL_TRAIN) == 0
    assert run("evaluate", "--workdir", str(workdir), *SMALL_EVAL) == 0


@pytest.fixture(scope="module")
def ratings_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("raw") / "u.data"
    write_small_corpus(path)
    return path


@pytest.fixture(scope="module")
def staged(tmp_path_factory, ratings_file):
    """Workdir with data, embeddings and index but no agent yet."""
    wd = tmp_path_factory.mktemp("staged")
    assert run("ingest", "--workdir", str(wd), "--ratings", str(ratings_file), "--n", "3") == 0
    assert run("train-embeddings", "--workdir", str(wd), "--m", "8", "--epochs", "6") == 0
    assert run("build-index", "--workdir", str(wd), "--trees", "3", "--leaf-size", "10") == 0
    return wd


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory, ratings_file):
    wd = tmp_path_factory.mktemp("run")
    build_pipeline(wd, ratings_file)
    return wd


@pytest.fixture
def staged_copy(staged, tmp_path):
    dst = tmp_path / "work"
    shutil.copytree(staged, dst)
    return dst


# ---------------------------------------------------------------------------
# exit codes


def test_version_exits_zero(capsys):
    assert run("--version") == 0


def test_no_command_is_usage_error():
    assert run() == 2


def test_unknown_command_is_usage_error():
    assert run("frobnicate") == 2


def test_missing_required_option_is_usage_error(tmp_path, capsys):
    assert run("ingest", "--workdir", str(tmp_path)) == 2
    err = capsys.readouterr().err
    assert "usage:" in err
    assert "--ratings" in err


def test_ingest_missing_ratings_file(tmp_path, capsys):
    missing = tmp_path / "nope.data"
    assert run("ingest", "--workdir", str(tmp_path), "--ratings", str(missing)) == 2
    assert "not found" in capsys.readouterr().err


@pytest.mark.parametrize(
    "argv, hint",
    [
        (("train-embeddings",), "ingest"),
        (("build-index",), "train-embeddings"),
        (("train-agent",), "ingest"),
        (("evaluate",), "ingest"),
        (("recommend", "--user", "1"), "ingest"),
    ],
)
def test_stage_order_enforced(tmp_path, capsys, argv, hint):
    assert run(*argv, "--workdir", str(tmp_path)) == 2
    err = capsys.readouterr().err
    assert "usage:" in err
    assert hint in err


# ---------------------------------------------------------------------------
# pipeline round trip


def test_pipeline_creates_loadable_artifacts(pipeline):
    for fname in (
        "train_events.csv",
        "test_events.csv",
        "embed_events.csv",
        "model.pmf",
        "model.pmf.idmap.json",
        "index.ann",
        "agent.ckpt",
        "train_report.csv",
        "train_curve.csv",
        "eval_report.csv",
        "manifest.json",
    ):
        assert (pipeline / fname).exists(), fname

    model = load_model(pipeline / "model.pmf")
    forest = load_forest(pipeline / "index.ann")
    agent = load_checkpoint(pipeline / "agent.ckpt")
    assert model.m == 8
    assert forest.num_items == model.num_items
    assert agent.step > 0


def test_pipeline_manifest_validates(pipeline):
    manifest = RunManifest.load_or_create(pipeline)
    assert set(manifest.artifacts) >= {
        "train_events", "test_events", "embed_events",
        "model", "index", "checkpoint", "train_report", "eval_report",
    }
    manifest.validate()  # hashes and headers all clean


def test_train_report_layout(pipeline):
    lines = (pipeline / "train_report.csv").read_text().splitlines()
    assert lines[0] == "# aborted=false"
    assert lines[1] == "# abort_reason="
    assert lines[2].startswith("# total_steps=")
    assert lines[3].startswith("# config_hash=")
    assert lines[4] == "episode,reward,critic_loss,actor_grad_norm,sigma,length,user"
    data = lines[5:]
    assert len(data) == 12
    assert all(row.split(",")[5] == "3" for row in data)  # fixed episode length


def test_evaluate_prints_aggregates(pipeline, capsys):
    # re-running evaluate over unchanged inputs is deterministic, so the
    # manifest still owns an identical report file and allows the overwrite
    assert run("evaluate", "--workdir", str(pipeline), *SMALL_EVAL) == 0
    out = capsys.readouterr().out
    for metric in ("diversity_at_n", "ndcg_at_n", "precision_at_n", "precision_frac"):
        assert metric in out


def test_evaluate_custom_out_name(pipeline):
    assert run("evaluate", "--workdir", str(pipeline), *SMALL_EVAL, "--out", "alt_report.csv") == 0
    assert (pipeline / "alt_report.csv").exists()
    base = (pipeline / "eval_report.csv").read_text()
    assert (pipeline / "alt_report.csv").read_text() == base


def test_determinism_across_workdirs(tmp_path, ratings_file):
    wd_a = tmp_path / "a"
    wd_b = tmp_path / "b"
    wd_a.mkdir()
    wd_b.mkdir()
    build_pipeline(wd_a, ratings_file, seed=3)
    build_pipeline(wd_b, ratings_file, seed=3)
    for fname in (
        "train_events.csv",
        "embed_events.csv",
        "model.pmf",
        "model.pmf.idmap.json",
        "index.ann",
        "agent.ckpt",
        "train_report.csv",
        "train_curve.csv",
        "eval_report.csv",
    ):
        assert (wd_a / fname).read_bytes() == (wd_b / fname).read_bytes(), fname


def test_step_log_written(staged_copy):
    log_path = staged_copy / "steps.csv"
    assert run(
        "train-agent", "--workdir", str(staged_copy), *SMALL_TRAIN, "--step-log", str(log_path)
    ) == 0
    lines = log_path.read_text().splitlines()
    assert lines[0] == "episode,step,user,reward,ild,rating_avg,n_positives"
    assert len(lines) == 1 + 12 * 3


# ---------------------------------------------------------------------------
# recommend


def _some_train_user(workdir: Path) -> int:
    hists = build_histories(read_events_csv(workdir / "train_events.csv"))
    for uid in sorted(hists):
        if sum(1 for e in hists[uid].events if e.rating >= 3) >= 3:
            return uid
    raise AssertionError("corpus has no usable user")


def test_recommend_stdout_and_file(pipeline, tmp_path, capsys):
    uid = _some_train_user(pipeline)
    out_file = tmp_path / "recs.csv"
    assert run(
        "recommend", "--workdir", str(pipeline), "--user", str(uid),
        "--n", "3", "--top-n", "3", "--candidates", "9", "--out", str(out_file),
    ) == 0
    text = capsys.readouterr().out
    lines = text.splitlines()
    assert lines[0] == "rank,item_id,tde,angular_distance"
    assert len(lines) == 4
    assert [row.split(",")[0] for row in lines[1:]] == ["1", "2", "3"]
    assert out_file.read_text() == text


def test_recommend_unknown_user(pipeline, capsys):
    assert run("recommend", "--workdir", str(pipeline), "--user", "999999") == 1
    assert "no training history" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# overwrite guard


def test_unrecorded_file_refused_then_forced(tmp_path, ratings_file, capsys):
    wd = tmp_path / "wd"
    wd.mkdir()
    assert run("ingest", "--workdir", str(wd), "--ratings", str(ratings_file), "--n", "3") == 0
    (wd / "model.pmf").write_bytes(b"junk from elsewhere")

    assert run("train-embeddings", "--workdir", str(wd), "--m", "8", "--epochs", "2") == 1
    assert "not recorded" in capsys.readouterr().err
    assert (wd / "model.pmf").read_bytes() == b"junk from elsewhere"

    assert run("train-embeddings", "--workdir", str(wd), "--m", "8", "--epochs", "2", "--force") == 0
    load_model(wd / "model.pmf")


def test_modified_artifact_refused_then_forced(staged_copy, capsys):
    with open(staged_copy / "index.ann", "ab") as fh:
        fh.write(b"tail")
    assert run("build-index", "--workdir", str(staged_copy), "--trees", "3", "--leaf-size", "10") == 1
    assert "changed since" in capsys.readouterr().err
    assert run(
        "build-index", "--workdir", str(staged_copy), "--trees", "3", "--leaf-size", "10", "--force"
    ) == 0
    load_forest(staged_copy / "index.ann")


def test_rerun_of_owned_unchanged_artifact_is_allowed(staged_copy):
    assert run("build-index", "--workdir", str(staged_copy), "--trees", "3", "--leaf-size", "10") == 0


# ---------------------------------------------------------------------------
# option layering: defaults < config file < environment < flags


def test_env_overrides_default(staged_copy, monkeypatch, capsys):
    monkeypatch.setenv("DRLIR_EPISODES", "7")
    assert run("train-agent", "--workdir", str(staged_copy), *SMALL_TRAIN_BASE) == 0
    assert "trained 7 episodes" in capsys.readouterr().out


def test_flag_overrides_env(staged_copy, monkeypatch, capsys):
    monkeypatch.setenv("DRLIR_EPISODES", "7")
    assert run("train-agent", "--workdir", str(staged_copy), *SMALL_TRAIN) == 0
    assert "trained 12 episodes" in capsys.readouterr().out


def test_config_file_overrides_default(staged_copy, capsys):
    cfg = staged_copy / "train.cfg"
    cfg.write_text("episodes = 9  # short demo run\n\nactor_lr=0.003\n")
    assert run("train-agent", "--workdir", str(staged_copy), "--config", str(cfg), *SMALL_TRAIN_BASE) == 0
    assert "trained 9 episodes" in capsys.readouterr().out


def test_env_overrides_config(staged_copy, monkeypatch, capsys):
    cfg = staged_copy / "train.cfg"
    cfg.write_text("episodes=9\n")
    monkeypatch.setenv("DRLIR_EPISODES", "4")
    assert run("train-agent", "--workdir", str(staged_copy), "--config", str(cfg), *SMALL_TRAIN_BASE) == 0
    assert "trained 4 episodes" in capsys.readouterr().out


def test_config_unknown_key_fails(staged_copy, capsys):
    cfg = staged_copy / "train.cfg"
    cfg.write_text("episdoes=9\n")
    assert run("train-agent", "--workdir", str(staged_copy), "--config", str(cfg), *SMALL_TRAIN) == 1
    assert "unknown config key" in capsys.readouterr().err


def test_config_missing_file_is_usage_error(staged_copy, capsys):
    assert run(
        "train-agent", "--workdir", str(staged_copy), "--config", str(staged_copy / "absent.cfg"), *SMALL_TRAIN
    ) == 2
    assert "config file not found" in capsys.readouterr().err
