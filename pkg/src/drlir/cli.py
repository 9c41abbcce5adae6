"""Operator surface: one subcommand per pipeline stage.

    ingest            normalize raw ratings into train/test/embedding event files
    train-embeddings  factorize the embedding events into user/item vectors
    build-index       build the approximate-neighbor forest over item vectors
    train-agent       run the interactive training loop, save checkpoint + report
    evaluate          score the greedy policy on test users
    recommend         one-off diversified recommendation for a single user

Option values resolve in layers: built-in defaults, then a ``--config``
key=value file (train-agent only), then ``DRLIR_<DEST>`` environment
variables, then explicit flags. Every artifact is written atomically and
recorded in the run directory's manifest; a file the manifest does not own is
never overwritten without --force. Exit codes: 0 success, 1 validation or
training failure, 2 usage error or missing input artifact.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import data as data_mod
from ._version import __version__
from .ann import build_forest, load_forest, save_forest
from .artifacts import ArtifactError, RunManifest, atomic_write_text, config_hash
from .data import DatasetSplit, build_histories, read_events_csv, write_events_csv
from .env import RewardBoundError
from .evaluate import (
    EvalConfig,
    evaluate,
    known_ratings_from_histories,
    write_learning_curve_csv,
    write_report_csv,
)
from .nets import NetsDivergenceError, load_checkpoint, save_checkpoint
from .pmf import PmfDivergenceError, PmfHyperparams, load_model, save_model, train_pmf
from .state import UserState, encode_state
from .train import NoEligibleUsersError, TrainConfig, train

log = logging.getLogger(__name__)

ENV_PREFIX = "DRLIR_"
EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


class MissingArtifactError(FileNotFoundError):
    """A stage input that an earlier stage should have produced is absent."""


class UsageError(ValueError):
    """Command line parsed but cannot resolve into a runnable invocation."""


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_opt_int(text: str) -> int | None:
    t = text.strip().lower()
    if t in ("", "none"):
        return None
    return int(text)


def _parse_hidden(text: str) -> tuple[int, ...]:
    sizes = tuple(int(p) for p in text.split(",") if p.strip())
    if not sizes or any(s < 1 for s in sizes):
        raise ValueError(f"bad layer sizes: {text!r}")
    return sizes


@dataclass
class Opt:
    flags: tuple[str, ...]
    dest: str
    parse: Callable[[str], object]
    default: object
    help: str
    is_flag: bool = False
    flag_value: object = True
    required: bool = False
    choices: tuple | None = None


def _opt(*flags, dest=None, parse=str, default=None, help="", **kw) -> Opt:
    dest = dest or flags[0].lstrip("-").replace("-", "_")
    return Opt(tuple(flags), dest, parse, default, help, **kw)


_COMMON = [
    _opt("--workdir", parse=str, default=".", help="run directory holding artifacts and manifest"),
    _opt("--force", parse=_parse_bool, default=False, is_flag=True, help="overwrite artifacts this run does not own"),
]

_TRAIN_OPTS = [
    _opt("--seed", parse=int, default=0, help="master seed; all stage randomness derives from it"),
    _opt("--episodes", parse=int, default=5000, help="number of training episodes"),
    _opt("--t-min", parse=int, default=1, help="shortest sampled episode length"),
    _opt("--t-max", parse=int, default=10, help="longest sampled episode length"),
    _opt("--fixed-t", parse=_parse_opt_int, default=None, help="pin every episode to this length"),
    _opt("--gamma", parse=float, default=0.9, help="discount factor"),
    _opt("--tau", parse=float, default=0.001, help="soft-update rate for target networks"),
    _opt("--batch-size", parse=int, default=64, help="replay minibatch size"),
    _opt("--buffer-capacity", parse=int, default=100_000, help="replay buffer capacity"),
    _opt("--candidates", parse=int, default=30, help="retrieved candidate pool size |C|"),
    _opt("--top-n", parse=int, default=10, help="recommended list length N"),
    _opt("--lambda", dest="lam", parse=float, default=1.8, help="reward offset"),
    _opt("--n", dest="n_state_items", parse=int, default=10, help="items per user state"),
    _opt(
        "--no-positional-encoding",
        dest="use_pe",
        parse=_parse_bool,
        default=True,
        is_flag=True,
        flag_value=False,
        help="encode states without positional encoding",
    ),
    _opt("--sigma0", parse=float, default=0.2, help="initial exploration noise scale"),
    _opt("--sigma-decay", parse=float, default=0.999, help="per-episode noise decay factor"),
    _opt(
        "--no-exploration",
        dest="explore",
        parse=_parse_bool,
        default=True,
        is_flag=True,
        flag_value=False,
        help="train without action noise (will not explore)",
    ),
    _opt("--allow-repeats", dest="allow_repeats", parse=_parse_bool, default=False, is_flag=True, help="let lists repeat items already in the state"),
    _opt("--actor-hidden", parse=_parse_hidden, default=(256, 128), help="actor hidden sizes, comma separated"),
    _opt("--critic-hidden", parse=_parse_hidden, default=(256, 128), help="critic hidden sizes, comma separated"),
    _opt("--actor-lr", parse=float, default=1e-4, help="actor learning rate"),
    _opt("--critic-lr", parse=float, default=1e-3, help="critic learning rate"),
    _opt("--warmup-batches", parse=int, default=10, help="batches the buffer must hold before updates"),
    _opt("--search-budget", parse=_parse_opt_int, default=None, help="override forest traversal budget"),
    _opt("--threshold", dest="positive_threshold", parse=float, default=3.0, help="rating that counts as positive feedback"),
]

OPTS: dict[str, list[Opt]] = {
    "ingest": _COMMON
    + [
        _opt("--ratings", parse=str, default=None, required=True, help="raw ratings file"),
        _opt("--format", dest="fmt", parse=str, default="ml100k", choices=("ml100k", "ml1m"), help="raw file format"),
        _opt("--threshold", parse=int, default=3, help="minimum rating kept as a positive interaction"),
        _opt("--ratio", parse=float, default=0.8, help="per-user chronological train fraction"),
        _opt("--n", dest="n_state_items", parse=int, default=10, help="state length; users need n+1 positives"),
        _opt("--pmf-positive-only", parse=_parse_bool, default=False, is_flag=True, help="train embeddings only on positive events"),
    ],
    "train-embeddings": _COMMON
    + [
        _opt("--seed", parse=int, default=0, help="embedding init and visit-order seed"),
        _opt("--m", parse=int, default=100, help="embedding dimension"),
        _opt("--lr", parse=float, default=0.01, help="SGD learning rate"),
        _opt("--l2-user", parse=float, default=0.02, help="user regularization weight"),
        _opt("--l2-item", parse=float, default=0.02, help="item regularization weight"),
        _opt("--epochs", parse=int, default=50, help="SGD epochs"),
        _opt("--init-scale", parse=float, default=0.05, help="uniform init half-width"),
    ],
    "build-index": _COMMON
    + [
        _opt("--seed", parse=int, default=0, help="hyperplane sampling seed"),
        _opt("--trees", parse=int, default=5, help="number of trees"),
        _opt("--leaf-size", parse=int, default=30, help="max items per leaf"),
    ],
    "train-agent": _COMMON
    + [_opt("--config", parse=str, default=None, help="key=value file of training options")]
    + _TRAIN_OPTS
    + [
        _opt("--step-log", parse=str, default=None, help="write a per-step CSV log here"),
    ],
    "evaluate": _COMMON
    + [
        _opt("--seed", parse=int, default=0, help="recorded in report metadata"),
        _opt("--eval-steps", parse=int, default=10, help="greedy rollout length per user"),
        _opt("--n", dest="n_state_items", parse=int, default=10, help="items per user state"),
        _opt("--candidates", parse=int, default=30, help="retrieved candidate pool size |C|"),
        _opt("--top-n", parse=int, default=10, help="recommended list length N"),
        _opt(
            "--no-positional-encoding",
            dest="use_pe",
            parse=_parse_bool,
            default=True,
            is_flag=True,
            flag_value=False,
            help="encode states without positional encoding",
        ),
        _opt("--allow-repeats", parse=_parse_bool, default=False, is_flag=True, help="let lists repeat items already in the state"),
        _opt("--threshold", dest="positive_threshold", parse=float, default=3.0, help="rating that counts as positive feedback"),
        _opt("--search-budget", parse=_parse_opt_int, default=None, help="override forest traversal budget"),
        _opt("--max-users", parse=_parse_opt_int, default=None, help="evaluate at most this many test users"),
        _opt("--out", parse=str, default="eval_report.csv", help="report filename inside the workdir"),
    ],
    "recommend": _COMMON
    + [
        _opt("--user", parse=int, default=None, required=True, help="catalog user id"),
        _opt("--top-n", parse=int, default=10, help="recommended list length N"),
        _opt("--candidates", parse=int, default=30, help="retrieved candidate pool size |C|"),
        _opt("--n", dest="n_state_items", parse=int, default=10, help="items per user state"),
        _opt(
            "--no-positional-encoding",
            dest="use_pe",
            parse=_parse_bool,
            default=True,
            is_flag=True,
            flag_value=False,
            help="encode states without positional encoding",
        ),
        _opt("--threshold", dest="positive_threshold", parse=float, default=3.0, help="rating that counts as positive feedback"),
        _opt("--allow-repeats", parse=_parse_bool, default=False, is_flag=True, help="allow items already in the state"),
        _opt("--out", parse=str, default=None, help="also write the CSV here (default: stdout only)"),
    ],
}


_HELP = {
    "ingest": "normalize raw ratings into train/test/embedding event files",
    "train-embeddings": "factorize the embedding events into user/item vectors",
    "build-index": "build the approximate-neighbor forest over item vectors",
    "train-agent": "run the interactive training loop; saves checkpoint and report",
    "evaluate": "score the greedy policy on test users",
    "recommend": "one-off diversified recommendation for a single user",
}


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="drlir", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"drlir {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)
    sub_parsers: dict[str, argparse.ArgumentParser] = {}
    for cmd, opts in OPTS.items():
        sp = subs.add_parser(cmd, help=_HELP[cmd])
        for opt in opts:
            if opt.is_flag:
                sp.add_argument(
                    *opt.flags,
                    dest=opt.dest,
                    action="store_const",
                    const=opt.flag_value,
                    default=argparse.SUPPRESS,
                    help=opt.help,
                )
            else:
                kwargs = dict(dest=opt.dest, type=opt.parse, default=argparse.SUPPRESS, help=opt.help)
                if opt.choices:
                    kwargs["choices"] = opt.choices
                sp.add_argument(*opt.flags, **kwargs)
        sub_parsers[cmd] = sp
    return parser, sub_parsers


def _read_config_file(path: Path, by_dest: dict[str, Opt]) -> dict:
    """Flat key=value lines; keys are option dests; # starts a comment."""
    out: dict[str, object] = {}
    for line_no, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or key not in by_dest:
            raise ValueError(f"{path}:{line_no}: unknown config key {key!r}")
        out[key] = by_dest[key].parse(value.strip())
    return out


def resolve_options(cmd: str, args: argparse.Namespace) -> dict:
    """Layer defaults, config file, DRLIR_* environment, then explicit flags."""
    opts = OPTS[cmd]
    by_dest = {o.dest: o for o in opts}
    merged = {o.dest: o.default for o in opts}
    provided = vars(args)

    config_path = provided.get("config", os.environ.get(ENV_PREFIX + "CONFIG"))
    if cmd == "train-agent" and config_path:
        path = Path(config_path)
        if not path.exists():
            raise MissingArtifactError(f"config file not found: {path}")
        merged.update(_read_config_file(path, by_dest))

    for opt in opts:
        env_name = ENV_PREFIX + opt.dest.upper()
        if env_name in os.environ:
            merged[opt.dest] = opt.parse(os.environ[env_name])

    for dest, value in provided.items():
        if dest in by_dest:
            merged[dest] = value

    for opt in opts:
        if opt.required and merged.get(opt.dest) is None:
            raise UsageError(f"missing required option --{opt.dest.replace('_', '-')}")
    return merged


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(f"{path} not found; run `drlir {hint}` first")
    return path


def _atomic_binary(write_fn, path: Path, sidecar_suffix: str | None = None) -> None:
    """Run a writer against a temp name, then rename results into place."""
    tmp = path.with_name(path.name + ".tmp")
    write_fn(tmp)
    os.replace(tmp, path)
    if sidecar_suffix:
        os.replace(str(tmp) + sidecar_suffix, str(path) + sidecar_suffix)


def _load_split(workdir: Path) -> DatasetSplit:
    train_p = _require(workdir / "train_events.csv", "ingest")
    test_p = _require(workdir / "test_events.csv", "ingest")
    return DatasetSplit(
        train=build_histories(read_events_csv(train_p)),
        test=build_histories(read_events_csv(test_p)),
    )


def cmd_ingest(ns: dict) -> int:
    workdir = Path(ns["workdir"])
    workdir.mkdir(parents=True, exist_ok=True)
    raw = Path(ns["ratings"])
    if not raw.exists():
        raise MissingArtifactError(f"ratings file not found: {raw}")

    events = data_mod.parse_ratings(raw, ns["fmt"])
    hist_all = build_histories(events)
    positives = data_mod.filter_positive(events, ns["threshold"])
    hist_pos = build_histories(positives)
    split = data_mod.split_train_test(hist_pos, ratio=ns["ratio"], min_events=ns["n_state_items"] + 1)
    embed_events = data_mod.embedding_training_events(
        hist_all, split, positive_only=ns["pmf_positive_only"], threshold=ns["threshold"]
    )

    manifest = RunManifest.load_or_create(workdir)
    outputs = {
        "train_events": ("train_events.csv", [e for u in sorted(split.train) for e in split.train[u].events]),
        "test_events": ("test_events.csv", [e for u in sorted(split.test) for e in split.test[u].events]),
        "embed_events": ("embed_events.csv", embed_events),
    }
    for name, (fname, evs) in outputs.items():
        path = workdir / fname
        manifest.guard_overwrite(name, path, ns["force"])
        _atomic_binary(lambda p, evs=evs: write_events_csv(evs, p), path)
        manifest.record(name, path, kind="events")
    manifest.save()
    print(
        f"ingested {len(events)} events: {len(split.train)} users, "
        f"{sum(len(h) for h in split.train.values())} train / "
        f"{sum(len(h) for h in split.test.values())} test positives, "
        f"{len(embed_events)} embedding events"
    )
    return EXIT_OK


def cmd_train_embeddings(ns: dict) -> int:
    workdir = Path(ns["workdir"])
    events = read_events_csv(_require(workdir / "embed_events.csv", "ingest"))
    hp = PmfHyperparams(
        seed=ns["seed"],
        learning_rate=ns["lr"],
        l2_user=ns["l2_user"],
        l2_item=ns["l2_item"],
        epochs=ns["epochs"],
        init_scale=ns["init_scale"],
    )
    model = train_pmf(events, m=ns["m"], hp=hp)

    manifest = RunManifest.load_or_create(workdir)
    path = workdir / "model.pmf"
    manifest.guard_overwrite("model", path, ns["force"])
    _atomic_binary(lambda p: save_model(model, p), path, sidecar_suffix=".idmap.json")
    manifest.record("model", path, kind="model")
    manifest.record("model_idmap", Path(str(path) + ".idmap.json"), kind="json")
    manifest.seed = ns["seed"]
    manifest.save()
    print(
        f"trained {model.num_users}x{model.num_items} embeddings (m={model.m}); "
        f"final objective {model.train_losses[-1]:.4f}"
    )
    return EXIT_OK


def cmd_build_index(ns: dict) -> int:
    workdir = Path(ns["workdir"])
    model = load_model(_require(workdir / "model.pmf", "train-embeddings"))
    forest = build_forest(model.item_vectors, n_trees=ns["trees"], leaf_size=ns["leaf_size"], seed=ns["seed"])

    manifest = RunManifest.load_or_create(workdir)
    path = workdir / "index.ann"
    manifest.guard_overwrite("index", path, ns["force"])
    _atomic_binary(lambda p: save_forest(forest, p), path)
    manifest.record("index", path, kind="index")
    manifest.save()
    print(f"built {forest.n_trees}-tree index over {forest.num_items} items (leaf size {forest.leaf_size})")
    return EXIT_OK


def _train_config_from(ns: dict) -> TrainConfig:
    fields = (
        "seed,episodes,t_min,t_max,fixed_t,gamma,tau,batch_size,buffer_capacity,"
        "candidates,top_n,lam,n_state_items,use_pe,sigma0,sigma_decay,explore,"
        "allow_repeats,actor_hidden,critic_hidden,actor_lr,critic_lr,"
        "warmup_batches,search_budget,positive_threshold"
    ).split(",")
    return TrainConfig(**{f: ns[f] for f in fields})


def cmd_train_agent(ns: dict) -> int:
    workdir = Path(ns["workdir"])
    split = _load_split(workdir)
    model = load_model(_require(workdir / "model.pmf", "train-embeddings"))
    forest = load_forest(_require(workdir / "index.ann", "build-index"))
    config = _train_config_from(ns)
    known = known_ratings_from_histories(split.test, model)

    step_rows: list[str] = []
    on_step = None
    if ns["step_log"]:
        def on_step(episode, t, uid, outcome):
            step_rows.append(
                f"{episode},{t},{uid},{outcome.reward!r},{outcome.ild!r},"
                f"{outcome.rating_avg!r},{len(outcome.positives)}"
            )

    agent, report = train(config, split, model, forest, known_ratings=known, on_step=on_step)

    manifest = RunManifest.load_or_create(workdir)
    ckpt = workdir / "agent.ckpt"
    manifest.guard_overwrite("checkpoint", ckpt, ns["force"])
    _atomic_binary(lambda p: save_checkpoint(agent, p), ckpt)
    manifest.record("checkpoint", ckpt, kind="checkpoint")

    report_path = workdir / "train_report.csv"
    manifest.guard_overwrite("train_report", report_path, ns["force"])
    lines = [
        f"# aborted={str(report.aborted).lower()}",
        f"# abort_reason={report.abort_reason}",
        f"# total_steps={report.total_steps}",
        f"# config_hash={config_hash(ns, exclude=('workdir', 'force', 'config', 'step_log'))}",
        "episode,reward,critic_loss,actor_grad_norm,sigma,length,user",
    ]
    for i in range(report.episodes):
        lines.append(
            f"{i},{report.episode_rewards[i]!r},{report.critic_losses[i]!r},"
            f"{report.actor_grad_norms[i]!r},{report.sigmas[i]!r},"
            f"{report.episode_lengths[i]},{report.episode_users[i]}"
        )
    atomic_write_text(report_path, "\n".join(lines) + "\n")
    manifest.record("train_report", report_path, kind="report")

    curve_path = workdir / "train_curve.csv"
    manifest.guard_overwrite("train_curve", curve_path, ns["force"])
    write_learning_curve_csv(report.episode_rewards, curve_path)
    manifest.record("train_curve", curve_path, kind="report")

    if ns["step_log"]:
        step_path = Path(ns["step_log"])
        atomic_write_text(step_path, "episode,step,user,reward,ild,rating_avg,n_positives\n" + "\n".join(step_rows) + "\n")

    manifest.seed = config.seed
    manifest.config_hash = config_hash(ns, exclude=("workdir", "force", "config", "step_log"))
    manifest.save()

    if report.aborted:
        print(f"training aborted: {report.abort_reason}; last good networks checkpointed", file=sys.stderr)
        return EXIT_FAILURE
    finite = [r for r in report.episode_rewards if r == r]
    mean_r = float(np.mean(finite)) if finite else float("nan")
    print(
        f"trained {report.episodes} episodes ({report.total_steps} steps, "
        f"{agent.step} updates); mean episode reward {mean_r:.4f}"
    )
    return EXIT_OK


def cmd_evaluate(ns: dict) -> int:
    workdir = Path(ns["workdir"])
    split = _load_split(workdir)
    model = load_model(_require(workdir / "model.pmf", "train-embeddings"))
    forest = load_forest(_require(workdir / "index.ann", "build-index"))
    agent = load_checkpoint(_require(workdir / "agent.ckpt", "train-agent"))

    config = EvalConfig(
        seed=ns["seed"],
        eval_steps=ns["eval_steps"],
        n_state_items=ns["n_state_items"],
        candidates=ns["candidates"],
        top_n=ns["top_n"],
        use_pe=ns["use_pe"],
        allow_repeats=ns["allow_repeats"],
        positive_threshold=ns["positive_threshold"],
        search_budget=ns["search_budget"],
        max_users=ns["max_users"],
    )
    report = evaluate(agent, split, model, forest, config)

    manifest = RunManifest.load_or_create(workdir)
    out = workdir / ns["out"]
    name = out.stem
    manifest.guard_overwrite(name, out, ns["force"])
    write_report_csv(report, out)
    manifest.record(name, out, kind="report")
    manifest.save()
    for metric in sorted(report.aggregates):
        print(f"{metric}: {report.aggregates[metric]:.4f}")
    return EXIT_OK


def cmd_recommend(ns: dict) -> int:
    from .diversify import recommend as build_list
    from .nets import actor_forward

    workdir = Path(ns["workdir"])
    split = _load_split(workdir)
    model = load_model(_require(workdir / "model.pmf", "train-embeddings"))
    forest = load_forest(_require(workdir / "index.ann", "build-index"))
    agent = load_checkpoint(_require(workdir / "agent.ckpt", "train-agent"))

    uid = ns["user"]
    hist = split.train.get(uid)
    if hist is None:
        raise ValueError(f"user {uid} has no training history")
    rows = [model.item_row(e.item_id) for e in hist.events if e.rating >= ns["positive_threshold"]]
    n = ns["n_state_items"]
    if len(rows) < n:
        raise ValueError(f"user {uid} has only {len(rows)} positive items; {n} needed")
    state = UserState(tuple(rows[-n:]))

    s_vec = encode_state(state, model, use_pe=ns["use_pe"])
    action = actor_forward(agent.actor, s_vec)
    exclude = frozenset() if ns["allow_repeats"] else frozenset(state.items)
    rec = build_list(action, forest, k=ns["candidates"], n=ns["top_n"], exclude=exclude)

    lines = ["rank,item_id,tde,angular_distance"]
    for rank, (row, tde, dist) in enumerate(zip(rec.indices, rec.tde, rec.distances), start=1):
        lines.append(f"{rank},{model.item_ids[row]},{tde!r},{dist!r}")
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if ns["out"]:
        atomic_write_text(Path(ns["out"]), text)
    return EXIT_OK


_COMMANDS = {
    "ingest": cmd_ingest,
    "train-embeddings": cmd_train_embeddings,
    "build-index": cmd_build_index,
    "train-agent": cmd_train_agent,
    "evaluate": cmd_evaluate,
    "recommend": cmd_recommend,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser, sub_parsers = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        ns = resolve_options(args.command, args)
        return _COMMANDS[args.command](ns)
    except (MissingArtifactError, UsageError) as exc:
        sys.stderr.write(sub_parsers[args.command].format_usage())
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    except (
        ValueError,
        ArtifactError,
        PmfDivergenceError,
        NetsDivergenceError,
        RewardBoundError,
        NoEligibleUsersError,
    ) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
