"""Episode loop tying the agent, retrieval, diversification and environment together.

Each episode replays one training user: the actor proposes a proto-action for
the encoded state, exploration noise perturbs it, the forest plus diversifier
turn it into a list, the simulated user rates the list, and the transition
lands in the replay buffer. Once the buffer is warm every step performs one
critic update, one actor update and a soft update of both targets.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .ann import Forest
from .data import DatasetSplit
from .diversify import recommend
from .env import RatingOracle, RewardBoundError, StepOutcome, step as env_step
from .nets import (
    AgentNets,
    NetsDivergenceError,
    ReplayBuffer,
    actor_forward,
    actor_update,
    critic_update,
    init_agent,
    soft_update,
    td_targets,
)
from .pmf import EmbeddingModel, UnknownItemError, UnknownUserError
from .state import UserState, encode_state

log = logging.getLogger(__name__)


class NoEligibleUsersError(ValueError):
    """No training user has enough positive history to seed an initial state."""


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    episodes: int = 5000
    t_min: int = 1
    t_max: int = 10
    fixed_t: int | None = None
    gamma: float = 0.9
    tau: float = 0.001
    batch_size: int = 64
    buffer_capacity: int = 100_000
    candidates: int = 30
    top_n: int = 10
    lam: float = 1.8
    n_state_items: int = 10
    use_pe: bool = True
    sigma0: float = 0.2
    sigma_decay: float = 0.999
    explore: bool = True
    allow_repeats: bool = False
    actor_hidden: tuple[int, ...] = (256, 128)
    critic_hidden: tuple[int, ...] = (256, 128)
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    warmup_batches: int = 10
    search_budget: int | None = None
    positive_threshold: float = 3.0

    def __post_init__(self):
        if self.episodes < 0:
            raise ValueError("episodes must be >= 0")
        if not 1 <= self.t_min <= self.t_max:
            raise ValueError("need 1 <= t_min <= t_max")
        if self.fixed_t is not None and self.fixed_t < 1:
            raise ValueError("fixed_t must be >= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.batch_size < 1 or self.buffer_capacity < self.batch_size:
            raise ValueError("need buffer_capacity >= batch_size >= 1")
        if not 1 <= self.top_n <= self.candidates:
            raise ValueError("need 1 <= top_n <= candidates")
        if self.n_state_items < 1:
            raise ValueError("n_state_items must be >= 1")
        if self.sigma0 < 0.0 or not 0.0 < self.sigma_decay <= 1.0:
            raise ValueError("need sigma0 >= 0 and sigma_decay in (0, 1]")
        if self.actor_lr <= 0.0 or self.critic_lr <= 0.0:
            raise ValueError("learning rates must be positive")
        if self.warmup_batches < 1:
            raise ValueError("warmup_batches must be >= 1")
        if not 1.0 <= self.positive_threshold <= 5.0:
            raise ValueError("positive_threshold must lie in [1, 5]")


@dataclass
class TrainReport:
    """Per-episode series (all the same length) plus run-level outcomes."""

    episode_rewards: list[float] = field(default_factory=list)
    critic_losses: list[float] = field(default_factory=list)
    actor_grad_norms: list[float] = field(default_factory=list)
    sigmas: list[float] = field(default_factory=list)
    episode_lengths: list[int] = field(default_factory=list)
    episode_users: list[int] = field(default_factory=list)
    total_steps: int = 0
    aborted: bool = False
    abort_reason: str = ""
    snapshots: list[tuple[int, dict]] = field(default_factory=list)

    @property
    def episodes(self) -> int:
        return len(self.episode_rewards)


def eligible_users(
    split: DatasetSplit,
    model: EmbeddingModel,
    n: int = 10,
    threshold: float = 3.0,
) -> list[tuple[int, tuple[int, ...]]]:
    """Training users with >= n embeddable positive events, with their seed rows.

    Returned sorted by user id; the seed rows are the chronologically first n
    positive items, as model rows.
    """
    out: list[tuple[int, tuple[int, ...]]] = []
    for uid in sorted(split.train):
        try:
            model.user_row(uid)
        except UnknownUserError:
            continue
        rows: list[int] = []
        for ev in split.train[uid].events:
            if ev.rating < threshold:
                continue
            try:
                rows.append(model.item_row(ev.item_id))
            except UnknownItemError:
                continue
            if len(rows) == n:
                break
        if len(rows) == n:
            out.append((uid, tuple(rows)))
    return out


def choose_episode_user(
    split: DatasetSplit,
    model: EmbeddingModel,
    rng: np.random.Generator,
    n: int = 10,
    threshold: float = 3.0,
) -> tuple[int, UserState]:
    """Uniformly pick an eligible training user and seed the episode state."""
    elig = eligible_users(split, model, n=n, threshold=threshold)
    if not elig:
        raise NoEligibleUsersError(
            f"no training user has {n} positive events with embeddings"
        )
    uid, rows = elig[int(rng.integers(0, len(elig)))]
    return uid, UserState(rows)


def train(
    config: TrainConfig,
    data: DatasetSplit,
    model: EmbeddingModel,
    forest: Forest,
    *,
    known_ratings: dict[tuple[int, int], float] | None = None,
    on_step: Callable[[int, int, int, StepOutcome], None] | None = None,
    snapshot_hook: Callable[[int, AgentNets], dict] | None = None,
    snapshot_every: int = 0,
) -> tuple[AgentNets, TrainReport]:
    """Run the full training loop; deterministic for a fixed config.

    Returns the agent plus a report whose series have one entry per episode.
    On a non-finite loss or an impossible reward the loop stops before the
    offending update is applied, so the returned networks are the last good
    ones; the report records the abort.
    """
    if forest.num_items != model.num_items or forest.m != model.m:
        raise ValueError("forest and embedding model describe different catalogs")

    oracle = RatingOracle(model, known_ratings)
    elig = eligible_users(data, model, n=config.n_state_items, threshold=config.positive_threshold)
    if not elig:
        raise NoEligibleUsersError(
            f"no training user has {config.n_state_items} positive events with embeddings"
        )

    root = np.random.SeedSequence(config.seed)
    net_ss, buf_ss, ep_ss = root.spawn(3)
    state_dim = config.n_state_items * model.m
    agent = init_agent(
        state_dim,
        model.m,
        actor_hidden=tuple(config.actor_hidden),
        critic_hidden=tuple(config.critic_hidden),
        seed=net_ss,
    )
    buffer = ReplayBuffer(config.buffer_capacity, state_dim, model.m, seed=buf_ss)
    ep_rng = np.random.default_rng(ep_ss)
    warm_at = config.warmup_batches * config.batch_size
    report = TrainReport()

    for episode in range(config.episodes):
        sigma = config.sigma0 * config.sigma_decay**episode
        uid, seed_rows = elig[int(ep_rng.integers(0, len(elig)))]
        state = UserState(seed_rows)
        user_row = model.user_row(uid)
        horizon = (
            config.fixed_t
            if config.fixed_t is not None
            else int(ep_rng.integers(config.t_min, config.t_max + 1))
        )

        step_rewards: list[float] = []
        step_losses: list[float] = []
        step_norms: list[float] = []
        try:
            for t in range(horizon):
                s_vec = encode_state(state, model, use_pe=config.use_pe)
                action = actor_forward(agent.actor, s_vec)
                if config.explore and sigma > 0.0:
                    action = np.clip(action + ep_rng.normal(0.0, sigma, size=model.m), -1.0, 1.0)
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
                    log.warning("episode %d: no recommendable items remain; ending episode", episode)
                    break
                outcome = env_step(
                    state,
                    rec.indices,
                    oracle,
                    user_row,
                    lam=config.lam,
                    threshold=config.positive_threshold,
                )
                s2_vec = encode_state(outcome.next_state, model, use_pe=config.use_pe)
                buffer.push(s_vec, action, outcome.reward, s2_vec)
                report.total_steps += 1
                step_rewards.append(outcome.reward)
                if on_step is not None:
                    on_step(episode, t, uid, outcome)

                if len(buffer) >= warm_at:
                    s_b, a_b, r_b, s2_b = buffer.sample(config.batch_size)
                    targets = td_targets(r_b, s2_b, agent.target_actor, agent.target_critic, config.gamma)
                    step_losses.append(critic_update(agent.critic, s_b, a_b, targets, config.critic_lr))
                    step_norms.append(actor_update(agent.actor, agent.critic, s_b, config.actor_lr))
                    soft_update(agent.critic, agent.target_critic, config.tau)
                    soft_update(agent.actor, agent.target_actor, config.tau)
                    agent.step += 1

                state = outcome.next_state
        except (NetsDivergenceError, RewardBoundError) as exc:
            # updates raise before touching parameters, so the nets are intact
            report.aborted = True
            report.abort_reason = f"episode {episode}: {exc}"
            log.error("training aborted at episode %d: %s", episode, exc)

        report.episode_rewards.append(float(np.mean(step_rewards)) if step_rewards else math.nan)
        report.critic_losses.append(float(np.mean(step_losses)) if step_losses else math.nan)
        report.actor_grad_norms.append(float(np.mean(step_norms)) if step_norms else math.nan)
        report.sigmas.append(sigma)
        report.episode_lengths.append(len(step_rewards))
        report.episode_users.append(uid)

        if report.aborted:
            break
        if snapshot_hook is not None and snapshot_every > 0 and (episode + 1) % snapshot_every == 0:
            report.snapshots.append((episode, snapshot_hook(episode, agent)))

    return agent, report
