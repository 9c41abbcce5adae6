"""Actor and critic perceptrons with hand-rolled forward/backward passes.

The actor maps a flattened user state to a bounded continuous proto-action
(two ReLU layers, Tanh output); the critic scores a (state, action) pair fed
as one concatenated input (two ReLU layers, linear output). Updates are plain
SGD so every gradient stays checkable against finite differences; target
copies of both nets track the online ones through soft updates.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"DRLIRCKP"
FORMAT_VERSION = 1

_ACT_CODES = {"relu": 0, "tanh": 1, "identity": 2}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


class NetsDivergenceError(RuntimeError):
    """A loss or gradient stopped being finite mid-training."""


@dataclass
class MlpParams:
    weights: list[np.ndarray]  # (fan_in, fan_out) per layer
    biases: list[np.ndarray]
    activations: list[str]

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ValueError("weights, biases and activations must align")
        for act in self.activations:
            if act not in _ACT_CODES:
                raise ValueError(f"unknown activation {act!r}")
        for i in range(1, len(self.weights)):
            if self.weights[i - 1].shape[1] != self.weights[i].shape[0]:
                raise ValueError("adjacent layer dimensions are incompatible")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def copy(self) -> "MlpParams":
        return MlpParams(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            list(self.activations),
        )


def init_mlp(sizes: list[int], activations: list[str], rng: np.random.Generator, final_scale: float = 1.0) -> MlpParams:
    """Fan-in-scaled uniform init; ``final_scale`` shrinks the output layer."""
    if len(sizes) != len(activations) + 1:
        raise ValueError("need len(sizes) == len(activations) + 1")
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = 1.0 / math.sqrt(fan_in)
        scale = final_scale if i == len(activations) - 1 else 1.0
        weights.append(scale * rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(scale * rng.uniform(-bound, bound, size=fan_out))
    return MlpParams(weights, biases, list(activations))


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _activation_deriv(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0.0).astype(z.dtype)
    if name == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


def _forward(params: MlpParams, x: np.ndarray):
    a = x
    pres, acts = [], [x]
    for w, b, name in zip(params.weights, params.biases, params.activations):
        z = a @ w + b
        a = _activate(name, z)
        pres.append(z)
        acts.append(a)
    return a, (pres, acts)


def _backward(params: MlpParams, cache, grad_out: np.ndarray):
    """Backprop an upstream dL/d(output); returns (dW list, db list, dL/d(input))."""
    pres, acts = cache
    grad_ws = [None] * len(params.weights)
    grad_bs = [None] * len(params.biases)
    g = grad_out
    for layer in range(len(params.weights) - 1, -1, -1):
        g = g * _activation_deriv(params.activations[layer], pres[layer], acts[layer + 1])
        grad_ws[layer] = acts[layer].T @ g
        grad_bs[layer] = g.sum(axis=0)
        g = g @ params.weights[layer].T
    return grad_ws, grad_bs, g


def _as_batch(x: np.ndarray, dim: int, what: str):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        if x.shape[0] != dim:
            raise ValueError(f"{what} has length {x.shape[0]}, expected {dim}")
        return x[None, :], True
    if x.ndim == 2 and x.shape[1] == dim:
        return x, False
    raise ValueError(f"{what} has shape {x.shape}, expected (*, {dim})")


def actor_forward(params: MlpParams, state_vec: np.ndarray) -> np.ndarray:
    """Proto-action for a state (or batch of states); every component in (-1, 1)."""
    x, single = _as_batch(state_vec, params.in_dim, "state vector")
    out, _ = _forward(params, x)
    return out[0] if single else out


def critic_forward(params: MlpParams, state_vec: np.ndarray, action: np.ndarray) -> float | np.ndarray:
    """Estimated return of taking ``action`` in ``state_vec``."""
    q = _critic_batch(params, state_vec, action)[0]
    return float(q[0, 0]) if q.shape[0] == 1 and np.asarray(state_vec).ndim == 1 else q[:, 0]


def _critic_batch(params: MlpParams, state_vec, action):
    action = np.asarray(action, dtype=np.float64)
    a_dim = action.shape[-1]
    s_dim = params.in_dim - a_dim
    s, _ = _as_batch(state_vec, s_dim, "state vector")
    a, _ = _as_batch(action, a_dim, "action")
    if s.shape[0] != a.shape[0]:
        raise ValueError("state and action batches differ in length")
    x = np.concatenate([s, a], axis=1)
    q, cache = _forward(params, x)
    return q, cache, s_dim


def critic_grad_wrt_action(params: MlpParams, state_vec: np.ndarray, action: np.ndarray) -> np.ndarray:
    """Analytic dQ/d(action) at the given inputs."""
    single = np.asarray(state_vec).ndim == 1
    q, cache, s_dim = _critic_batch(params, state_vec, action)
    _, _, g_in = _backward(params, cache, np.ones_like(q))
    g_a = g_in[:, s_dim:]
    return g_a[0] if single else g_a


def td_targets(
    rewards: np.ndarray,
    next_states: np.ndarray,
    target_actor: MlpParams,
    target_critic: MlpParams,
    gamma: float,
) -> np.ndarray:
    """Bootstrapped one-step targets, evaluated with the target networks only."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    next_actions = actor_forward(target_actor, next_states)
    q_next, _, _ = _critic_batch(target_critic, next_states, next_actions)
    return np.asarray(rewards, dtype=np.float64) + gamma * q_next[:, 0]


def critic_update(
    critic: MlpParams,
    states: np.ndarray,
    actions: np.ndarray,
    targets: np.ndarray,
    lr: float,
) -> float:
    """One SGD step on the mean squared TD error; returns the pre-step loss."""
    q, cache, _ = _critic_batch(critic, states, actions)
    err = q[:, 0] - np.asarray(targets, dtype=np.float64)
    loss = float(np.mean(err * err))
    if not math.isfinite(loss):
        raise NetsDivergenceError(f"critic loss is not finite ({loss})")
    grad_out = (2.0 / err.shape[0]) * err[:, None]
    grad_ws, grad_bs, _ = _backward(critic, cache, grad_out)
    for w, b, gw, gb in zip(critic.weights, critic.biases, grad_ws, grad_bs):
        w -= lr * gw
        b -= lr * gb
    return loss


def actor_update(actor: MlpParams, critic: MlpParams, states: np.ndarray, lr: float) -> float:
    """One ascent step on mean Q(s, actor(s)); returns the global gradient norm.

    Chains dQ/d(action) at the actor's own output through the actor parameters;
    the critic is read, never modified.
    """
    states = np.asarray(states, dtype=np.float64)
    batch = states.shape[0]
    actions, cache_a = _forward(actor, states)
    q, cache_c, s_dim = _critic_batch(critic, states, actions)
    _, _, g_in = _backward(critic, cache_c, np.ones_like(q))
    g_action = g_in[:, s_dim:]
    grad_ws, grad_bs, _ = _backward(actor, cache_a, g_action / batch)
    sq = 0.0
    for gw, gb in zip(grad_ws, grad_bs):
        sq += float(np.sum(gw * gw) + np.sum(gb * gb))
    norm = math.sqrt(sq)
    if not math.isfinite(norm):
        raise NetsDivergenceError(f"actor gradient is not finite ({norm})")
    for w, b, gw, gb in zip(actor.weights, actor.biases, grad_ws, grad_bs):
        w += lr * gw
        b += lr * gb
    return norm


def soft_update(online: MlpParams, target: MlpParams, tau: float) -> MlpParams:
    """Blend the target toward the online net: target <- tau*online + (1-tau)*target."""
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must lie in (0, 1]")
    for wo, wt in zip(online.weights, target.weights):
        if wo.shape != wt.shape:
            raise ValueError(f"shape mismatch {wo.shape} vs {wt.shape}")
        wt *= 1.0 - tau
        wt += tau * wo
    for bo, bt in zip(online.biases, target.biases):
        if bo.shape != bt.shape:
            raise ValueError(f"shape mismatch {bo.shape} vs {bt.shape}")
        bt *= 1.0 - tau
        bt += tau * bo
    return target


class ReplayBuffer:
    """FIFO ring of (s, a, r, s') transitions with seeded uniform sampling."""

    def __init__(
        self,
        capacity: int,
        state_dim: int,
        action_dim: int,
        seed: int | np.random.SeedSequence = 0,
    ):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._s = np.zeros((capacity, state_dim))
        self._a = np.zeros((capacity, action_dim))
        self._r = np.zeros(capacity)
        self._s2 = np.zeros((capacity, state_dim))
        self._size = 0
        self._pos = 0
        self._rng = np.random.default_rng(seed)

    def __len__(self) -> int:
        return self._size

    def push(self, s: np.ndarray, a: np.ndarray, r: float, s_next: np.ndarray) -> None:
        if not (np.isfinite(s).all() and np.isfinite(a).all() and math.isfinite(r) and np.isfinite(s_next).all()):
            raise ValueError("transitions must be finite")
        self._s[self._pos] = s
        self._a[self._pos] = a
        self._r[self._pos] = r
        self._s2[self._pos] = s_next
        self._pos = (self._pos + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int):
        """Uniform without replacement; callers defer updates while underfull."""
        if batch_size > self._size:
            raise ValueError(f"buffer holds {self._size} < batch size {batch_size}")
        idx = self._rng.choice(self._size, size=batch_size, replace=False)
        return self._s[idx].copy(), self._a[idx].copy(), self._r[idx].copy(), self._s2[idx].copy()


@dataclass
class AgentNets:
    actor: MlpParams
    critic: MlpParams
    target_actor: MlpParams
    target_critic: MlpParams
    step: int = field(default=0)


def init_agent(
    state_dim: int,
    action_dim: int,
    actor_hidden: tuple[int, ...] = (256, 128),
    critic_hidden: tuple[int, ...] = (256, 128),
    seed: int | np.random.SeedSequence = 0,
    actor_final_scale: float = 1e-3,
) -> AgentNets:
    """Fresh online nets with target copies initialized to the same weights."""
    rng = np.random.default_rng(seed)
    actor = init_mlp(
        [state_dim, *actor_hidden, action_dim],
        ["relu"] * len(actor_hidden) + ["tanh"],
        rng,
        final_scale=actor_final_scale,
    )
    critic = init_mlp(
        [state_dim + action_dim, *critic_hidden, 1],
        ["relu"] * len(critic_hidden) + ["identity"],
        rng,
    )
    return AgentNets(actor, critic, actor.copy(), critic.copy())


def _write_net(fh, params: MlpParams) -> None:
    fh.write(struct.pack("<I", len(params.weights)))
    for w, b, act in zip(params.weights, params.biases, params.activations):
        fh.write(struct.pack("<IIB", w.shape[0], w.shape[1], _ACT_CODES[act]))
        fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def _read_net(fh) -> MlpParams:
    (n_layers,) = struct.unpack("<I", fh.read(4))
    weights, biases, acts = [], [], []
    for _ in range(n_layers):
        fan_in, fan_out, code = struct.unpack("<IIB", fh.read(9))
        weights.append(np.frombuffer(fh.read(fan_in * fan_out * 8), dtype="<f8").reshape(fan_in, fan_out).copy())
        biases.append(np.frombuffer(fh.read(fan_out * 8), dtype="<f8").copy())
        acts.append(_ACT_NAMES[code])
    return MlpParams(weights, biases, acts)


def save_checkpoint(agent: AgentNets, path) -> None:
    """Binary checkpoint of all four networks; round-trips bit-exactly."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, agent.step))
        for net in (agent.actor, agent.critic, agent.target_actor, agent.target_critic):
            _write_net(fh, net)


def load_checkpoint(path) -> AgentNets:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"not a checkpoint file: bad magic {magic!r}")
        version, step = struct.unpack("<IQ", fh.read(12))
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version} (expected {FORMAT_VERSION})")
        nets = [_read_net(fh) for _ in range(4)]
    return AgentNets(*nets, step=step)
