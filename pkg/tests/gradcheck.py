"""Central finite-difference oracles for network gradients.

Shared by the unit tests and the acceptance suite: every analytic gradient in
the agent is re-derived here numerically, with no reuse of the backward pass.

Central differences are only meaningful where the network is smooth on the
whole perturbation interval; a perturbation that flips any ReLU unit's
activation pattern crosses a non-differentiable kink, and the difference
quotient there measures a blend of two linear pieces rather than the local
gradient. Each probe therefore records the ReLU sign pattern at +eps, -eps,
and the center, and entries whose patterns disagree are reported as invalid
instead of compared. Callers assert that the invalid fraction stays tiny.
"""

import numpy as np

from drlir.nets import MlpParams, _forward, actor_forward, critic_forward

EPS = 1e-3


def relu_pattern(params: MlpParams, x: np.ndarray) -> bytes:
    """Sign pattern of every ReLU preactivation for a batch, as hashable bytes."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    _, (pres, _) = _forward(params, x)
    parts = [
        (pres[i] > 0.0).tobytes()
        for i, act in enumerate(params.activations)
        if act == "relu"
    ]
    return b"".join(parts)


def rel_err(analytic, numeric, valid=None):
    """Max relative error over entries, restricted to ``valid`` when given."""
    a = np.asarray(analytic, dtype=np.float64)
    f = np.asarray(numeric, dtype=np.float64)
    if valid is not None:
        a, f = a[valid], f[valid]
        if a.size == 0:
            return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), 1e-8)
    return float(np.max(np.abs(a - f) / denom))


def _param_views(params: MlpParams):
    for w in params.weights:
        yield w
    for b in params.biases:
        yield b


def fd_param_grad(params: MlpParams, probe, eps: float = EPS):
    """Central-difference gradient of ``probe()[0]`` wrt every entry of ``params``.

    ``probe`` must read the live ``params`` object and return
    ``(scalar, relu_sign_pattern)``. Returns ``(grads, valids, n_invalid)``
    where ``valids`` marks entries whose +eps/-eps/center patterns agree.
    """
    _, center_pat = probe()
    grads, valids = [], []
    n_invalid = 0
    for arr in _param_views(params):
        g = np.zeros_like(arr)
        ok = np.ones(arr.shape, dtype=bool)
        it = np.nditer(arr, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + eps
            hi, hi_pat = probe()
            arr[idx] = orig - eps
            lo, lo_pat = probe()
            arr[idx] = orig
            g[idx] = (hi - lo) / (2.0 * eps)
            if not (hi_pat == lo_pat == center_pat):
                ok[idx] = False
                n_invalid += 1
            it.iternext()
        grads.append(g)
        valids.append(ok)
    return grads, valids, n_invalid


def fd_action_grad(critic: MlpParams, state, action, eps: float = EPS):
    """Central-difference dQ/d(action) for one (state, action) pair.

    Returns ``(grad, valid, n_invalid)`` with kink crossings marked invalid.
    """
    state = np.asarray(state, dtype=np.float64)
    action = np.asarray(action, dtype=np.float64).copy()

    def probe():
        x = np.concatenate([state, action])
        return critic_forward(critic, state, action), relu_pattern(critic, x)

    _, center_pat = probe()
    g = np.zeros_like(action)
    valid = np.ones(action.shape, dtype=bool)
    n_invalid = 0
    for j in range(action.shape[0]):
        orig = action[j]
        action[j] = orig + eps
        hi, hi_pat = probe()
        action[j] = orig - eps
        lo, lo_pat = probe()
        action[j] = orig
        g[j] = (hi - lo) / (2.0 * eps)
        if not (hi_pat == lo_pat == center_pat):
            valid[j] = False
            n_invalid += 1
    return g, valid, n_invalid


def critic_mse_probe(critic: MlpParams, states, actions, targets):
    """Probe for the critic's training objective: mean squared TD error."""

    def probe():
        q = critic_forward(critic, states, actions)
        err = np.asarray(q) - targets
        x = np.concatenate([states, actions], axis=1)
        return float(np.mean(err * err)), relu_pattern(critic, x)

    return probe


def actor_objective_probe(actor: MlpParams, critic: MlpParams, states):
    """Probe for the policy objective: mean Q(s, actor(s)); pattern spans both nets."""

    def probe():
        actions = actor_forward(actor, states)
        q = critic_forward(critic, states, actions)
        x = np.concatenate([states, actions], axis=1)
        pat = relu_pattern(actor, states) + relu_pattern(critic, x)
        return float(np.mean(q)), pat

    return probe


def critic_mse(critic: MlpParams, states, actions, targets) -> float:
    q = critic_forward(critic, states, actions)
    err = np.asarray(q) - targets
    return float(np.mean(err * err))


def actor_objective(actor: MlpParams, critic: MlpParams, states) -> float:
    actions = actor_forward(actor, states)
    return float(np.mean(critic_forward(critic, states, actions)))


def applied_grad(params_before: MlpParams, params_after: MlpParams, lr: float, sign: float):
    """Recover the gradient an update applied: (after - before) / (sign * lr)."""
    grads = []
    for b, a in zip(
        list(params_before.weights) + list(params_before.biases),
        list(params_after.weights) + list(params_after.biases),
    ):
        grads.append((a - b) / (sign * lr))
    return grads
