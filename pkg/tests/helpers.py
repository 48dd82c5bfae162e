"""Shared test oracles."""
from __future__ import annotations

from typing import Callable

import numpy as np

from surprise_rl import nn, ppo
from surprise_rl.density import VaeParams, init_vae, vae_loss_and_grads


def central_difference(f: Callable[[], float], arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Numerical gradient of ``f`` with respect to ``arr``, perturbed in place.

    The default step sits near the cube root of float64 epsilon, which balances
    truncation against round-off for central differences.
    """
    grad = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        orig = arr[idx]
        arr[idx] = orig + h
        up = f()
        arr[idx] = orig - h
        down = f()
        arr[idx] = orig
        grad[idx] = (up - down) / (2 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, atol: float = 1e-7) -> float:
    """Largest |a - n| / max(|a|, |n|) over entries where either exceeds ``atol``.

    Entries where both gradients are tiny are compared absolutely against ``atol``.
    """
    a, n = np.ravel(analytic), np.ravel(numeric)
    scale = np.maximum(np.abs(a), np.abs(n))
    big = scale > atol
    if np.any(~big) and np.max(np.abs(a - n)[~big]) > atol:
        return np.inf
    return float(np.max(np.abs(a - n)[big] / scale[big])) if big.any() else 0.0


def numpy_mlp(weights, biases, activations, x):
    """Throwaway forward pass written independently of ``surprise_rl.nn``."""
    h = np.array(x, dtype=np.float64)
    for w, b, act in zip(weights, biases, activations):
        z = np.einsum("bi,io->bo", h, w) + b
        if act == "tanh":
            h = (np.exp(z) - np.exp(-z)) / (np.exp(z) + np.exp(-z))
        elif act == "relu":
            h = np.where(z > 0, z, 0.0)
        elif act == "softmax":
            e = np.exp(z)
            h = e / e.sum(axis=1, keepdims=True)
        else:
            h = z
    return h


def train_bandit(updates: int, seed: int = 0, batch: int = 64, good_arm: int = 0):
    """PPO on a two-armed bandit where one arm pays 1 and the other 0.

    Returns the greedy-arm probability after each update.
    """
    rng = np.random.default_rng(seed)
    state = ppo.init_ppo_state(1, 2, rng, hidden=16)
    cfg = ppo.PpoConfig(gamma=0.99, gae_lambda=0.95, n_minibatches=4)
    obs = np.ones((batch, 1))
    history = []
    for _ in range(updates):
        probs = nn.predict(state.policy, obs)
        actions = ppo.sample_actions(probs, rng)
        rewards = (actions == good_arm).astype(float)
        values = nn.predict(state.value, obs)[:, 0]
        dones = np.ones(batch)
        adv, ret = ppo.gae(rewards, values, dones, 0.0, cfg.gamma, cfg.gae_lambda)
        tb = ppo.TrajectoryBatch(obs, actions, rewards, np.zeros(batch), dones,
                                 np.log(probs[np.arange(batch), actions]), values, adv, ret)
        state = ppo.ppo_update(state, tb, cfg, rng)
        history.append(float(nn.predict(state.policy, obs[:1])[0, good_arm]))
    return history


def random_net(rng, acts, max_dim=16):
    sizes = list(rng.integers(2, max_dim + 1, size=len(acts) + 1))
    p = nn.init_mlp(sizes, acts, rng)
    # non-zero biases so every tensor is exercised
    return p.with_tensors([t + 0.1 * rng.normal(size=t.shape) for t in p.tensors()]), sizes


ACT_STACKS = [
    ("tanh", "tanh", "identity"),
    ("relu", "tanh", "softmax"),
    ("tanh", "relu", "identity"),
    ("identity", "tanh", "softmax"),
]


def mlp_gradcheck(seed: int, acts) -> float:
    """Worst relative error between backward and central differences on a random net."""
    rng = np.random.default_rng(seed)
    p, sizes = random_net(rng, acts)
    x = rng.normal(size=(3, sizes[0]))
    c = rng.normal(size=(3, sizes[-1]))
    y, tape = nn.forward(p, x)
    grads, dx = nn.backward(p, tape, c)
    tensors = [t.copy() for t in p.tensors()]

    def loss():
        return float(np.sum(c * nn.predict(p.with_tensors(tensors), x)))

    worst = 0.0
    for t, g in zip(tensors, grads):
        worst = max(worst, max_relative_error(g, central_difference(loss, t)))
    xs = x.copy()
    worst = max(worst, max_relative_error(dx, central_difference(lambda: float(np.sum(c * nn.predict(p, xs))), xs)))
    return worst


def vae_gradcheck(seed: int, beta: float) -> float:
    rng = np.random.default_rng(seed)
    params = init_vae(4, latent_dim=2, hidden=5, rng=rng)
    x = rng.uniform(size=(3, 4))
    noise = rng.normal(size=(3, 2))
    _, grads, _ = vae_loss_and_grads(params, x, noise, beta)
    tensors = [t.copy() for t in params.encoder.tensors() + params.decoder.tensors()]
    n_enc = len(params.encoder.tensors())

    def loss():
        p = VaeParams(params.encoder.with_tensors(tensors[:n_enc]),
                      params.decoder.with_tensors(tensors[n_enc:]), 2)
        return vae_loss_and_grads(p, x, noise, beta)[0]

    return max(max_relative_error(g, central_difference(loss, t)) for t, g in zip(tensors, grads))
