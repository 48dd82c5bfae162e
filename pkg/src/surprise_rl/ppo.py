"""Clipped-surrogate PPO on separate policy and value MLPs."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .exceptions import NonFiniteError

logger = logging.getLogger(__name__)

# SM reward scale per (game, density model)
PRESET_ALPHAS = {
    ("coin_seek", "normal"): 1e-4,
    ("dodge_fight", "normal"): 1e-6,
    ("coin_seek", "vae"): 1e-3,
    ("dodge_fight", "vae"): 1e-5,
}

SM_MODES = ("off", "normal", "vae")
PROB_FLOOR = 1e-12


@dataclass
class PpoConfig:
    clip: float = 0.2
    gamma: float = 0.999
    gae_lambda: float = 0.95
    ent_coef: float = 0.01
    vf_coef: float = 0.5
    epochs: int = 3
    n_minibatches: int = 8
    learning_rate: float = 5e-4
    max_grad_norm: float = 0.5
    alpha: float = 0.0
    sm_mode: str = "off"

    def __post_init__(self):
        if not 0.0 < self.clip < 1.0:
            raise ValueError("clip must lie in (0, 1)")
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.gae_lambda <= 1.0):
            raise ValueError("gamma and gae_lambda must lie in [0, 1]")
        if self.sm_mode not in SM_MODES:
            raise ValueError(f"sm_mode must be one of {SM_MODES}")


@dataclass
class TrajectoryBatch:
    """One rollout batch, flattened so every array has length B."""

    obs: np.ndarray
    actions: np.ndarray
    task_rewards: np.ndarray
    sm_rewards: np.ndarray
    dones: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None
    gray: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.actions)


def combine_rewards(r_task, r_sm, alpha: float) -> np.ndarray:
    r_task = np.asarray(r_task, dtype=np.float64)
    r_sm = np.asarray(r_sm, dtype=np.float64)
    if r_task.shape != r_sm.shape:
        raise ValueError("task and SM rewards must have equal shapes")
    return r_task + alpha * r_sm


def gae(rewards, values, dones, bootstrap_value, gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimates along axis 0.

    Arrays are ``(T,)`` for one stream or ``(T, N)`` for N parallel streams;
    ``bootstrap_value`` is V of the state after the last step. ``dones[t]``
    marks that the episode ended on step t, cutting both the bootstrap and the
    advantage recursion.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    not_done = 1.0 - np.asarray(dones, dtype=np.float64)
    next_values = np.concatenate([values[1:], np.asarray(bootstrap_value, dtype=np.float64)[None]], axis=0)
    deltas = rewards + gamma * next_values * not_done - values
    adv = np.zeros_like(deltas)
    last = np.zeros_like(deltas[0])
    for t in reversed(range(len(deltas))):
        last = deltas[t] + gamma * lam * not_done[t] * last
        adv[t] = last
    return adv, adv + values


def normalize(x: np.ndarray) -> np.ndarray:
    return (x - x.mean()) / (x.std() + 1e-8)


def policy_loss_and_grad(probs, actions, advantages, old_log_probs, clip: float, ent_coef: float):
    """Clipped surrogate loss (to minimize) and its gradient w.r.t. ``probs``.

    Returns ``(loss, dloss_dprobs, info)``; ``info`` carries entropy, clip
    fraction and an approximate KL.
    """
    n = len(actions)
    rows = np.arange(n)
    p = np.maximum(probs, PROB_FLOOR)
    logp = np.log(p[rows, actions])
    ratio = np.exp(logp - old_log_probs)
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip)
    surr = np.minimum(ratio * advantages, clipped * advantages)
    entropy = -np.sum(p * np.log(p), axis=1)
    loss = -surr.mean() - ent_coef * entropy.mean()

    # the unclipped branch carries gradient; the clipped one is constant in theta
    live = ratio * advantages <= clipped * advantages
    d_logp = -(live * ratio * advantages) / n
    grad = ent_coef / n * (np.log(p) + 1.0)
    grad[rows, actions] += d_logp / p[rows, actions]
    info = {
        "entropy": float(entropy.mean()),
        "clip_frac": float(np.mean(np.abs(ratio - 1.0) > clip)),
        "approx_kl": float(np.mean(old_log_probs - logp)),
    }
    return float(loss), grad, info


def clip_by_global_norm(grads: list[np.ndarray], max_norm: float) -> list[np.ndarray]:
    if max_norm is None or max_norm <= 0:
        return grads
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total <= max_norm:
        return grads
    return [g * (max_norm / total) for g in grads]


@dataclass
class PpoState:
    """Networks plus their optimizer states; replaced wholesale by each update."""

    policy: nn.MlpParams
    value: nn.MlpParams
    policy_opt: nn.OptimizerState
    value_opt: nn.OptimizerState
    stats: dict = field(default_factory=dict)


def init_ppo_state(obs_dim: int, n_actions: int, rng: np.random.Generator, hidden: int = 64,
                   learning_rate: float = 5e-4) -> PpoState:
    policy = nn.init_mlp([obs_dim, hidden, hidden, n_actions], ["tanh", "tanh", "softmax"], rng, last_scale=0.01)
    value = nn.init_mlp([obs_dim, hidden, hidden, 1], ["tanh", "tanh", "identity"], rng)
    return PpoState(policy, value, nn.adam_init(policy, lr=learning_rate), nn.adam_init(value, lr=learning_rate))


def ppo_update(state: PpoState, batch: TrajectoryBatch, cfg: PpoConfig, rng: np.random.Generator) -> PpoState:
    """Several epochs of shuffled minibatch PPO on ``batch``.

    ``batch.advantages`` and ``batch.returns`` must already be computed from
    the combined reward. Advantages are normalized once per update. A
    non-finite loss or gradient aborts the whole update and returns the
    incoming parameters unchanged.
    """
    if batch.advantages is None or batch.returns is None:
        raise ValueError("batch advantages/returns must be computed before ppo_update")
    adv = normalize(batch.advantages)
    policy, value, popt, vopt = state.policy, state.value, state.policy_opt, state.value_opt
    pi_losses, v_losses, entropies, clip_fracs, kls = [], [], [], [], []
    try:
        for _ in range(cfg.epochs):
            perm = rng.permutation(len(batch))
            for idx in np.array_split(perm, cfg.n_minibatches):
                obs = batch.obs[idx]
                probs, ptape = nn.forward(policy, obs)
                pi_loss, dprobs, info = policy_loss_and_grad(
                    probs, batch.actions[idx], adv[idx], batch.log_probs[idx], cfg.clip, cfg.ent_coef
                )
                v, vtape = nn.forward(value, obs)
                err = v[:, 0] - batch.returns[idx]
                v_loss = cfg.vf_coef * float(np.mean(err * err))
                if not (np.isfinite(pi_loss) and np.isfinite(v_loss)):
                    raise NonFiniteError("non-finite PPO loss")
                pgrads, _ = nn.backward(policy, ptape, dprobs)
                vgrads, _ = nn.backward(value, vtape, (2.0 * cfg.vf_coef / len(idx)) * err[:, None])
                policy, popt = nn.adam_step(popt, policy, clip_by_global_norm(pgrads, cfg.max_grad_norm))
                value, vopt = nn.adam_step(vopt, value, clip_by_global_norm(vgrads, cfg.max_grad_norm))
                pi_losses.append(pi_loss)
                v_losses.append(v_loss)
                entropies.append(info["entropy"])
                clip_fracs.append(info["clip_frac"])
                kls.append(info["approx_kl"])
    except NonFiniteError as exc:
        logger.warning("PPO update aborted, parameters left unchanged: %s", exc)
        return PpoState(state.policy, state.value, state.policy_opt, state.value_opt, {"aborted": True})
    stats = {
        "pi_loss": float(np.mean(pi_losses)),
        "v_loss": float(np.mean(v_losses)),
        "entropy": float(np.mean(entropies)),
        "clip_frac": float(np.mean(clip_fracs)),
        "approx_kl": float(np.mean(kls)),
        "aborted": False,
    }
    return PpoState(policy, value, popt, vopt, stats)


def sample_actions(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF sampling, one uniform draw per row."""
    u = rng.random(len(probs))
    a = (np.cumsum(probs, axis=1) < u[:, None]).sum(axis=1)
    return np.minimum(a, probs.shape[1] - 1)
