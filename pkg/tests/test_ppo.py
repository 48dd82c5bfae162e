from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from helpers import train_bandit

from surprise_rl import nn, ppo


def discounted_returns(rewards, dones, gamma, bootstrap=0.0):
    """Brute-force forward sums, restarted at every episode end."""
    T = len(rewards)
    out = np.zeros(T)
    for t in range(T):
        total, k = 0.0, t
        while True:
            total += gamma ** (k - t) * rewards[k]
            if dones[k]:
                break
            if k == T - 1:
                total += gamma ** (T - t) * bootstrap
                break
            k += 1
        out[t] = total
    return out


# -- rewards and presets ------------------------------------------------------


def test_alpha_zero_is_task_reward_exactly():
    r = np.array([0.1, 10.0, -3.0])
    out = ppo.combine_rewards(r, np.array([1e9, -5.0, np.pi]), 0.0)
    assert out.tobytes() == r.tobytes()


@given(st.floats(-1e3, 1e3), st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), min_size=1, max_size=8))
def test_combine_is_linear(alpha, pairs):
    task, sm = map(np.array, zip(*pairs))
    np.testing.assert_allclose(ppo.combine_rewards(task, sm, alpha), task + alpha * sm)
    np.testing.assert_allclose(ppo.combine_rewards(2 * task, 2 * sm, alpha), 2 * ppo.combine_rewards(task, sm, alpha),
                               rtol=1e-12, atol=1e-9)


def test_combine_shape_mismatch():
    with pytest.raises(ValueError):
        ppo.combine_rewards(np.zeros(3), np.zeros(2), 0.1)


def test_preset_alphas():
    assert ppo.PRESET_ALPHAS == {
        ("coin_seek", "normal"): 1e-4,
        ("dodge_fight", "normal"): 1e-6,
        ("coin_seek", "vae"): 1e-3,
        ("dodge_fight", "vae"): 1e-5,
    }


def test_config_validation():
    with pytest.raises(ValueError):
        ppo.PpoConfig(clip=0.0)
    with pytest.raises(ValueError):
        ppo.PpoConfig(gamma=1.5)
    with pytest.raises(ValueError):
        ppo.PpoConfig(sm_mode="gmm")


# -- gae ------------------------------------------------------------------------


def test_gae_single_terminal_step():
    adv, ret = ppo.gae([1.0], [0.0], [1.0], 5.0, 0.99, 0.95)
    assert adv[0] == 1.0 and ret[0] == 1.0


def test_gae_monte_carlo_case():
    adv, _ = ppo.gae([1.0, 1.0, 1.0], [0.0, 0.0, 0.0], [0, 0, 1], 0.0, 1.0, 1.0)
    assert list(adv) == [3.0, 2.0, 1.0]
    assert list(adv) == list(discounted_returns([1, 1, 1], [0, 0, 1], 1.0))


@given(st.integers(0, 2**32 - 1), st.floats(0.5, 1.0))
@settings(max_examples=50)
def test_gae_lambda_one_is_monte_carlo(seed, gamma):
    rng = np.random.default_rng(seed)
    T = int(rng.integers(1, 40))
    r, v = rng.normal(size=T), rng.normal(size=T)
    d = rng.random(T) < 0.15
    boot = float(rng.normal())
    adv, ret = ppo.gae(r, v, d, boot, gamma, 1.0)
    np.testing.assert_allclose(adv + v, discounted_returns(r, d, gamma, boot), atol=1e-10, rtol=0)
    np.testing.assert_allclose(ret, adv + v, atol=0, rtol=0)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=50)
def test_gae_lambda_zero_is_td_residual(seed):
    rng = np.random.default_rng(seed)
    T, gamma = 25, 0.97
    r, v = rng.normal(size=T), rng.normal(size=T)
    d = (rng.random(T) < 0.2).astype(float)
    boot = float(rng.normal())
    adv, _ = ppo.gae(r, v, d, boot, gamma, 0.0)
    nxt = np.append(v[1:], boot)
    assert np.array_equal(adv, r + gamma * nxt * (1 - d) - v)


def test_gae_parallel_streams_match_single():
    rng = np.random.default_rng(1)
    r, v, d = rng.normal(size=(10, 3)), rng.normal(size=(10, 3)), rng.random((10, 3)) < 0.2
    boot = rng.normal(size=3)
    adv, _ = ppo.gae(r, v, d, boot, 0.99, 0.9)
    for j in range(3):
        single, _ = ppo.gae(r[:, j], v[:, j], d[:, j], boot[j], 0.99, 0.9)
        np.testing.assert_array_equal(adv[:, j], single)


# -- surrogate --------------------------------------------------------------------


def random_probs(rng, n=16, k=4):
    logits = rng.normal(size=(n, k))
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def test_unit_ratio_gives_vanilla_policy_gradient():
    rng = np.random.default_rng(2)
    probs = random_probs(rng)
    actions = rng.integers(4, size=16)
    adv = rng.normal(size=16)
    rows = np.arange(16)
    _, grad, info = ppo.policy_loss_and_grad(probs, actions, adv, np.log(probs[rows, actions]), 0.2, 0.0)
    # d/dp of -mean(A log p_a)
    vanilla = np.zeros_like(probs)
    vanilla[rows, actions] = -adv / (16 * probs[rows, actions])
    np.testing.assert_allclose(grad, vanilla, rtol=1e-12)
    assert info["clip_frac"] == 0.0 and info["approx_kl"] == 0.0


def test_clipped_samples_carry_no_gradient():
    probs = np.array([[0.6, 0.4], [0.5, 0.5]])
    actions = np.array([0, 1])
    old = np.log(np.array([0.3, 0.5]))  # sample 0: ratio 2 > 1.2
    adv = np.array([1.0, 1.0])
    _, grad, info = ppo.policy_loss_and_grad(probs, actions, adv, old, 0.2, 0.0)
    assert not grad[0].any()
    assert grad[1, 1] != 0.0
    assert info["clip_frac"] == 0.5


def test_negative_advantage_below_clip_is_also_flat():
    probs = np.array([[0.1, 0.9]])
    _, grad, _ = ppo.policy_loss_and_grad(probs, np.array([0]), np.array([-1.0]), np.log([0.5]), 0.2, 0.0)
    assert not grad.any()


def test_surrogate_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    probs = random_probs(rng, 6, 3)
    actions = rng.integers(3, size=6)
    adv = rng.normal(size=6)
    old = np.log(probs[np.arange(6), actions]) + rng.normal(scale=0.1, size=6)
    _, grad, _ = ppo.policy_loss_and_grad(probs, actions, adv, old, 0.2, 0.05)
    h = 1e-6
    for idx in np.ndindex(probs.shape):
        up, down = probs.copy(), probs.copy()
        up[idx] += h
        down[idx] -= h
        num = (ppo.policy_loss_and_grad(up, actions, adv, old, 0.2, 0.05)[0]
               - ppo.policy_loss_and_grad(down, actions, adv, old, 0.2, 0.05)[0]) / (2 * h)
        assert grad[idx] == pytest.approx(num, rel=1e-5, abs=1e-8)


# -- normalization ------------------------------------------------------------------


@given(st.lists(st.floats(-1e4, 1e4), min_size=2, max_size=200).filter(lambda x: np.std(x) > 1e-2))
def test_normalized_advantages(xs):
    out = ppo.normalize(np.array(xs))
    assert abs(out.mean()) < 1e-10
    assert out.std() == pytest.approx(1.0, abs=1e-6)


def test_reward_rescale_leaves_normalized_advantages():
    rng = np.random.default_rng(4)
    r = rng.normal(size=(32, 4))
    d = rng.random((32, 4)) < 0.1
    zeros = np.zeros_like(r)
    a1, _ = ppo.gae(r, zeros, d, np.zeros(4), 0.999, 0.95)
    a10, _ = ppo.gae(10 * r, zeros, d, np.zeros(4), 0.999, 0.95)
    np.testing.assert_allclose(ppo.normalize(a10), ppo.normalize(a1), atol=1e-6)


# -- update ---------------------------------------------------------------------------


def small_batch(rng, n=32, obs_dim=3):
    state = ppo.init_ppo_state(obs_dim, 2, rng, hidden=8)
    obs = rng.normal(size=(n, obs_dim))
    probs = nn.predict(state.policy, obs)
    actions = ppo.sample_actions(probs, rng)
    r = rng.normal(size=n)
    values = nn.predict(state.value, obs)[:, 0]
    adv, ret = ppo.gae(r, values, np.ones(n), 0.0, 0.99, 0.95)
    batch = ppo.TrajectoryBatch(obs, actions, r, np.zeros(n), np.ones(n),
                                np.log(probs[np.arange(n), actions]), values, adv, ret)
    return state, batch


def test_update_requires_advantages():
    rng = np.random.default_rng(5)
    state, batch = small_batch(rng)
    batch.advantages = None
    with pytest.raises(ValueError):
        ppo.ppo_update(state, batch, ppo.PpoConfig(), rng)


def test_update_aborts_on_non_finite_loss():
    rng = np.random.default_rng(6)
    state, batch = small_batch(rng)
    batch.returns = batch.returns.copy()
    batch.returns[3] = np.nan
    out = ppo.ppo_update(state, batch, ppo.PpoConfig(), rng)
    assert out.stats["aborted"]
    assert out.policy.equal(state.policy) and out.value.equal(state.value)


def test_update_is_deterministic():
    state, batch = small_batch(np.random.default_rng(7))
    a = ppo.ppo_update(state, batch, ppo.PpoConfig(), np.random.default_rng(0))
    b = ppo.ppo_update(state, batch, ppo.PpoConfig(), np.random.default_rng(0))
    assert a.policy.equal(b.policy) and a.value.equal(b.value)
    assert not a.policy.equal(state.policy)
    assert a.stats == b.stats and not a.stats["aborted"]


def test_clip_by_global_norm():
    g = [np.array([3.0]), np.array([4.0])]
    out = ppo.clip_by_global_norm(g, 1.0)
    np.testing.assert_allclose([out[0][0], out[1][0]], [0.6, 0.8])
    assert ppo.clip_by_global_norm(g, 10.0) is g


def test_sample_actions_frequencies():
    rng = np.random.default_rng(8)
    probs = np.tile([0.1, 0.6, 0.3], (60_000, 1))
    counts = np.bincount(ppo.sample_actions(probs, rng), minlength=3) / 60_000
    np.testing.assert_allclose(counts, [0.1, 0.6, 0.3], atol=0.01)


def test_fresh_policy_is_near_uniform():
    state = ppo.init_ppo_state(768, 5, np.random.default_rng(9))
    probs = nn.predict(state.policy, np.random.default_rng(1).random((8, 768)))
    np.testing.assert_allclose(probs, 0.2, atol=0.01)


def test_bandit_converges_to_paying_arm():
    history = train_bandit(200, seed=1, good_arm=1)
    assert max(history) > 0.95
