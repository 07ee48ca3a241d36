import math
from functools import partial

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gmarl.baselines import batch_fit, run_fixed_filter
from gmarl.envs import ReplayEnv, SyntheticEnv, generate_episode
from gmarl.filters import shift_features
from gmarl.graph_env import AttachmentKind, AttachmentSpec, ExpandingGraphState
from gmarl.policy import ACTION_SCALE, PolicyParameters
from gmarl.trainer import (
    TrainConfig,
    discounted_return,
    evaluate,
    policy_gradient,
    reward_to_go,
    rollout,
    rollout_batch,
    train,
)


def bandit_build(seed):
    """One node with value 1; the arrival links to it and has truth 1, so loss = (h_1 - 1)^2."""
    state = ExpandingGraphState(np.zeros((1, 1)), np.array([1.0]))
    return state, AttachmentSpec(AttachmentKind.REPLAY, replay_vectors=(np.array([1.0]),)), np.array([1.0])


BANDIT = ReplayEnv(bandit_build, "bandit")


def planted_build(seed, taps, horizon=60):
    """Replay episode whose truths are produced exactly by ``taps``."""
    rng = np.random.default_rng(seed)
    adj = np.array([[0, 1, 1], [1, 0, 0], [1, 0, 0]], dtype=float)
    x = rng.standard_normal(3)
    state = ExpandingGraphState(adj, x)
    vectors, truths = [], []
    for _ in range(horizon):
        a = np.zeros(x.size)
        a[rng.choice(x.size, 2, replace=False)] = 1.0
        y = float(shift_features(adj, a, x, len(taps) - 1) @ np.asarray(taps)[1:])
        vectors.append(a)
        truths.append(y)
        adj = np.block([[adj, a[:, None]], [a[None, :], np.zeros((1, 1))]])
        x = np.append(x, y)
    return state, AttachmentSpec(AttachmentKind.REPLAY, replay_vectors=tuple(vectors)), np.array(truths)


def zero_head(order=3, seed=0):
    p = PolicyParameters.init(order, seed)
    p.arrays["head_w"] = np.zeros_like(p["head_w"])
    p.arrays["head_b"] = np.zeros_like(p["head_b"])
    return p


# -- returns ---------------------------------------------------------------------


def test_return_examples():
    assert discounted_return([0.0, 0.0, 0.0], 0.9) == 0.0
    assert discounted_return([2.5, 7.0, 1.0], 0.0) == -2.5
    assert discounted_return([1.0, 2.0, 3.0], 1.0) == -6.0
    assert reward_to_go([1.0, 2.0, 3.0], 1.0, 2) == -5.0
    assert reward_to_go([1.0, 2.0, 3.0], 0.5, 1) == -(1 + 1 + 0.75)
    with pytest.raises(IndexError):
        reward_to_go([1.0], 1.0, 2)


@given(st.lists(st.floats(0, 1e6), min_size=1, max_size=60))
def test_undiscounted_return_is_negative_loss_sum(losses):
    assert math.isclose(discounted_return(losses, 1.0), -math.fsum(losses), rel_tol=1e-12, abs_tol=1e-300)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(gamma=1.5)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(episodes_per_epoch=6, group_size=4)


# -- rollouts ----------------------------------------------------------------------


def test_single_step_rollout():
    p = PolicyParameters.init(3, 0)
    tr = rollout(SyntheticEnv(), p, np.zeros(4), 1, seed=3)
    assert len(tr) == 1 and tr.actions.shape == (1, 4) and tr.losses.shape == (1,)
    assert np.isfinite(tr.log_probs[0])


@pytest.mark.parametrize("deterministic", [True, False])
def test_rollout_is_reproducible(deterministic):
    env = ReplayEnv(partial(planted_build, taps=[0, 0.5, 0.1, 0.0]), "planted")
    p = PolicyParameters.init(3, 1)
    a = rollout(env, p, np.zeros(4), 20, seed=5, deterministic=deterministic)
    b = rollout(env, p, np.zeros(4), 20, seed=5, deterministic=deterministic)
    for field in ("actions", "predictions", "losses", "taps_after"):
        np.testing.assert_array_equal(getattr(a, field), getattr(b, field))


def test_trace_records_taps_consistently():
    tr = rollout(SyntheticEnv(), PolicyParameters.init(3, 2), np.array([0.0, 0.4, 0.1, 0.0]), 10, seed=1)
    np.testing.assert_allclose(tr.taps_after, tr.taps_before + tr.actions, rtol=0, atol=0)
    np.testing.assert_array_equal(tr.taps_before[1:], tr.taps_after[:-1])
    assert np.all(tr.losses >= 0)


def test_frozen_batch_taps_match_batch_baseline():
    env = SyntheticEnv()
    taps = batch_fit(generate_episode(env, 50, [0, 1]).transitions, 3)
    for seed in range(5):
        tr = rollout(env, zero_head(), taps, 50, seed=seed, deterministic=True)
        np.testing.assert_array_equal(tr.actions, 0.0)
        _, losses = run_fixed_filter(taps, tr.episode.transitions)
        np.testing.assert_allclose(tr.losses, losses, rtol=1e-12, atol=1e-15)


# -- training ------------------------------------------------------------------------


def test_zero_learning_rate_leaves_parameters_unchanged():
    cfg = TrainConfig(horizon=5, epochs=3, episodes_per_epoch=4, learning_rate=0.0, eval_runs=2)
    p0 = PolicyParameters.init(3, 4)
    res = train(cfg, SyntheticEnv(), params=p0)
    for k in p0.names():
        np.testing.assert_array_equal(res.params[k], p0[k])
    assert [c["epoch"] for c in res.curve] == [1, 2, 3]


def test_non_finite_gradient_aborts():
    def build(seed):
        state, spec, truths = bandit_build(seed)
        return state, spec, np.array([np.nan])

    cfg = TrainConfig(horizon=1, order=1, epochs=2, episodes_per_epoch=4, eval_runs=1)
    with pytest.raises(FloatingPointError):
        train(cfg, ReplayEnv(build), taps_init=np.zeros(2))


def test_bandit_converges_to_optimal_tap():
    # the action head is scaled by ACTION_SCALE, so a larger step reaches mean 1 in 2000 epochs
    cfg = TrainConfig(horizon=1, order=1, epochs=2000, episodes_per_epoch=16, learning_rate=0.05, eval_runs=1, init_spread=0.1)
    res = train(cfg, BANDIT, taps_init=np.zeros(2))
    tr = rollout(BANDIT, res.params, np.zeros(2), 1, seed=0, deterministic=True)
    assert abs(tr.taps_after[0, 1] - 1.0) < 0.1


def bandit_gradient_batches(p, baseline, n_batches=100, batch=100):
    ep = generate_episode(BANDIT, 1, 0, order=1)
    out = []
    for b in range(n_batches):
        rngs = [np.random.default_rng([7, b, i]) for i in range(batch)]
        traces = rollout_batch(p, [ep] * batch, np.zeros(2), rngs)
        g, _ = policy_gradient(p, traces, 1.0, baseline)
        out.append([g["head_b"][0], g["log_std"][1]])
    return np.array(out)


@pytest.fixture(scope="module")
def bandit_params():
    p = PolicyParameters.init(1, 3)
    p.arrays["log_std"] = np.log([0.2, 0.3])
    return p


def test_policy_gradient_is_unbiased_on_bandit(bandit_params):
    p = bandit_params
    mu = rollout(BANDIT, p, np.zeros(2), 1, seed=0, deterministic=True).actions[0]
    sd = np.exp(p["log_std"])
    # E[r] = -((mu_1 - 1)^2 + sd_1^2); mu depends on head_b through ACTION_SCALE
    analytic = np.array([-2 * (mu[1] - 1) * ACTION_SCALE, -2 * sd[1] ** 2])
    est = bandit_gradient_batches(p, None)
    se = est.std(axis=0, ddof=1) / math.sqrt(len(est))
    assert np.all(np.abs(est.mean(axis=0) - analytic) < 3 * se), (est.mean(axis=0), analytic, se)


def test_baseline_does_not_change_expected_gradient(bandit_params):
    plain = bandit_gradient_batches(bandit_params, None)
    shifted = bandit_gradient_batches(bandit_params, np.array([-1.2]))
    se = np.sqrt(plain.var(axis=0, ddof=1) / len(plain) + shifted.var(axis=0, ddof=1) / len(shifted))
    assert np.all(np.abs(plain.mean(axis=0) - shifted.mean(axis=0)) < 3 * se)


# -- evaluation ----------------------------------------------------------------------


def test_perfect_taps_on_noiseless_replay_give_zero_rmse():
    taps = np.array([0.0, 0.5, 0.1, -0.02])
    env = ReplayEnv(partial(planted_build, taps=taps), "planted")
    curve = evaluate(zero_head(), env, taps, 40, seeds=range(8))
    np.testing.assert_allclose(curve, 0.0, atol=1e-12)


def test_evaluate_is_deterministic_and_sized():
    p = PolicyParameters.init(3, 5)
    taps = np.array([0.0, 0.4, 0.05, 0.0])
    a = evaluate(p, SyntheticEnv(), taps, 50, seeds=range(64))
    b = evaluate(p, SyntheticEnv(), taps, 50, seeds=range(64))
    assert a.shape == (50,)
    assert a.tobytes() == b.tobytes()
    assert evaluate(p, SyntheticEnv(), taps, 100, seeds=range(4)).shape == (100,)
    with pytest.raises(ValueError):
        evaluate(p, SyntheticEnv(), taps, 10, seeds=[])
