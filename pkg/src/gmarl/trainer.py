"""Rollouts, discounted returns and REINFORCE training of the tap-update policy."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .baselines import batch_fit
from .envs import Episode, episode_streams, generate_episode
from .policy import PolicyParameters, log_prob, sample_actions

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    horizon: int = 50
    gamma: float = 0.95
    learning_rate: float = 5e-4
    episodes_per_epoch: int = 16
    epochs: int = 500
    baseline_momentum: float = 0.9
    seed: int = 0
    order: int = 3
    grad_clip: float = 5.0
    eval_runs: int = 64
    # action samples per environment realization; >1 switches the baseline
    # from the moving average to the leave-one-out group mean
    group_size: int = 4
    init_spread: float = 0.01

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.horizon < 1 or self.episodes_per_epoch < 1:
            raise ValueError("horizon and episodes_per_epoch must be >= 1")
        if self.group_size < 1 or self.episodes_per_epoch % self.group_size:
            raise ValueError("group_size must divide episodes_per_epoch")


@dataclass
class EpisodeTrace:
    taps_init: np.ndarray
    taps_before: np.ndarray  # (T, K+1)
    taps_after: np.ndarray  # (T, K+1)
    actions: np.ndarray  # (T, K+1)
    log_probs: np.ndarray  # (T,), nan for deterministic actions
    context: np.ndarray  # (T, 2)
    predictions: np.ndarray
    truths: np.ndarray
    losses: np.ndarray
    episode: Episode | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.losses)


def discount_weights(horizon: int, gamma: float) -> np.ndarray:
    return gamma ** np.arange(horizon, dtype=float)


def discounted_return(trace, gamma: float) -> float:
    losses = np.asarray(getattr(trace, "losses", trace), dtype=float)
    return -float(discount_weights(losses.size, gamma) @ losses)


def rewards_to_go(losses, gamma: float) -> np.ndarray:
    """G_t = -sum_{s>=t} gamma^(s-t) loss_s along the last axis."""
    losses = np.asarray(losses, dtype=float)
    out = np.empty_like(losses)
    acc = np.zeros(losses.shape[:-1])
    for t in range(losses.shape[-1] - 1, -1, -1):
        acc = losses[..., t] + gamma * acc
        out[..., t] = acc
    return -out


def reward_to_go(trace, gamma: float, t: int) -> float:
    """Reward-to-go from step ``t`` (1-based, as the time index of the episode)."""
    losses = np.asarray(getattr(trace, "losses", trace), dtype=float)
    if not 1 <= t <= losses.size:
        raise IndexError(f"t={t} outside 1..{losses.size}")
    return float(rewards_to_go(losses, gamma)[t - 1])


def rollout_batch(params: PolicyParameters, episodes, taps_init, rngs=None, deterministic=False):
    """Run the policy over pre-materialized episodes in lockstep.

    Per step: sample action from (h_{t-1}, expanded graph context), update taps,
    predict the incoming value with the new taps, record the squared loss.
    """
    B = len(episodes)
    T = episodes[0].horizon
    if any(ep.horizon != T for ep in episodes):
        raise ValueError("episodes in a batch must share the horizon")
    K1 = params.order + 1
    taps = np.tile(np.asarray(taps_init, dtype=float), (B, 1))
    feats = np.stack([ep.features for ep in episodes])  # (B, T, K)
    ctx = np.stack([ep.context for ep in episodes])  # (B, T, 2)
    truths = np.stack([ep.truths for ep in episodes])
    before = np.empty((B, T, K1))
    actions = np.empty((B, T, K1))
    lps = np.empty((B, T))
    preds = np.empty((B, T))
    std = np.exp(params["log_std"])
    for t in range(T):
        before[:, t] = taps
        _, _, mu = sample_actions(params, taps, ctx[:, t], deterministic=True)
        if deterministic:
            c = mu
            lps[:, t] = np.nan
        else:
            noise = np.stack([r.standard_normal(K1) for r in rngs])
            c = mu + std * noise
            lps[:, t] = np.sum(-0.5 * noise**2 - params["log_std"] - 0.5 * np.log(2 * np.pi), axis=1)
        actions[:, t] = c
        taps = taps + c
        preds[:, t] = np.einsum("bk,bk->b", feats[:, t], taps[:, 1:])
    losses = (preds - truths) ** 2
    traces = []
    for b, ep in enumerate(episodes):
        traces.append(
            EpisodeTrace(
                np.asarray(taps_init, dtype=float).copy(),
                before[b],
                before[b] + actions[b],
                actions[b],
                lps[b],
                ctx[b],
                preds[b],
                truths[b],
                losses[b],
                ep,
            )
        )
    return traces


def rollout(env, params: PolicyParameters, taps_init, horizon: int, seed, deterministic=False) -> EpisodeTrace:
    episode = generate_episode(env, horizon, seed, params.order)
    _, pol_rng = episode_streams(seed)
    return rollout_batch(params, [episode], taps_init, [pol_rng], deterministic)[0]


def policy_gradient(params: PolicyParameters, traces, gamma: float, baseline=None):
    """REINFORCE gradient of the mean discounted return.

    Surrogate: mean over episodes of sum_t log pi(c_t | s_t) * (G_t - b_t).
    Returns (grads, returns_to_go) with grads keyed like ``params``.
    """
    G = np.stack([rewards_to_go(tr.losses, gamma) for tr in traces])  # (B, T)
    B, T = G.shape
    adv = G - (0.0 if baseline is None else baseline)
    taps = np.concatenate([tr.taps_before for tr in traces])
    ctx = np.concatenate([tr.context for tr in traces])
    acts = np.concatenate([tr.actions for tr in traces])
    P = params.leaves()
    lp = log_prob(P, taps, ctx, acts)
    surrogate = ad.scale(ad.sum(ad.mul(lp, adv.reshape(-1))), 1.0 / B)
    ad.backward(surrogate)
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in P.items()}
    return grads, G


def clip_global_norm(grads: dict, max_norm: float) -> float:
    norm = float(np.sqrt(sum(np.sum(g * g) for g in grads.values())))
    if max_norm and norm > max_norm:
        for k in grads:
            grads[k] = grads[k] * (max_norm / norm)
    return norm


class Adam:
    def __init__(self, params: PolicyParameters, lr: float, betas=(0.9, 0.999), eps=1e-8):
        self.lr, self.betas, self.eps = lr, betas, eps
        self.m = {k: np.zeros_like(v) for k, v in params.arrays.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.arrays.items()}
        self.t = 0

    def ascend(self, params: PolicyParameters, grads: dict) -> None:
        if self.lr == 0:
            return
        self.t += 1
        b1, b2 = self.betas
        for k, g in grads.items():
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            mhat = self.m[k] / (1 - b1**self.t)
            vhat = self.v[k] / (1 - b2**self.t)
            params.arrays[k] = params.arrays[k] + self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class TrainResult:
    params: PolicyParameters
    taps_init: np.ndarray
    curve: list  # dicts: epoch, mean_reward, eval_reward, mean_rmse


def initial_taps(env, config: TrainConfig) -> np.ndarray:
    """Batch least-squares taps on one training sequence."""
    return batch_fit(training_sequence(env, config).transitions, config.order)


def training_sequence(env, config: TrainConfig) -> Episode:
    return generate_episode(env, config.horizon, [config.seed, 1], config.order)


def scaled_log_std(features: np.ndarray, base: float) -> np.ndarray:
    """Per-agent log spread: base / (RMS of shift feature k relative to k=1).

    Equalizes the prediction noise each agent's exploration causes; agent 0
    has no feature and gets the base spread.
    """
    rms = np.sqrt(np.mean(np.asarray(features, dtype=float) ** 2, axis=0))
    rms = np.where(rms > 0, rms, 1.0)
    return np.log(base * np.concatenate([[1.0], rms[0] / rms]))


def train(config: TrainConfig, env, params: PolicyParameters | None = None, taps_init=None, progress=None) -> TrainResult:
    root = np.random.SeedSequence(config.seed)
    seq = training_sequence(env, config)
    if params is None:
        params = PolicyParameters.init(config.order, root.spawn(1)[0])
        params.arrays["log_std"] = scaled_log_std(seq.features, config.init_spread)
    else:
        params = params.copy()
    if taps_init is None:
        taps_init = batch_fit(seq.transitions, config.order)
    taps_init = np.asarray(taps_init, dtype=float)
    eval_eps = [generate_episode(env, config.horizon, [config.seed, 2, i], config.order) for i in range(config.eval_runs)]
    opt = Adam(params, config.learning_rate)
    baseline = None
    curve = []
    for epoch in range(1, config.epochs + 1):
        n_env = config.episodes_per_epoch // config.group_size
        envs = [generate_episode(env, config.horizon, [config.seed, 3, epoch, i], config.order) for i in range(n_env)]
        episodes = [ep for ep in envs for _ in range(config.group_size)]
        rngs = [np.random.default_rng([config.seed, 4, epoch, i]) for i in range(len(episodes))]
        traces = rollout_batch(params, episodes, taps_init, rngs)
        returns = np.array([discounted_return(tr, config.gamma) for tr in traces])
        G = np.stack([rewards_to_go(tr.losses, config.gamma) for tr in traces])
        G_mean = G.mean(axis=0)
        if config.group_size > 1:
            g = G.reshape(n_env, config.group_size, -1)
            loo = (g.sum(axis=1, keepdims=True) - g) / (config.group_size - 1)
            step_baseline = loo.reshape(G.shape)
        else:
            if baseline is None:
                baseline = G_mean
            step_baseline = baseline
        grads, _ = policy_gradient(params, traces, config.gamma, step_baseline)
        for k, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"epoch {epoch}: non-finite policy gradient for '{k}'")
        clip_global_norm(grads, config.grad_clip)
        ev = rollout_batch(params, eval_eps, taps_init, deterministic=True)
        ev_losses = np.stack([tr.losses for tr in ev])
        curve.append(
            {
                "epoch": epoch,
                "mean_reward": float(returns.mean()),
                "eval_reward": float(np.mean([discounted_return(tr, config.gamma) for tr in ev])),
                "mean_rmse": float(np.mean(np.sqrt(ev_losses.mean(axis=0)))),
            }
        )
        opt.ascend(params, grads)
        if baseline is not None:
            m = config.baseline_momentum
            baseline = m * baseline + (1 - m) * G_mean
        if progress is not None:
            progress(curve[-1])
        elif epoch % 50 == 0:
            log.info("epoch %d reward %.4f eval %.4f", epoch, curve[-1]["mean_reward"], curve[-1]["eval_reward"])
    return TrainResult(params, taps_init, curve)


def evaluate(params: PolicyParameters, env, taps_init, horizon: int, seeds) -> np.ndarray:
    """Per-step RMSE over runs with deterministic (mean) actions."""
    seeds = list(seeds)
    if not seeds:
        raise ValueError("evaluate needs at least one run")
    episodes = [generate_episode(env, horizon, s, params.order) for s in seeds]
    return rmse_curve(np.stack([tr.losses for tr in rollout_batch(params, episodes, taps_init, deterministic=True)]))


def rmse_curve(losses) -> np.ndarray:
    """RMSE_t = sqrt(mean over runs of squared error at step t); losses is (runs, T)."""
    return np.sqrt(np.mean(np.atleast_2d(losses), axis=0))
