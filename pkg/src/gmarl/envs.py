"""Episode generators shared by the trainer, the baselines and the experiments.

An env config only has to provide ``reset(rng) -> (state, attachment_spec,
dynamics)``. Graph expansion never depends on the filter taps, so an episode
can be materialized up front and replayed identically to every method.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .filters import shift_features
from .graph_env import (
    AttachmentKind,
    AttachmentSpec,
    ExpandingGraphState,
    ReplaySignal,
    ShiftNormalization,
    SignalDynamics,
    as_rng,
    random_initial_graph,
    roll_transitions,
)


@dataclass(frozen=True)
class SyntheticEnv:
    n_init: int = 5
    init_edge_prob: float = 0.5
    attachment: AttachmentKind = AttachmentKind.UNIFORM
    edges_per_node: int = 2
    noise_variance: float = 0.25
    shift_normalization: ShiftNormalization = ShiftNormalization.SPECTRAL_RADIUS

    def reset(self, rng):
        rng = as_rng(rng)
        adj = random_initial_graph(self.n_init, self.init_edge_prob, rng)
        signal = rng.standard_normal(self.n_init)
        spec = AttachmentSpec(AttachmentKind(self.attachment), self.edges_per_node)
        return ExpandingGraphState(adj, signal), spec, SignalDynamics(self.noise_variance, self.shift_normalization)


@dataclass(frozen=True)
class ReplayEnv:
    """Real-data env: ``build(seed)`` returns ``(state, replay_spec, truths)``."""

    build: Callable
    name: str = "replay"

    def reset(self, rng):
        seed = int(as_rng(rng).integers(2**31))
        state, spec, truths = self.build(seed)
        return state, spec, ReplaySignal(tuple(truths))


@dataclass
class Episode:
    """Materialized episode: per-step filter features, policy context and truths."""

    state0: ExpandingGraphState
    transitions: list
    features: np.ndarray  # (T, K): a^T A^(k-1) x
    context: np.ndarray  # (T, 2): [x~_N, (S_hat x~)_N]
    truths: np.ndarray  # (T,)

    @property
    def horizon(self) -> int:
        return len(self.transitions)


def episode_streams(seed):
    """Independent (environment, policy) generators derived from one seed."""
    env_ss, pol_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(env_ss), np.random.default_rng(pol_ss)


def generate_episode(env, horizon: int, seed, order: int = 3) -> Episode:
    env_rng, _ = episode_streams(seed)
    state0, spec, dyn = env.reset(env_rng)
    transitions, _ = roll_transitions(state0, spec, dyn, horizon, env_rng)
    return episode_from_transitions(state0, transitions, order)


def episode_from_transitions(state0, transitions, order: int = 3) -> Episode:
    T = len(transitions)
    features = np.array([shift_features(tr.adj_prev, tr.attachment, tr.signal_prev, order) for tr in transitions])
    context = np.array([[0.0, tr.context_shift] for tr in transitions])
    truths = np.array([tr.truth for tr in transitions])
    return Episode(state0, list(transitions), features.reshape(T, order), context.reshape(T, 2), truths)
