"""Expanding graph environment: attachment sampling and the transition kernel.

Adjacency matrices are plain dense ``np.ndarray`` objects; ``check_adjacency``
enforces symmetry, zero diagonal and nonnegativity where it matters.
"""
from __future__ import annotations

import enum
import io
from dataclasses import dataclass, field

import numpy as np

DEGREE_FLOOR = 1e-6


class AttachmentKind(str, enum.Enum):
    UNIFORM = "uniform"
    PREFERENTIAL = "preferential"
    REPLAY = "replay"


class ShiftNormalization(str, enum.Enum):
    SPECTRAL_RADIUS = "spectral_radius"
    MAX_DEGREE = "max_degree"


@dataclass(frozen=True)
class AttachmentSpec:
    kind: AttachmentKind = AttachmentKind.UNIFORM
    edges_per_node: int = 2
    replay_vectors: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", AttachmentKind(self.kind))
        if self.kind is not AttachmentKind.REPLAY and self.edges_per_node < 1:
            raise ValueError("edges_per_node must be >= 1")


@dataclass(frozen=True)
class SignalDynamics:
    """New signal = normalized shift of the padded old signal + Gaussian noise."""

    noise_variance: float = 0.25
    shift_normalization: ShiftNormalization = ShiftNormalization.SPECTRAL_RADIUS

    def __post_init__(self):
        object.__setattr__(self, "shift_normalization", ShiftNormalization(self.shift_normalization))
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be nonnegative")


@dataclass(frozen=True)
class ReplaySignal:
    """Observed values of the arriving nodes, in arrival order (real-data runs)."""

    truths: tuple = ()


@dataclass
class ExpandingGraphState:
    adj: np.ndarray
    signal: np.ndarray
    step: int = 0

    def __post_init__(self):
        self.adj = np.asarray(self.adj, dtype=float)
        self.signal = np.asarray(self.signal, dtype=float)
        if self.adj.ndim != 2 or self.adj.shape[0] != self.adj.shape[1]:
            raise ValueError(f"adjacency must be square, got {self.adj.shape}")
        if self.signal.shape != (self.adj.shape[0],):
            raise ValueError(f"signal length {self.signal.shape} does not match {self.adj.shape[0]} nodes")

    @property
    def n(self) -> int:
        return self.adj.shape[0]


@dataclass
class Transition:
    """One expansion step seen from the predictor: (A_{t-1}, a_{t-1}, x_{t-1}) and x_{N_t}."""

    adj_prev: np.ndarray
    attachment: np.ndarray
    signal_prev: np.ndarray
    truth: float
    # normalized incoming-node shift value (S_t x~_t)_{N_t}, cached for the policy
    context_shift: float = 0.0
    signal_next: np.ndarray | None = field(default=None, repr=False)


def as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def check_adjacency(adj: np.ndarray, atol: float = 0.0) -> None:
    adj = np.asarray(adj)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ValueError(f"adjacency must be square, got shape {adj.shape}")
    if not np.allclose(adj, adj.T, atol=atol, rtol=0):
        raise ValueError("adjacency is not symmetric")
    if np.any(np.diag(adj) != 0):
        raise ValueError("adjacency has a nonzero diagonal")
    if np.any(adj < 0):
        raise ValueError("adjacency has negative entries")


def degree_vector(adj: np.ndarray) -> np.ndarray:
    return np.asarray(adj, dtype=float).sum(axis=1)


def spectral_radius(adj: np.ndarray) -> float:
    """Largest eigenvalue magnitude of a symmetric matrix."""
    adj = np.asarray(adj, dtype=float)
    if adj.size == 0:
        return 0.0
    ev = np.linalg.eigvalsh(adj)
    return float(max(abs(ev[0]), abs(ev[-1])))


def normalized_shift(adj: np.ndarray, how=ShiftNormalization.SPECTRAL_RADIUS) -> np.ndarray:
    how = ShiftNormalization(how)
    if how is ShiftNormalization.SPECTRAL_RADIUS:
        scale = spectral_radius(adj)
    else:
        scale = float(degree_vector(adj).max(initial=0.0))
    if scale <= 0:
        return np.zeros_like(adj, dtype=float)
    return adj / scale


def expand_adjacency(adj: np.ndarray, a: np.ndarray) -> np.ndarray:
    adj = np.asarray(adj, dtype=float)
    a = np.asarray(a, dtype=float)
    n = adj.shape[0]
    if adj.shape != (n, n) or a.shape != (n,):
        raise ValueError(f"attachment of shape {a.shape} does not fit a {adj.shape} adjacency")
    out = np.zeros((n + 1, n + 1))
    out[:n, :n] = adj
    out[:n, n] = a
    out[n, :n] = a
    return out


def sample_attachment(state: ExpandingGraphState, spec: AttachmentSpec, rng) -> np.ndarray:
    n = state.n
    if spec.kind is AttachmentKind.REPLAY:
        if state.step >= len(spec.replay_vectors):
            raise IndexError(f"replay exhausted at step {state.step} ({len(spec.replay_vectors)} vectors)")
        a = np.asarray(spec.replay_vectors[state.step], dtype=float)
        if a.shape != (n,):
            raise ValueError(f"replay vector {state.step} has length {a.size}, graph has {n} nodes")
        return a.copy()
    m = spec.edges_per_node
    if m > n:
        raise ValueError(f"cannot attach {m} edges to a graph with {n} nodes")
    rng = as_rng(rng)
    if spec.kind is AttachmentKind.UNIFORM:
        targets = rng.choice(n, size=m, replace=False)
    else:
        w = degree_vector(state.adj) + DEGREE_FLOOR
        targets = rng.choice(n, size=m, replace=False, p=w / w.sum())
    a = np.zeros(n)
    a[targets] = 1.0
    return a


def env_step(state: ExpandingGraphState, spec: AttachmentSpec, dyn, rng):
    """Advance the graph by one incoming node.

    ``dyn`` is either :class:`SignalDynamics` (synthetic shift + noise) or
    :class:`ReplaySignal` (the arriving node's recorded value is appended and
    the existing signal is kept as is).

    Returns ``(new_state, attachment, ground_truth)``.
    """
    new_state, a, truth, _ = _advance(state, spec, dyn, as_rng(rng))
    return new_state, a, truth


def _advance(state, spec, dyn, rng):
    a = sample_attachment(state, spec, rng)
    adj = expand_adjacency(state.adj, a)
    rho = spectral_radius(adj)
    if isinstance(dyn, ReplaySignal):
        if state.step >= len(dyn.truths):
            raise IndexError(f"replayed signal exhausted at step {state.step}")
        truth = float(dyn.truths[state.step])
        signal = np.append(state.signal, truth)
    else:
        padded = np.append(state.signal, 0.0)
        if dyn.shift_normalization is ShiftNormalization.SPECTRAL_RADIUS:
            signal = (adj @ padded) / rho if rho > 0 else np.zeros_like(padded)
        else:
            signal = normalized_shift(adj, dyn.shift_normalization) @ padded
        if dyn.noise_variance > 0:
            signal = signal + rng.normal(0.0, np.sqrt(dyn.noise_variance), size=signal.shape)
        truth = float(signal[-1])
    return ExpandingGraphState(adj, signal, state.step + 1), a, truth, rho


def random_initial_graph(n: int, p: float, rng, max_tries: int = 1000) -> np.ndarray:
    """Binary G(n, p) graph, resampled until connected."""
    rng = as_rng(rng)
    for _ in range(max_tries):
        upper = np.triu(rng.random((n, n)) < p, k=1).astype(float)
        adj = upper + upper.T
        if n <= 1 or _connected(adj):
            return adj
    raise RuntimeError(f"no connected G({n}, {p}) sample after {max_tries} tries")


def _connected(adj: np.ndarray) -> bool:
    n = adj.shape[0]
    seen = {0}
    frontier = [0]
    while frontier:
        i = frontier.pop()
        for j in np.flatnonzero(adj[i]):
            if j not in seen:
                seen.add(int(j))
                frontier.append(int(j))
    return len(seen) == n


def roll_transitions(state: ExpandingGraphState, spec: AttachmentSpec, dyn, horizon: int, rng):
    """Run ``horizon`` env steps and return the predictor's view of each one."""
    rng = as_rng(rng)
    out = []
    for _ in range(horizon):
        new_state, a, truth, rho = _advance(state, spec, dyn, rng)
        ctx = float(a @ state.signal) / rho if rho > 0 else 0.0
        out.append(Transition(state.adj, a, state.signal, truth, ctx, new_state.signal))
        state = new_state
    return out, state


# -- trajectory dump ---------------------------------------------------------
# one line per step:  step<TAB>idx:w;idx:w<TAB>truth<TAB>x0,x1,...


def dump_trajectory(transitions, fh=None) -> str:
    buf = io.StringIO() if fh is None else fh
    for t, tr in enumerate(transitions, start=1):
        nz = np.flatnonzero(tr.attachment)
        att = ";".join(f"{i}:{float(tr.attachment[i])!r}" for i in nz)
        full = tr.signal_next if tr.signal_next is not None else np.append(tr.signal_prev, tr.truth)
        sig = ",".join(repr(float(v)) for v in full)
        buf.write(f"{t}\t{att}\t{float(tr.truth)!r}\t{sig}\n")
    return buf.getvalue() if fh is None else ""


def load_trajectory(text: str):
    """Parse a dump into ``(attachment_vectors, truths, final_signals)``."""
    vectors, truths, signals = [], [], []
    for line in text.splitlines():
        if not line.strip():
            continue
        step, att, truth, sig = line.split("\t")
        signal = np.array([float(v) for v in sig.split(",")])
        a = np.zeros(signal.size - 1)
        for item in filter(None, att.split(";")):
            i, w = item.split(":")
            a[int(i)] = float(w)
        vectors.append(a)
        truths.append(float(truth))
        signals.append(signal)
    return vectors, truths, signals


def replay_spec_from_dump(text: str) -> tuple[AttachmentSpec, ReplaySignal]:
    vectors, truths, _ = load_trajectory(text)
    return AttachmentSpec(AttachmentKind.REPLAY, replay_vectors=tuple(vectors)), ReplaySignal(tuple(truths))
