"""Context-aware GNN policy that proposes additive tap changes.

Pipeline for one decision (batched over the leading axis):

1. a bias-free graph convolution ``ReLU(x W0 + S_hat x W1)`` on the expanded
   graph gives the incoming node a 32-d context row;
2. every agent k (one per filter tap) forms ``z_k = [h_k, context]``;
3. one message-passing round on the complete agent graph: messages are
   ``agg_mlp(z_j)``, averaged over the other agents, then
   ``update_mlp([z_k, mean_msg])``;
4. a shared linear head gives the Gaussian mean of each agent's action.

Only the incoming node's row of the context layer is needed, and that row
depends on the graph only through ``[x~_N, (S_hat x~)_N]``. The batched
functions take those two numbers per decision (``ctx_in``); ``context_features``
evaluates the full layer and is the reference for them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .graph_env import as_rng, normalized_shift

CONTEXT_DIM = 32
MLP_UNITS = (32, 64, 32)
INIT_LOG_STD = math.log(0.05)
ACTION_SCALE = 0.01
CHECKPOINT_MAGIC = "gmarl-policy"
CHECKPOINT_VERSION = 1


@dataclass
class ActionSample:
    action: np.ndarray
    log_prob: float  # nan for deterministic (mean) actions
    mean: np.ndarray


class PolicyParameters:
    """Named float64 arrays. The count does not depend on the graph size."""

    def __init__(self, arrays: dict, order: int):
        self.arrays = dict(arrays)
        self.order = order

    @classmethod
    def init(cls, order: int = 3, seed=0) -> "PolicyParameters":
        rng = as_rng(seed)
        arrays = {
            "ctx_w0": rng.uniform(-1, 1, (1, CONTEXT_DIM)),
            "ctx_w1": rng.uniform(-1, 1, (1, CONTEXT_DIM)),
        }
        for prefix, fan in (("agg", 1 + CONTEXT_DIM), ("upd", 1 + CONTEXT_DIM + MLP_UNITS[-1])):
            for i, units in enumerate(MLP_UNITS):
                bound = 1 / math.sqrt(fan)
                arrays[f"{prefix}_w{i}"] = rng.uniform(-bound, bound, (fan, units))
                arrays[f"{prefix}_b{i}"] = np.zeros(units)
                fan = units
        bound = 1 / math.sqrt(MLP_UNITS[-1])
        arrays["head_w"] = rng.uniform(-bound, bound, (MLP_UNITS[-1], 1))
        arrays["head_b"] = np.zeros(1)
        arrays["log_std"] = np.full(order + 1, INIT_LOG_STD)
        return cls(arrays, order)

    def __getitem__(self, name):
        return self.arrays[name]

    def names(self):
        return list(self.arrays)

    def n_parameters(self) -> int:
        return sum(a.size for a in self.arrays.values())

    def copy(self) -> "PolicyParameters":
        return PolicyParameters({k: v.copy() for k, v in self.arrays.items()}, self.order)

    def leaves(self) -> dict:
        """Fresh gradient-tracking tensors for one forward/backward pass."""
        return {k: ad.Tensor(v, requires_grad=True) for k, v in self.arrays.items()}

    def constants(self) -> dict:
        return {k: ad.Tensor(v) for k, v in self.arrays.items()}


# -- forward -------------------------------------------------------------------


def _context_rows(P: dict, feats) -> ad.Tensor:
    """ReLU(feats @ [W0; W1]); feats[..., 0] is x~, feats[..., 1] is S_hat x~."""
    w = ad.concat([P["ctx_w0"], P["ctx_w1"]], axis=0)
    return ad.relu(ad.matmul(feats, w))


def _mlp(P: dict, prefix: str, x: ad.Tensor) -> ad.Tensor:
    for i in range(len(MLP_UNITS)):
        x = ad.relu(ad.add(ad.matmul(x, P[f"{prefix}_w{i}"]), P[f"{prefix}_b{i}"]))
    return x


def _mixing_matrix(n_agents: int) -> np.ndarray:
    # mean over the other agents on the complete agent graph
    return (np.ones((n_agents, n_agents)) - np.eye(n_agents)) / (n_agents - 1)


def action_mean(P: dict, taps, ctx_in) -> ad.Tensor:
    """Gaussian action means, shape (B, K+1), for taps (B, K+1) and ctx_in (B, 2)."""
    taps = ad.as_tensor(taps)
    ctx_in = ad.as_tensor(ctx_in)
    batch, n_agents = taps.shape
    ctx = _context_rows(P, ctx_in)  # (B, 32)
    ctx = ad.broadcast_to(ad.reshape(ctx, (batch, 1, CONTEXT_DIM)), (batch, n_agents, CONTEXT_DIM))
    z = ad.concat([ad.reshape(taps, (batch, n_agents, 1)), ctx], axis=-1)
    msgs = _mlp(P, "agg", z)
    pooled = ad.matmul(_mixing_matrix(n_agents), msgs)
    emb = _mlp(P, "upd", ad.concat([z, pooled], axis=-1))
    mu = ad.scale(ad.add(ad.matmul(emb, P["head_w"]), P["head_b"]), ACTION_SCALE)
    return ad.reshape(mu, (batch, n_agents))


def log_prob(P: dict, taps, ctx_in, actions) -> ad.Tensor:
    """Joint log-density per decision, shape (B,)."""
    mu = action_mean(P, taps, ctx_in)
    return ad.sum(ad.gaussian_log_prob(actions, mu, P["log_std"]), axis=1)


def context_input(adj, padded) -> np.ndarray:
    """[x~_N, (S_hat x~)_N] for the incoming (last) node."""
    adj = np.asarray(adj, dtype=float)
    padded = np.asarray(padded, dtype=float)
    if adj.shape != (padded.size, padded.size):
        raise ValueError(f"signal of length {padded.size} does not fit a {adj.shape} adjacency")
    s_hat = normalized_shift(adj)
    return np.array([padded[-1], s_hat[-1] @ padded])


def context_features(adj, padded, params: PolicyParameters) -> np.ndarray:
    """Incoming node's row of the context graph-convolution layer."""
    adj = np.asarray(adj, dtype=float)
    padded = np.asarray(padded, dtype=float)
    if adj.shape != (padded.size, padded.size):
        raise ValueError(f"signal of length {padded.size} does not fit a {adj.shape} adjacency")
    feats = np.stack([padded, normalized_shift(adj) @ padded], axis=1)
    rows = _context_rows(params.constants(), feats)
    return rows.data[-1]


def sample_actions(params: PolicyParameters, taps, ctx_in, rng=None, deterministic=False):
    """Batched sampling: returns (actions, log_probs, means) as arrays."""
    taps = np.atleast_2d(np.asarray(taps, dtype=float))
    ctx_in = np.atleast_2d(np.asarray(ctx_in, dtype=float))
    mu = action_mean(params.constants(), taps, ctx_in).data
    if deterministic:
        return mu.copy(), np.full(mu.shape[0], np.nan), mu
    std = np.exp(params["log_std"])
    actions = mu + std * as_rng(rng).standard_normal(mu.shape)
    lp = ad.sum(ad.gaussian_log_prob(actions, mu, params["log_std"]), axis=1).data
    return actions, lp, mu


def policy_forward(taps, adj, padded, params: PolicyParameters, rng=None, deterministic=False) -> ActionSample:
    taps = np.asarray(taps, dtype=float)
    if taps.size != params.order + 1:
        raise ValueError(f"policy expects {params.order + 1} taps, got {taps.size}")
    actions, lp, mu = sample_actions(params, taps, context_input(adj, padded), rng, deterministic)
    return ActionSample(actions[0], float(lp[0]), mu[0])


def apply_action(taps, action) -> np.ndarray:
    taps = np.asarray(taps, dtype=float)
    action = np.asarray(action, dtype=float)
    if taps.shape != action.shape:
        raise ValueError(f"action shape {action.shape} does not match taps {taps.shape}")
    return taps + action


# -- checkpoints -----------------------------------------------------------------


def save_checkpoint(params: PolicyParameters, path) -> None:
    lines = [f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}", f"order {params.order}"]
    for name in params.names():
        arr = params[name]
        lines.append(f"{name} {' '.join(str(d) for d in arr.shape)}")
        lines.append(" ".join(repr(float(v)) for v in arr.ravel()))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> PolicyParameters:
    with open(path) as fh:
        lines = fh.read().splitlines()
    magic, version = lines[0].split()
    if magic != CHECKPOINT_MAGIC or int(version) != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a version-{CHECKPOINT_VERSION} policy checkpoint")
    order = int(lines[1].split()[1])
    arrays = {}
    for header, body in zip(lines[2::2], lines[3::2]):
        name, *dims = header.split()
        shape = tuple(int(d) for d in dims)
        arrays[name] = np.array([float(v) for v in body.split()], dtype=float).reshape(shape)
    return PolicyParameters(arrays, order)
