"""Comparison methods: batch least-squares filter, online filter, online GNN."""
from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .filters import check_taps, prediction_loss, shift_features
from .graph_env import as_rng
from .policy import CONTEXT_DIM

DEFAULT_RIDGE = 1e-6
FILTER_STEP = 3e-5
GNN_STEP = 3e-2


class SingularDesignError(np.linalg.LinAlgError):
    """Normal matrix is singular; retry with ``ridge > 0``."""


def design_matrix(transitions, order: int):
    """Rows m_t with m_t[k-1] = a^T A^(k-1) x (k = 1..K) and the target vector."""
    M = np.array([shift_features(tr.adj_prev, tr.attachment, tr.signal_prev, order) for tr in transitions])
    y = np.array([tr.truth for tr in transitions], dtype=float)
    return M.reshape(len(transitions), order), y


def solve_ridge(M, y, ridge: float = DEFAULT_RIDGE) -> np.ndarray:
    """argmin ||M h - y||^2 + ridge ||h||^2 through the normal equations.

    Columns are rescaled to unit norm before solving; the ridge term is applied
    in the original coordinates so the minimizer is unchanged.
    """
    M = np.asarray(M, dtype=float)
    y = np.asarray(y, dtype=float)
    norms = np.linalg.norm(M, axis=0)
    norms[norms == 0] = 1.0
    Ms = M / norms
    G = Ms.T @ Ms + ridge * np.diag(1.0 / norms**2)
    rhs = Ms.T @ y
    if ridge == 0 and np.linalg.matrix_rank(G) < G.shape[0]:
        raise SingularDesignError("normal matrix is singular; use ridge > 0")
    try:
        g = np.linalg.solve(G, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularDesignError(str(exc)) from exc
    return g / norms


def batch_fit(transitions, order: int, ridge: float = DEFAULT_RIDGE) -> np.ndarray:
    if len(transitions) < order:
        raise ValueError(f"need at least {order} transitions, got {len(transitions)}")
    M, y = design_matrix(transitions, order)
    return np.concatenate([[0.0], solve_ridge(M, y, ridge)])


def filter_gradient(taps, tr) -> np.ndarray:
    taps = check_taps(taps)
    m = shift_features(tr.adj_prev, tr.attachment, tr.signal_prev, taps.size - 1)
    err = m @ taps[1:] - tr.truth
    return np.concatenate([[0.0], 2.0 * err * m])


def online_filter_step(taps, tr, step_size: float = FILTER_STEP) -> np.ndarray:
    return check_taps(taps) - step_size * filter_gradient(taps, tr)


def run_fixed_filter(taps, transitions) -> tuple[np.ndarray, np.ndarray]:
    """Predictions and squared losses with taps held fixed."""
    taps = check_taps(taps)
    M, y = design_matrix(transitions, taps.size - 1)
    preds = M @ taps[1:]
    return preds, (preds - y) ** 2


def run_online_filter(taps, transitions, step_size: float = FILTER_STEP):
    """Predict then update, one transition at a time."""
    taps = check_taps(taps).copy()
    order = taps.size - 1
    preds, losses = [], []
    for tr in transitions:
        m = shift_features(tr.adj_prev, tr.attachment, tr.signal_prev, order)
        pred = float(m @ taps[1:])
        preds.append(pred)
        losses.append(prediction_loss(pred, tr.truth))
        taps[1:] -= step_size * 2.0 * (pred - tr.truth) * m
    return np.array(preds), np.array(losses)


# -- online GNN ----------------------------------------------------------------
# pred = ReLU(x~_N W0 + (S_hat x~)_N W1) @ w_emb + (a^T x) * w_nbr


def init_gnn(seed=0) -> dict:
    rng = as_rng(seed)
    return {
        "ctx_w0": rng.uniform(-1, 1, (1, CONTEXT_DIM)),
        "ctx_w1": rng.uniform(-1, 1, (1, CONTEXT_DIM)),
        "w_emb": rng.uniform(-1, 1, (CONTEXT_DIM, 1)) / math.sqrt(CONTEXT_DIM),
        "w_nbr": rng.uniform(-1, 1, (1, 1)),
    }


def gnn_inputs(tr) -> np.ndarray:
    """[x~_N, (S_hat x~)_N, a^T x] for one transition."""
    return np.array([0.0, tr.context_shift, float(tr.attachment @ tr.signal_prev)])


def gnn_predict_tensor(P: dict, inputs) -> ad.Tensor:
    inputs = ad.as_tensor(np.asarray(inputs, dtype=float).reshape(-1, 3))
    x = inputs.data
    feats = ad.Tensor(x[:, :2])
    w = ad.concat([P["ctx_w0"], P["ctx_w1"]], axis=0)
    emb = ad.relu(ad.matmul(feats, w))
    out = ad.add(ad.matmul(emb, P["w_emb"]), ad.matmul(ad.Tensor(x[:, 2:3]), P["w_nbr"]))
    return ad.reshape(out, (x.shape[0],))


def gnn_predict(params: dict, tr) -> float:
    P = {k: ad.Tensor(v) for k, v in params.items()}
    return float(gnn_predict_tensor(P, gnn_inputs(tr)).data[0])


def gnn_loss_and_grad(params: dict, tr):
    P = {k: ad.Tensor(v, requires_grad=True) for k, v in params.items()}
    pred = gnn_predict_tensor(P, gnn_inputs(tr))
    err = ad.sub(pred, np.array([tr.truth]))
    loss = ad.sum(ad.mul(err, err))
    ad.backward(loss)
    return float(loss.data), {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in P.items()}


def online_gnn_step(params: dict, tr, step_size: float = GNN_STEP) -> dict:
    _, grads = gnn_loss_and_grad(params, tr)
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for online GNN parameter {k}")
    return {k: v - step_size * grads[k] for k, v in params.items()}


def run_online_gnn(params: dict, transitions, step_size: float = GNN_STEP):
    params = {k: v.copy() for k, v in params.items()}
    preds, losses = [], []
    for tr in transitions:
        pred = gnn_predict(params, tr)
        preds.append(pred)
        losses.append(prediction_loss(pred, tr.truth))
        params = online_gnn_step(params, tr, step_size)
    return np.array(preds), np.array(losses)
