"""Polynomial graph filter on zero-padded signals and the incoming-node prediction."""
from __future__ import annotations

import numpy as np


def check_taps(taps) -> np.ndarray:
    taps = np.asarray(taps, dtype=float)
    if taps.ndim != 1 or taps.size < 2:
        raise ValueError(f"taps must be a vector of length K+1 >= 2, got shape {taps.shape}")
    return taps


def pad_signal(x) -> np.ndarray:
    return np.append(np.asarray(x, dtype=float), 0.0)


def apply_filter(adj, x, taps, shift=None) -> np.ndarray:
    """sum_k taps[k] * adj^k @ x via K iterated shifts.

    ``shift`` overrides the one-hop operator ``v -> adj @ v`` (used to count
    shift applications in tests).
    """
    adj = np.asarray(adj, dtype=float)
    x = np.asarray(x, dtype=float)
    taps = check_taps(taps)
    if adj.shape != (x.size, x.size):
        raise ValueError(f"signal of length {x.size} does not fit a {adj.shape} adjacency")
    if shift is None:
        shift = adj.__matmul__
    out = taps[0] * x
    z = x
    for h in taps[1:]:
        z = shift(z)
        out = out + h * z
    return out


def shift_features(adj_prev, a, x_prev, order: int) -> np.ndarray:
    """m_k = [A_t^k x~_t]_{N_t} for k = 1..K, so the prediction is m @ taps[1:].

    Iterates the expanded shift in block form, ``[u; v] -> [A u + a v; a^T u]``,
    without building A_t. For k <= 2 this equals a^T A^(k-1) x; from k = 3 on,
    walks that pass back through the incoming node add terms such as
    (a^T a)(a^T x), which the shorthand a^T A^(k-1) x omits.
    """
    adj_prev = np.asarray(adj_prev, dtype=float)
    a = np.asarray(a, dtype=float)
    u = np.asarray(x_prev, dtype=float)
    n = u.size
    if adj_prev.shape != (n, n) or a.shape != (n,):
        raise ValueError(f"inconsistent shapes: adj {adj_prev.shape}, a {a.shape}, x {u.shape}")
    m = np.empty(order)
    v = 0.0
    for k in range(order):
        u, v = adj_prev @ u + a * v, float(a @ u)
        m[k] = v
    return m


def predict_incoming(adj_prev, a, x_prev, taps) -> float:
    taps = check_taps(taps)
    return float(shift_features(adj_prev, a, x_prev, taps.size - 1) @ taps[1:])


def prediction_loss(pred: float, truth: float) -> float:
    # numpy scalars overflow to inf instead of raising
    return float(np.square(np.float64(pred) - truth))
