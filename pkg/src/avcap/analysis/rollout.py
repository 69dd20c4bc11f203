"""Attention rollout over a stack of row-stochastic attention maps."""
from __future__ import annotations

import numpy as np


def _check_stochastic(a, index, atol=1e-6):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"layer {index}: attention must be square, got shape {a.shape}")
    if (a < -atol).any() or not np.allclose(a.sum(axis=1), 1.0, rtol=0.0, atol=atol):
        raise ValueError(f"layer {index}: attention rows must be non-negative and sum to 1")
    return a


def residual_adjust(a):
    """``0.5 * A + 0.5 * I`` with rows renormalized."""
    adj = 0.5 * a + 0.5 * np.eye(a.shape[0])
    return adj / adj.sum(axis=1, keepdims=True)


def attention_rollout(layers, return_layers=False):
    """Cumulative rollout ``R_l = adj(A_l) @ R_{l-1}``, first layer to last.

    With ``return_layers`` also returns the list of cumulative matrices after
    each layer.
    """
    if len(layers) == 0:
        raise ValueError("need at least one attention layer")
    mats = [_check_stochastic(a, i) for i, a in enumerate(layers)]
    n = mats[0].shape[0]
    if any(m.shape != (n, n) for m in mats):
        raise ValueError("all layers must share one size")
    r = np.eye(n)
    history = []
    for m in mats:
        r = residual_adjust(m) @ r
        history.append(r)
    return (r, history) if return_layers else r


def saliency(rollout, rows, columns):
    """Per-row sum of rollout weight over ``columns``, for each of ``rows``."""
    rollout = np.asarray(rollout)
    return rollout[np.ix_(list(rows), list(columns))].sum(axis=1)
