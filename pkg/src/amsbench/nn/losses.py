"""Masked losses and their analytic gradients."""

from __future__ import annotations

import warnings

import numpy as np

from .layers import sigmoid, softplus


def bce_with_logits(logits, labels, mask=None, pos_weight: float = 1.0):
    """Masked mean of pos_weight*y*softplus(-z) + (1-y)*softplus(z).

    Returns (loss, dloss/dlogits). An all-zero mask yields loss 0 with a warning.
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if z.shape != y.shape:
        raise ValueError(f"logits shape {z.shape} does not match labels shape {y.shape}")
    m = np.ones_like(z) if mask is None else np.asarray(mask, dtype=np.float64)
    if m.shape != z.shape:
        raise ValueError(f"mask shape {m.shape} does not match logits shape {z.shape}")
    count = m.sum()
    if count == 0:
        warnings.warn("bce_with_logits: mask has no valid steps; loss defined as 0", RuntimeWarning,
                      stacklevel=2)
        return 0.0, np.zeros_like(z)
    per = pos_weight * y * softplus(-z) + (1.0 - y) * softplus(z)
    loss = float((per * m).sum() / count)
    s = sigmoid(z)
    grad = (pos_weight * y * (s - 1.0) + (1.0 - y) * s) * m / count
    return loss, grad


def hard_sum(losses):
    """Unweighted sum of task losses; gradient 1 per task."""
    losses = np.asarray(losses, dtype=np.float64)
    return float(losses.sum()), np.ones_like(losses)


def uncertainty_loss(losses, s):
    """sum_t exp(-s_t) L_t + s_t.

    Returns (total, d/dL, d/ds).
    """
    L = np.asarray(losses, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    w = np.exp(-s)
    return float((w * L + s).sum()), w, 1.0 - w * L


def pos_weight_for(labels, mask=None, cap: float = 100.0) -> float:
    """Negative-to-positive ratio on valid steps, capped."""
    y = np.asarray(labels, dtype=np.float64)
    m = np.ones_like(y) if mask is None else np.asarray(mask, dtype=np.float64)
    pos = float((y * m).sum())
    neg = float(((1.0 - y) * m).sum())
    return float(min(neg / max(pos, 1.0), cap))
