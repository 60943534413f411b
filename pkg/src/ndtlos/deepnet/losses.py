"""Classification and joint reconstruction losses with their gradients."""
from __future__ import annotations

import numpy as np

EPS = 1e-7


def loss_bce(probabilities, labels, weights=None):
    """Mean binary cross-entropy on clamped probabilities.

    Returns (loss, d loss / d probabilities).  ``weights`` optionally rescales
    each sample (class-balanced training); the mean is over the batch size.
    """
    p = np.asarray(probabilities, dtype=float).reshape(-1)
    y = np.asarray(labels, dtype=float).reshape(-1)
    K = p.size
    w = np.ones(K) if weights is None else np.asarray(weights, dtype=float).reshape(-1)
    pc = np.clip(p, EPS, 1.0 - EPS)
    per = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
    loss = float(np.sum(w * per) / K)
    inside = (p > EPS) & (p < 1.0 - EPS)
    grad = w * (-y / pc + (1.0 - y) / (1.0 - pc)) / K * inside
    return loss, grad


def loss_joint(probabilities, reconstruction, inputs, labels, w_rec: float, weights=None):
    """(w_rec / K) sum_k ||X_k - Xhat_k||_F^2 + mean BCE.

    Returns (loss, d/d probabilities, d/d reconstruction).
    """
    X = np.asarray(inputs, dtype=float)
    R = np.asarray(reconstruction, dtype=float).reshape(X.shape)
    K = X.shape[0]
    bce, dp = loss_bce(probabilities, labels, weights)
    diff = R - X
    rec = float(w_rec / K * np.sum(diff * diff))
    drec = 2.0 * w_rec / K * diff
    return rec + bce, dp, drec
