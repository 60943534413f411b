"""Soft-margin kernel SVM trained by sequential minimal optimization.

The working pair is chosen with the second-order rule of Fan, Chen & Lin
(2005): the maximal-violating index ``i`` in the "up" set and the partner
``j`` in the "low" set that maximizes the guaranteed objective decrease.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numba
import numpy as np

from ..errors import InvalidInputError

log = logging.getLogger(__name__)

_TAU = 1e-12


@dataclass
class SvmModel:
    kernel: str
    gamma: float
    C: float
    support_vectors: np.ndarray
    dual_coef: np.ndarray  # alpha_s * y_s for each support vector
    bias: float
    alphas: np.ndarray  # full dual vector over the training set
    labels: np.ndarray  # training labels in {-1, +1}
    n_iter: int = 0

    def decision_function(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        K = kernel_matrix(self.kernel, X, self.support_vectors, self.gamma)
        return K @ self.dual_coef + self.bias


def kernel_matrix(kernel: str, A, B, gamma: float = 1.0) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if kernel == "linear":
        return A @ B.T
    if kernel == "rbf":
        sq = (A ** 2).sum(1)[:, None] + (B ** 2).sum(1)[None, :] - 2.0 * A @ B.T
        return np.exp(-gamma * np.maximum(sq, 0.0))
    raise InvalidInputError(f"unknown kernel {kernel!r}")


def default_gamma(X) -> float:
    """1 / (n_features * Var(X)), the usual scale-aware RBF width."""
    X = np.asarray(X, dtype=float)
    var = X.var()
    return 1.0 / (X.shape[1] * var) if var > 0 else 1.0


def as_pm1(y) -> np.ndarray:
    y = np.asarray(y).astype(float).ravel()
    return np.where(y > 0, 1.0, -1.0)


def dual_objective(alphas, y, K) -> float:
    """sum(alpha) - 1/2 sum_ij alpha_i alpha_j y_i y_j K_ij (to be maximized)."""
    ay = alphas * y
    return float(alphas.sum() - 0.5 * ay @ K @ ay)


@numba.njit(cache=True)
def _smo(K, y, C, tol, max_iter):
    n = y.size
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of 1/2 a'Qa - e'a with Q = yy' * K
    it = 0
    while it < max_iter:
        # i: maximal violator in the up set; m_low: minimum over the low set
        i = -1
        m_up = -np.inf
        m_low = np.inf
        for t in range(n):
            s = -y[t] * grad[t]
            if (alpha[t] < C and y[t] > 0) or (alpha[t] > 0 and y[t] < 0):
                if s > m_up:
                    m_up = s
                    i = t
            if (alpha[t] < C and y[t] < 0) or (alpha[t] > 0 and y[t] > 0):
                if s < m_low:
                    m_low = s
        if i < 0 or m_up - m_low < tol:
            break
        j = -1
        best = -np.inf
        for t in range(n):
            if (alpha[t] < C and y[t] < 0) or (alpha[t] > 0 and y[t] > 0):
                b = m_up + y[t] * grad[t]
                if b > 0:
                    eta = K[i, i] + K[t, t] - 2.0 * K[i, t]
                    if eta <= 0:
                        eta = _TAU
                    g = b * b / eta
                    if g > best:
                        best = g
                        j = t
        if j < 0:
            break
        # alpha_i += y_i d, alpha_j -= y_j d keeps sum(alpha y) fixed
        eta = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if eta <= 0:
            eta = _TAU
        d = (m_up + y[j] * grad[j]) / eta
        lim_i = C - alpha[i] if y[i] > 0 else alpha[i]
        lim_j = alpha[j] if y[j] > 0 else C - alpha[j]
        d = min(d, lim_i, lim_j)
        da_i = y[i] * d
        da_j = -y[j] * d
        alpha[i] = min(max(alpha[i] + da_i, 0.0), C)
        alpha[j] = min(max(alpha[j] + da_j, 0.0), C)
        for t in range(n):
            grad[t] += y[t] * (K[t, i] * y[i] * da_i + K[t, j] * y[j] * da_j)
        it += 1
    return alpha, grad, it


def svm_train(X, y, kernel: str = "linear", C: float = 1.0, tol: float = 1e-3,
              gamma: float | None = None, max_iter: int = 1_000_000, seed: int = 0) -> SvmModel:
    """Fit the dual soft-margin SVM until the maximal KKT violation is below ``tol``.

    Labels may be {0, 1} or {-1, +1}.  ``seed`` permutes the scan order, which
    only matters for breaking exact ties in pair selection.
    """
    X = np.asarray(X, dtype=float)
    y = as_pm1(y)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise InvalidInputError("X must be (n_samples, n_features) matching y")
    if np.all(y == y[0]):
        raise InvalidInputError("SVM training needs samples from both classes")
    if C <= 0:
        raise InvalidInputError("C must be positive")
    if kernel == "rbf" and gamma is None:
        gamma = default_gamma(X)
    gamma = 1.0 if gamma is None else float(gamma)

    perm = np.random.default_rng(seed).permutation(y.size)
    Xp, yp = X[perm], y[perm]
    K = kernel_matrix(kernel, Xp, Xp, gamma)
    alpha, grad, it = _smo(K, yp, float(C), float(tol), int(max_iter))
    if it >= max_iter:
        log.warning("SMO stopped at max_iter=%d before reaching tol=%g", max_iter, tol)

    score = -yp * grad
    free = (alpha > 1e-12) & (alpha < C - 1e-12)
    if free.any():
        bias = float(np.mean(score[free]))
    else:
        up = ((alpha < C) & (yp > 0)) | ((alpha > 0) & (yp < 0))
        low = ((alpha < C) & (yp < 0)) | ((alpha > 0) & (yp > 0))
        hi = score[up].max() if up.any() else 0.0
        lo = score[low].min() if low.any() else 0.0
        bias = float((hi + lo) / 2.0)

    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    alpha_orig = alpha[inv]
    sv = alpha_orig > 1e-12
    return SvmModel(
        kernel=kernel, gamma=gamma, C=float(C),
        support_vectors=X[sv].copy(), dual_coef=(alpha_orig * y)[sv],
        bias=bias, alphas=alpha_orig, labels=y, n_iter=it,
    )


def svm_score(model: SvmModel, x) -> np.ndarray | float:
    """Raw decision value sum_i alpha_i y_i k(x_i, x) + b."""
    x = np.asarray(x, dtype=float)
    out = model.decision_function(x)
    return float(out[0]) if x.ndim == 1 else out
