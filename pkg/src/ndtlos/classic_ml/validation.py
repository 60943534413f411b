"""K-fold splitting and hyperparameter search for the classic models."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidInputError
from .forest import rf_score, rf_train
from .svm import default_gamma, svm_score, svm_train

C_GRID = (0.1, 1.0, 10.0, 100.0)
GAMMA_FACTORS = (0.1, 1.0, 10.0)


def kfold(indices, k: int = 5, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Shuffled, disjoint (train, validation) folds whose sizes differ by at most one."""
    indices = np.asarray(indices)
    n = indices.size
    if k < 2:
        raise InvalidInputError("k must be >= 2")
    if k > n:
        raise InvalidInputError(f"k={k} exceeds the number of samples {n}")
    shuffled = indices[np.random.default_rng(seed).permutation(n)]
    folds = np.array_split(shuffled, k)
    out = []
    for i, val in enumerate(folds):
        train = np.concatenate([f for j, f in enumerate(folds) if j != i])
        out.append((train, val))
    return out


@dataclass
class SearchResult:
    params: dict
    cv_accuracy: float
    table: list[tuple[dict, float]]


def _cv_accuracy(fit, score, threshold, X, y, folds):
    accs = []
    for tr, va in folds:
        model = fit(X[tr], y[tr])
        pred = (score(model, X[va]) >= threshold).astype(int)
        accs.append(np.mean(pred == y[va]))
    return float(np.mean(accs))


def select_svm(X, y, kernel: str, k: int = 5, seed: int = 0, tol: float = 1e-3,
               c_grid=C_GRID, gamma_factors=GAMMA_FACTORS) -> SearchResult:
    """Grid search over C (and RBF gamma) by k-fold validation accuracy."""
    X = np.asarray(X, dtype=float)
    y = (np.asarray(y) > 0).astype(int)
    folds = kfold(np.arange(y.size), k, seed)
    gammas = [None] if kernel == "linear" else [f * default_gamma(X) for f in gamma_factors]
    table = []
    for C in c_grid:
        for g in gammas:
            params = {"C": C, "gamma": g}
            acc = _cv_accuracy(
                lambda A, b: svm_train(A, b, kernel, C, tol, gamma=g, seed=seed),
                svm_score, 0.0, X, y, folds)
            table.append((params, acc))
    best = max(table, key=lambda t: t[1])
    return SearchResult(best[0], best[1], table)


def cv_rf(X, y, k: int = 5, seed: int = 0, **rf_kwargs) -> float:
    X = np.asarray(X, dtype=float)
    y = (np.asarray(y) > 0).astype(int)
    folds = kfold(np.arange(y.size), k, seed)
    return _cv_accuracy(lambda A, b: rf_train(A, b, seed=seed, **rf_kwargs),
                        rf_score, 0.5, X, y, folds)
