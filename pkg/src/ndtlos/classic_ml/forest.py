"""Gini decision trees and a bagged random forest."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidInputError


def gini(class_counts) -> float:
    """1 - sum_z p_z^2 for the given per-class counts."""
    counts = np.asarray(class_counts, dtype=float)
    if np.any(counts < 0):
        raise InvalidInputError("class counts must be nonnegative")
    total = counts.sum()
    if total <= 0:
        raise InvalidInputError("class counts are all zero")
    p = counts / total
    return float(1.0 - np.sum(p * p))


def best_split(x, y, min_leaf: int = 1):
    """Exhaustive midpoint scan of one feature.

    Returns (threshold, impurity decrease) for the split ``x <= threshold``
    maximizing the weighted Gini decrease, or (None, 0.0) if no split leaves
    ``min_leaf`` samples on both sides.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y).astype(int)
    n = x.size
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    ones = np.cumsum(ys)
    n_left = np.arange(1, n)
    pos_left = ones[:-1]
    pos_right = ones[-1] - pos_left
    n_right = n - n_left
    valid = (xs[1:] > xs[:-1]) & (n_left >= min_leaf) & (n_right >= min_leaf)
    if not valid.any():
        return None, 0.0
    pl = pos_left / n_left
    pr = pos_right / n_right
    g_left = 2.0 * pl * (1.0 - pl)
    g_right = 2.0 * pr * (1.0 - pr)
    p = ones[-1] / n
    parent = 2.0 * p * (1.0 - p)
    decrease = parent - (n_left * g_left + n_right * g_right) / n
    decrease = np.where(valid, decrease, -np.inf)
    k = int(np.argmax(decrease))
    return float((xs[k] + xs[k + 1]) / 2.0), float(decrease[k])


@dataclass
class DecisionTree:
    """Flat-array binary tree; leaves have feature == -1."""

    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    counts: list[tuple[int, int]] = field(default_factory=list)
    decrease: list[float] = field(default_factory=list)
    sample_indices: np.ndarray | None = None

    def _add(self, counts):
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.counts.append(counts)
        self.decrease.append(0.0)
        return len(self.feature) - 1

    def apply(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        node = np.zeros(X.shape[0], dtype=int)
        feat = np.array(self.feature)
        thr = np.array(self.threshold)
        left = np.array(self.left)
        right = np.array(self.right)
        active = feat[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            f = feat[node[idx]]
            go_left = X[idx, f] <= thr[node[idx]]
            node[idx] = np.where(go_left, left[node[idx]], right[node[idx]])
            active = feat[node] >= 0
        return node

    def predict(self, X) -> np.ndarray:
        counts = np.array(self.counts)[self.apply(X)]
        return (counts[:, 1] >= counts[:, 0]).astype(int)

    @property
    def is_leaf(self) -> bool:
        return self.feature[0] < 0


def fit_tree(X, y, max_depth: int = 12, min_leaf: int = 2, max_features: int | None = None,
             rng: np.random.Generator | None = None) -> DecisionTree:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).astype(int)
    d = X.shape[1]
    k = d if max_features is None else max(1, min(d, max_features))
    rng = rng or np.random.default_rng(0)
    tree = DecisionTree()
    root_counts = (int((y == 0).sum()), int((y == 1).sum()))
    stack = [(tree._add(root_counts), np.arange(y.size), 0)]
    while stack:
        node, idx, depth = stack.pop()
        yn = y[idx]
        if depth >= max_depth or idx.size < 2 * min_leaf or yn.min() == yn.max():
            continue
        feats = rng.choice(d, size=k, replace=False) if k < d else np.arange(d)
        best = (None, None, 0.0)
        for f in feats:
            thr, dec = best_split(X[idx, f], yn, min_leaf)
            if thr is not None and dec > best[2]:
                best = (int(f), thr, dec)
        f, thr, dec = best
        if f is None:
            continue
        mask = X[idx, f] <= thr
        li, ri = idx[mask], idx[~mask]
        tree.feature[node] = f
        tree.threshold[node] = thr
        tree.decrease[node] = dec
        lnode = tree._add((int((y[li] == 0).sum()), int((y[li] == 1).sum())))
        rnode = tree._add((int((y[ri] == 0).sum()), int((y[ri] == 1).sum())))
        tree.left[node], tree.right[node] = lnode, rnode
        stack.append((rnode, ri, depth + 1))
        stack.append((lnode, li, depth + 1))
    return tree


@dataclass
class RfModel:
    trees: list[DecisionTree]
    n_trees: int
    max_depth: int
    min_leaf: int
    seed: int
    oob_error: float = math.nan


def _labels01(y):
    y = np.asarray(y).astype(float).ravel()
    return (y > 0).astype(int)


def rf_train(X, y, n_trees: int = 100, max_depth: int = 12, min_leaf: int = 2,
             seed: int = 0) -> RfModel:
    """Bagged Gini trees with sqrt(d) features tried per split."""
    X = np.asarray(X, dtype=float)
    y = _labels01(y)
    n, d = X.shape
    if n < min_leaf:
        raise InvalidInputError("fewer samples than min_leaf")
    if n_trees < 1:
        raise InvalidInputError("need at least one tree")
    rng = np.random.default_rng(seed)
    max_features = max(1, int(math.sqrt(d)))
    trees = []
    for _ in range(n_trees):
        idx = rng.integers(0, n, size=n)
        tree = fit_tree(X[idx], y[idx], max_depth, min_leaf, max_features, rng)
        tree.sample_indices = idx
        trees.append(tree)
    model = RfModel(trees, n_trees, max_depth, min_leaf, seed)
    model.oob_error = oob_error(model, X, y)
    return model


def oob_error(model: RfModel, X, y) -> float:
    """Misclassification rate of out-of-bag majority votes (NaN if no sample is OOB)."""
    y = _labels01(y)
    votes = np.zeros(y.size)
    seen = np.zeros(y.size)
    for tree in model.trees:
        oob = np.ones(y.size, dtype=bool)
        oob[tree.sample_indices] = False
        if oob.any():
            votes[oob] += tree.predict(X[oob])
            seen[oob] += 1
    has = seen > 0
    if not has.any():
        return math.nan
    pred = (votes[has] / seen[has] >= 0.5).astype(int)
    return float(np.mean(pred != y[has]))


def rf_score(model: RfModel, x) -> np.ndarray | float:
    """Fraction of trees voting for class 1."""
    x = np.asarray(x, dtype=float)
    X = np.atleast_2d(x)
    votes = np.mean([t.predict(X) for t in model.trees], axis=0)
    return float(votes[0]) if x.ndim == 1 else votes
