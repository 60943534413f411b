"""Family-agnostic trained-model record and its scoring entry point.

``ModelArtifact.state`` holds named float arrays only, so every family goes
through the same checkpoint container.  Scores are what ROC analysis needs:
probabilities for the CNNs, vote fractions for the forest, raw decision
values for the SVM.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

FAMILIES = ("cnn", "svm", "rf")


@dataclass
class ModelArtifact:
    family: str
    state: dict
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DataError(f"unknown model family {self.family!r}")

    def score(self, inputs) -> np.ndarray:
        return score(self, inputs)

    @property
    def threshold(self) -> float:
        """Decision threshold on the score scale."""
        return 0.0 if self.family == "svm" else 0.5


def from_svm(model, scaler) -> ModelArtifact:
    state = {
        "support_vectors": model.support_vectors, "dual_coef": model.dual_coef,
        "bias": np.array([model.bias]), "scaler_mean": scaler.mean, "scaler_std": scaler.std,
    }
    meta = {"kernel": model.kernel, "gamma": model.gamma, "C": model.C, "n_iter": model.n_iter}
    return ModelArtifact("svm", state, meta)


def from_rf(model, scaler) -> ModelArtifact:
    state = {"scaler_mean": scaler.mean, "scaler_std": scaler.std}
    for i, t in enumerate(model.trees):
        state[f"tree{i}.feature"] = np.array(t.feature, dtype=float)
        state[f"tree{i}.threshold"] = np.array(t.threshold, dtype=float)
        state[f"tree{i}.left"] = np.array(t.left, dtype=float)
        state[f"tree{i}.right"] = np.array(t.right, dtype=float)
        state[f"tree{i}.counts"] = np.array(t.counts, dtype=float).reshape(-1, 2)
    meta = {"n_trees": model.n_trees, "max_depth": model.max_depth, "min_leaf": model.min_leaf,
            "seed": model.seed, "oob_error": model.oob_error}
    return ModelArtifact("rf", state, meta)


def _scaler(art):
    from .features import Scaler
    return Scaler(np.asarray(art.state["scaler_mean"]), np.asarray(art.state["scaler_std"]))


def to_svm(art: ModelArtifact):
    from .classic_ml.svm import SvmModel
    s = art.state
    return SvmModel(art.meta["kernel"], float(art.meta["gamma"]), float(art.meta["C"]),
                    np.asarray(s["support_vectors"]).reshape(len(s["dual_coef"]), -1),
                    np.asarray(s["dual_coef"]), float(s["bias"][0]),
                    np.asarray(s["dual_coef"]), np.zeros(0), int(art.meta.get("n_iter", 0)))


def to_rf(art: ModelArtifact):
    from .classic_ml.forest import DecisionTree, RfModel
    trees = []
    for i in range(int(art.meta["n_trees"])):
        s = art.state
        t = DecisionTree(
            feature=[int(v) for v in s[f"tree{i}.feature"]],
            threshold=[float(v) for v in s[f"tree{i}.threshold"]],
            left=[int(v) for v in s[f"tree{i}.left"]],
            right=[int(v) for v in s[f"tree{i}.right"]],
            counts=[(int(a), int(b)) for a, b in np.asarray(s[f"tree{i}.counts"]).reshape(-1, 2)],
        )
        trees.append(t)
    return RfModel(trees, len(trees), int(art.meta["max_depth"]), int(art.meta["min_leaf"]),
                   int(art.meta["seed"]), float(art.meta.get("oob_error", np.nan)))


def to_network(art: ModelArtifact):
    from .deepnet.net import Network, build_preset
    spec = build_preset(art.meta["preset"], art.meta["input_dims"], batchnorm=art.meta.get("batchnorm", False))
    return Network(spec, params=art.state)


def score(art: ModelArtifact, inputs) -> np.ndarray:
    """Scores for a batch: ADCPM stack (n, H, W) for CNNs, raw feature rows for SVM/RF."""
    if art.family == "cnn":
        net = to_network(art)
        prob, _ = net.forward(np.asarray(inputs, dtype=float), train=False)
        return prob
    X = _scaler(art).transform(np.atleast_2d(np.asarray(inputs, dtype=float)))
    if art.family == "svm":
        return to_svm(art).decision_function(X)
    from .classic_ml.forest import rf_score
    return np.atleast_1d(rf_score(to_rf(art), X))
