"""Accuracy, ROC/AUC, confusion counts, FLOPs accounting and SNR sweeps."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

# Cited reference costs for the full SegNet baseline, not recomputed here.
SEGNET_TOTAL_FLOPS = 80e9
SEGNET_ENCODER_FLOPS = 40e9

FLOPS_CONVENTION = (
    "1 MAC = 2 FLOPs; conv = 2*Kh*Kw*Cin*Cout*Ho*Wo (+1 per output if biased); "
    "dense = 2*in*out + out; batchnorm/affine = 2 per element; "
    "relu/maxpool/global-avgpool/sigmoid/skip-add = 1 per output element; upsample = 0"
)


def _check_scores(scores, labels):
    s = np.asarray(scores, dtype=float).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.size == 0:
        raise InvalidInputError("empty score set")
    if s.size != y.size:
        raise InvalidInputError(f"{s.size} scores but {y.size} labels")
    if not np.all((y == 0) | (y == 1)):
        raise InvalidInputError("labels must be 0/1")
    if not np.all(np.isfinite(s)):
        raise InvalidInputError("scores must be finite")
    return s, y.astype(int)


def accuracy(scores, labels, threshold: float = 0.5) -> float:
    """Fraction correct when score >= threshold predicts class 1."""
    s, y = _check_scores(scores, labels)
    return float(np.mean((s >= threshold).astype(int) == y))


def confusion(scores, labels, threshold: float = 0.5) -> dict:
    s, y = _check_scores(scores, labels)
    pred = (s >= threshold).astype(int)
    return {"tp": int(np.sum((pred == 1) & (y == 1))), "fp": int(np.sum((pred == 1) & (y == 0))),
            "tn": int(np.sum((pred == 0) & (y == 0))), "fn": int(np.sum((pred == 0) & (y == 1)))}


@dataclass
class RocCurve:
    thresholds: np.ndarray  # descending; first entry +inf for the (0, 0) corner
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float


def roc(scores, labels) -> RocCurve:
    """Exact ROC over every distinct threshold, ties flipping together."""
    s, y = _check_scores(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise InvalidInputError("ROC needs both classes")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    # last index of each tie group
    ends = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp = np.cumsum(y)[ends]
    fp = (ends + 1) - tp
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    thresholds = np.r_[np.inf, s[ends]]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(thresholds, fpr, tpr, auc)


def auc(scores, labels) -> float:
    return roc(scores, labels).auc


def write_roc_csv(curve: RocCurve, path) -> None:
    with open(path, "w") as fh:
        fh.write("threshold,fpr,tpr\n")
        for t, f, p in zip(curve.thresholds, curve.fpr, curve.tpr):
            fh.write(f"{float(t)!r},{float(f)!r},{float(p)!r}\n")


# ---------------------------------------------------------------- FLOPs


@dataclass
class FlopsReport:
    name: str
    input_dims: tuple
    per_layer: list = field(default_factory=list)  # (layer name, kind, flops)
    convention: str = FLOPS_CONVENTION

    @property
    def total_flops(self) -> int:
        return sum(f for _, _, f in self.per_layer)

    @property
    def gflops(self) -> float:
        return self.total_flops / 1e9

    @property
    def macs(self) -> float:
        return self.total_flops / 2

    def to_text(self) -> str:
        lines = [f"# model: {self.name}", f"# input_dims: {'x'.join(map(str, self.input_dims))}",
                 f"# convention: {self.convention}", "layer,kind,flops"]
        lines += [f"{n},{k},{f}" for n, k, f in self.per_layer]
        lines.append(f"# total_flops: {self.total_flops}")
        lines.append(f"# total_gflops: {self.gflops:.6f}")
        return "\n".join(lines) + "\n"


def _layer_flops(layer) -> int:
    out = int(np.prod(layer.out_shape))
    kind = layer.kind
    if kind == "conv2d":
        k = layer.attrs["kernel"]
        c_in = layer.in_shape[0]
        f = 2 * k * k * c_in * out
        return f + (out if layer.attrs.get("bias") else 0)
    if kind == "dense":
        return 2 * layer.in_shape[0] * out + out
    if kind in ("batchnorm", "affine"):
        return 2 * out
    if kind in ("relu", "maxpool", "sigmoid", "skip_add", "avgpool_global"):
        return out
    if kind == "upsample":
        return 0
    raise InvalidInputError(f"no FLOPs rule for layer kind {kind!r}")


def flops(net) -> FlopsReport:
    """Analytic inference cost of a shaped NetSpec."""
    if not getattr(net, "layers", None):
        raise InvalidInputError("network specification has no layers")
    rep = FlopsReport(net.name, tuple(net.input_dims))
    for layer in net.layers:
        if not layer.out_shape or min(layer.out_shape) < 1:
            raise InvalidInputError(f"layer {layer.name} is not shaped")
        rep.per_layer.append((layer.name, layer.kind, _layer_flops(layer)))
    return rep


def reduction(new_flops: float, reference_flops: float) -> float:
    """Relative saving in percent."""
    if reference_flops <= 0:
        raise InvalidInputError("reference cost must be positive")
    return 100.0 * (1.0 - new_flops / reference_flops)


# ---------------------------------------------------------------- SNR sweeps


def snr_key(snr_db: float) -> int:
    """Nonnegative integer tag for an SNR value, used in seed tuples."""
    return int(round((float(snr_db) + 1000.0) * 1000))


def build_test_inputs(family: str, channels, snr_db: float, seed: int, array, ofdm, pool=(4, 4),
                      max_paths: int = 8, threshold_db: float = 20.0) -> np.ndarray:
    """Classifier inputs built from noisy uplink estimates of ``channels`` only.

    The ground-truth multipath description never enters here: CNNs see the
    ADCPM of the LS estimate, classic models see features of the MPCs picked
    from that estimate.  Sample ``i`` uses noise seed (seed, 3, snr, i), so
    every model family is scored on the same noise realization.
    """
    from .adcpm import cnn_input
    from .channel import estimate_channel_ls, simulate_uplink
    from .features import estimate_mpc, extract_features

    out = []
    for i, H in enumerate(channels):
        if math.isinf(snr_db) and snr_db > 0:
            H_est = H.__class__(H.data.copy(), kind="estimated")
        else:
            H_est = estimate_channel_ls(simulate_uplink(H, snr_db, (seed, 3, snr_key(snr_db), i)))
        if family == "cnn":
            out.append(cnn_input(H_est, array, ofdm, pool))
        else:
            out.append(extract_features(estimate_mpc(H_est, array, ofdm, max_paths, threshold_db)).as_array())
    return np.stack(out)


@dataclass
class SweepRow:
    snr_db: float
    accuracy: float
    auc: float


def eval_sweep(model, channels, labels, snr_list, seed: int, array, ofdm, pool=(4, 4),
               roc_out: dict | None = None) -> list[SweepRow]:
    """Accuracy at the model's threshold and AUC at each test SNR.

    If ``roc_out`` is a dict, the ROC curve of each SNR point is stored in it.
    """
    labels = np.asarray(labels).astype(int)
    rows = []
    for snr in snr_list:
        X = build_test_inputs(model.family, channels, snr, seed, array, ofdm, pool)
        s = model.score(X)
        curve = roc(s, labels)
        if roc_out is not None:
            roc_out[snr] = curve
        rows.append(SweepRow(float(snr), accuracy(s, labels, model.threshold), curve.auc))
    return rows


def write_sweep_csv(rows, path) -> None:
    with open(path, "w") as fh:
        fh.write("snr_db,accuracy,auc\n")
        for r in rows:
            fh.write(f"{float(r.snr_db)!r},{float(r.accuracy)!r},{float(r.auc)!r}\n")
