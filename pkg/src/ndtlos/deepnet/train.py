"""Mini-batch training loop, optimizers and channel-domain AWGN augmentation."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from ..adcpm import cnn_input
from ..channel import ArrayConfig, ChannelMatrix, OfdmConfig, add_awgn
from ..errors import InvalidInputError, NumericalError
from ..models import ModelArtifact
from .losses import loss_bce, loss_joint
from .net import Network, NetSpec

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    schedule: str = "cosine"  # "cosine" or "constant"
    optimizer: str = "adam"  # "adam" or "sgd_momentum"
    momentum: float = 0.9
    seed: int = 0
    augment_snr_db: float | None = None
    augment_domain: str = "channel"  # "channel" or "adcpm"
    w_rec: float = 0.1
    weighted_bce: bool = False
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidInputError("epochs and batch_size must be positive")
        if self.w_rec < 0:
            raise InvalidInputError("w_rec must be >= 0")
        if self.optimizer not in ("adam", "sgd_momentum"):
            raise InvalidInputError(f"unknown optimizer {self.optimizer!r}")
        if self.schedule not in ("cosine", "constant"):
            raise InvalidInputError(f"unknown schedule {self.schedule!r}")
        if self.augment_domain not in ("channel", "adcpm"):
            raise InvalidInputError(f"unknown augment_domain {self.augment_domain!r}")


@dataclass
class TrainingSet:
    """Clean CNN inputs plus, for augmentation, the channels they came from."""

    inputs: np.ndarray  # (n, H, W), max-normalized
    labels: np.ndarray  # (n,) in {0, 1}
    channels: list[ChannelMatrix] | None = None
    array: ArrayConfig | None = None
    ofdm: OfdmConfig | None = None
    pool: tuple[int, int] | None = (4, 4)

    def __len__(self):
        return len(self.labels)


def augment_awgn(channel: ChannelMatrix, snr_db: float, seed, array: ArrayConfig,
                 ofdm: OfdmConfig, pool: tuple[int, int] | None = None) -> np.ndarray:
    """Normalized ADCPM of the channel after adding white noise at ``snr_db``."""
    rng = np.random.default_rng(seed if not isinstance(seed, tuple) else list(seed))
    noisy = add_awgn(channel, snr_db, rng)
    return cnn_input(noisy, array, ofdm, pool)


def _augment_adcpm(x: np.ndarray, snr_db: float, rng) -> np.ndarray:
    """Additive noise applied directly on a normalized ADCPM (ablation path)."""
    if math.isinf(snr_db) and snr_db > 0:
        return x
    var = float(np.mean(x ** 2)) / 10.0 ** (snr_db / 10.0)
    noisy = np.abs(x + math.sqrt(var) * rng.standard_normal(x.shape))
    peak = noisy.max()
    return noisy / peak if peak > 0 else noisy


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads, lr):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k in sorted(params):
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] -= lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


class SgdMomentum:
    def __init__(self, params, lr, momentum=0.9):
        self.mu = momentum
        self.vel = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads, lr):
        for k in sorted(params):
            self.vel[k] = self.mu * self.vel[k] - lr * grads[k]
            params[k] += self.vel[k]


def _lr_at(config: TrainConfig, epoch: int) -> float:
    if config.schedule == "constant" or config.epochs == 1:
        return config.learning_rate
    return 0.5 * config.learning_rate * (1.0 + math.cos(math.pi * epoch / config.epochs))


def batch_loss(net: Network, x, y, config: TrainConfig, train: bool = True, weights=None):
    """Forward + loss + backward for one batch; returns (loss, probabilities)."""
    prob, recon = net.forward(x, train=train)
    if recon is not None:
        loss, dp, dr = loss_joint(prob, recon, x[:, None] if x.ndim == 3 else x, y, config.w_rec, weights)
    else:
        loss, dp = loss_bce(prob, y, weights)
        dr = None
    if train:
        net.backward(dp, dr)
    return loss, prob


def _class_weights(y):
    pos = y.mean()
    if pos in (0.0, 1.0):
        return np.ones_like(y, dtype=float)
    return np.where(y > 0, 0.5 / pos, 0.5 / (1 - pos))


def train(net: Network | NetSpec, dataset: TrainingSet, config: TrainConfig):
    """Optimize ``net`` on ``dataset``; returns (ModelArtifact, log rows).

    A ``val_fraction`` of the samples (seeded) is held out from optimization
    and reported in the log on clean inputs.
    """
    if len(dataset) == 0:
        raise InvalidInputError("empty training set")
    labels = np.asarray(dataset.labels).astype(float)
    if not np.all((labels == 0) | (labels == 1)):
        raise InvalidInputError("labels must be binary")
    if isinstance(net, NetSpec):
        net = Network(net, seed=config.seed)
    augment = config.augment_snr_db is not None and not (
        math.isinf(config.augment_snr_db) and config.augment_snr_db > 0)
    if augment and config.augment_domain == "channel" and dataset.channels is None:
        raise InvalidInputError("channel-domain augmentation needs the training channels")

    rng = np.random.default_rng([config.seed, 1])
    n = len(dataset)
    order = rng.permutation(n)
    n_val = int(round(config.val_fraction * n)) if n >= 10 else 0
    val_idx, fit_idx = np.sort(order[:n_val]), np.sort(order[n_val:])
    X_all = np.asarray(dataset.inputs, dtype=float)
    opt = (Adam(net.params, config.learning_rate) if config.optimizer == "adam"
           else SgdMomentum(net.params, config.learning_rate, config.momentum))
    weights = None
    if config.weighted_bce:
        weights = np.zeros(n)
        weights[fit_idx] = _class_weights(labels[fit_idx])
    rows = []
    for epoch in range(config.epochs):
        lr = _lr_at(config, epoch)
        perm = fit_idx[rng.permutation(fit_idx.size)]
        if augment:
            X_epoch = {}
            for i in perm:
                seed = (config.seed, 2, epoch, int(i))
                if config.augment_domain == "channel":
                    X_epoch[i] = augment_awgn(dataset.channels[i], config.augment_snr_db, seed,
                                              dataset.array, dataset.ofdm, dataset.pool)
                else:
                    X_epoch[i] = _augment_adcpm(X_all[i], config.augment_snr_db,
                                                np.random.default_rng(list(seed)))
        tot_loss, correct = 0.0, 0
        for start in range(0, perm.size, config.batch_size):
            idx = perm[start:start + config.batch_size]
            xb = np.stack([X_epoch[i] for i in idx]) if augment else X_all[idx]
            yb = labels[idx]
            wb = None if weights is None else weights[idx]
            net.zero_grad()
            loss, prob = batch_loss(net, xb, yb, config, True, wb)
            if not math.isfinite(loss):
                raise NumericalError(f"loss diverged at epoch {epoch}, batch starting {start}")
            opt.step(net.params, net.grads, lr)
            tot_loss += loss * idx.size
            correct += int(np.sum((prob >= 0.5) == (yb > 0.5)))
        row = {"epoch": epoch, "train_loss": tot_loss / perm.size, "train_acc": correct / perm.size,
               "val_loss": math.nan, "val_acc": math.nan}
        if n_val:
            vl, vp = batch_loss(net, X_all[val_idx], labels[val_idx], config, train=False)
            row["val_loss"] = vl
            row["val_acc"] = float(np.mean((vp >= 0.5) == (labels[val_idx] > 0.5)))
        log.info("epoch %d loss %.4f acc %.3f val_acc %.3f", epoch, row["train_loss"],
                 row["train_acc"], row["val_acc"])
        rows.append(row)
    meta = {"preset": net.spec.name, "input_dims": list(net.spec.input_dims),
            "train_config": asdict(config),
            "batchnorm": any(l.kind == "batchnorm" for l in net.spec.layers)}
    return ModelArtifact("cnn", net.state(), meta), rows


def write_training_log(path, rows) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,train_loss,train_acc,val_loss,val_acc\n")
        for r in rows:
            vals = (repr(float(r[k])) for k in ("train_loss", "train_acc", "val_loss", "val_acc"))
            fh.write(f"{int(r['epoch'])},{','.join(vals)}\n")
