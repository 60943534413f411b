"""High-resolution multipath features and the peak-picking MPC estimator."""
from __future__ import annotations

import csv
import math
from dataclasses import astuple, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.ndimage import maximum_filter

from .adcpm import angle_delay_transform, bin_to_angles, compute_adcpm
from .channel import ArrayConfig, ChannelMatrix, OfdmConfig
from .errors import InvalidInputError
from .geometry import MultipathSet, PathComponent

FEATURE_NAMES = ("p_rss", "p_max", "tau_rms", "delta_tau", "theta_rms", "phi_rms")
CSV_HEADER = FEATURE_NAMES + ("label", "snr_db")


@dataclass(frozen=True)
class FeatureVector:
    p_rss: float
    p_max: float
    tau_rms: float
    delta_tau: float
    theta_rms: float
    phi_rms: float

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)


def _weighted_rms(values, weights, center):
    return math.sqrt(float(np.sum(weights * (values - center) ** 2) / np.sum(weights)))


def extract_features(paths: MultipathSet) -> FeatureVector:
    """Six-feature summary of a path set.

    RSS is the sum of path magnitudes (not powers).  The rise time is the delay
    of the strongest path minus the earliest delay.  Angle features are
    power-weighted RMS spreads; azimuth deviations are wrapped around the
    power-weighted circular mean.
    """
    if not paths.paths:
        raise InvalidInputError("cannot extract features from an empty path set")
    amp = np.abs(paths.gains)
    pw = amp ** 2
    tau = paths.delays
    if pw.sum() == 0.0:
        pw = np.ones_like(pw)
    tau_mean = float(np.sum(pw * tau) / pw.sum())
    az = paths.azimuths
    el = paths.elevations
    az_mean = float(np.angle(np.sum(pw * np.exp(1j * az))))
    az_dev = np.angle(np.exp(1j * (az - az_mean)))
    el_mean = float(np.sum(pw * el) / pw.sum())
    return FeatureVector(
        p_rss=float(amp.sum()),
        p_max=float(pw.max()),
        tau_rms=_weighted_rms(tau, pw, tau_mean),
        delta_tau=float(tau[int(np.argmax(amp))] - tau.min()),
        theta_rms=_weighted_rms(az_dev, pw, 0.0),
        phi_rms=_weighted_rms(el, pw, el_mean),
    )


def estimate_mpc(H_est: ChannelMatrix, array: ArrayConfig, ofdm: OfdmConfig,
                 max_paths: int = 8, threshold_db: float = 20.0) -> MultipathSet:
    """Recover dominant paths as local maxima of the angle-delay power grid.

    Peaks are 3x3x3 local maxima over (vertical beam, horizontal beam, delay)
    with circular neighbourhoods, kept if within ``threshold_db`` of the global
    maximum.  Amplitude is the square root of the bin power.
    """
    if not np.all(np.isfinite(H_est.data)):
        raise InvalidInputError("channel estimate has non-finite entries")
    X = compute_adcpm(angle_delay_transform(H_est, array, ofdm)).data
    N, M, Nc = array.rows, array.cols, ofdm.n_subcarriers
    peak = X.max()
    if peak <= 0.0:
        return MultipathSet([], False, (math.nan,) * 3, estimated=True)
    cube = X.reshape(N, M, Nc)
    is_peak = (cube == maximum_filter(cube, size=3, mode="wrap"))
    is_peak &= cube >= peak * 10.0 ** (-threshold_db / 10.0)
    jn, jm, q = np.nonzero(is_peak)
    rows = jn * M + jm
    power = cube[jn, jm, q]
    # strongest first; ties broken by (delay bin, angle bin) ascending
    order = np.lexsort((rows, q, -power))[:max_paths]
    found = []
    for k in order:
        az, el = bin_to_angles(array, rows[k])
        found.append(PathComponent(math.sqrt(power[k]), q[k] * ofdm.sample_interval, az, el, 0))
    found.sort(key=lambda p: (p.delay, p.azimuth, p.elevation))
    return MultipathSet(found, False, (math.nan,) * 3, estimated=True)


def feature_matrix(vectors: Iterable[FeatureVector]) -> np.ndarray:
    rows = [v.as_array() for v in vectors]
    return np.array(rows, dtype=float).reshape(-1, len(FEATURE_NAMES))


@dataclass
class Scaler:
    mean: np.ndarray
    std: np.ndarray

    @property
    def zero_variance(self) -> np.ndarray:
        return self.std == 0.0

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        safe = np.where(self.zero_variance, 1.0, self.std)
        shift = np.where(self.zero_variance, 0.0, self.mean)
        return (X - shift) / safe

    @classmethod
    def fit(cls, X) -> "Scaler":
        X = np.asarray(X, dtype=float)
        if X.shape[0] < 2:
            raise InvalidInputError("need at least two samples to fit a scaler")
        return cls(X.mean(axis=0), X.std(axis=0))


def standardize(features) -> tuple[np.ndarray, Scaler]:
    """Zero-mean unit-variance columns; constant columns pass through unscaled."""
    X = features if isinstance(features, np.ndarray) else feature_matrix(features)
    scaler = Scaler.fit(X)
    return scaler.transform(X), scaler


def write_feature_csv(path, X, labels: Sequence[int], snr_db: Sequence[float] | float) -> None:
    X = np.asarray(X, dtype=float)
    snr = np.broadcast_to(np.asarray(snr_db, dtype=float), (X.shape[0],))
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for row, y, s in zip(X, labels, snr):
            w.writerow([repr(float(v)) for v in row] + [int(y), repr(float(s))])


def read_feature_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    with Path(path).open() as fh:
        r = csv.reader(fh)
        header = next(r)
        if tuple(header) != CSV_HEADER:
            raise InvalidInputError(f"unexpected feature CSV header {header}")
        rows = [list(map(float, row)) for row in r]
    arr = np.array(rows, dtype=float).reshape(-1, len(CSV_HEADER))
    return arr[:, :6], arr[:, 6].astype(int), arr[:, 7]


__all__ = [
    "FeatureVector", "extract_features", "estimate_mpc", "feature_matrix",
    "Scaler", "standardize", "write_feature_csv", "read_feature_csv", "FEATURE_NAMES",
]
