"""Angle-delay channel power matrix (ADCPM) and max-pool downsampling."""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .channel import ArrayConfig, ChannelMatrix, OfdmConfig
from .errors import InvalidInputError


@dataclass
class Adcpm:
    data: np.ndarray
    pooled_from: tuple[int, int] | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)

    @property
    def shape(self):
        return self.data.shape


@functools.lru_cache(maxsize=32)
def centered_dft(size: int, centered: bool = True) -> np.ndarray:
    """Unitary DFT matrix.

    ``centered=True`` gives [V]_{i,j} = e^{-j2pi i(j - size/2)/size}/sqrt(size)
    (spatial beams with broadside in the middle column); ``centered=False``
    gives the plain [F]_{i,j} = e^{-j2pi ij/size}/sqrt(size).
    """
    if size < 1:
        raise InvalidInputError("DFT size must be >= 1")
    i = np.arange(size)[:, None]
    j = np.arange(size)[None, :]
    shift = size / 2 if centered else 0.0
    mat = np.exp(-2j * np.pi * i * (j - shift) / size) / math.sqrt(size)
    mat.flags.writeable = False
    return mat


def _check_dims(H: ChannelMatrix, array: ArrayConfig, ofdm: OfdmConfig):
    expected = (array.n_elements, ofdm.n_subcarriers)
    if H.data.shape != expected:
        raise InvalidInputError(f"channel shape {H.data.shape} does not match configs {expected}")


def angle_delay_transform(H: ChannelMatrix, array: ArrayConfig, ofdm: OfdmConfig) -> np.ndarray:
    """G = (V_N kron V_M)^H H F^* / sqrt(MN N_c), applied one axis at a time.

    Rows of the result are beam pairs ordered (vertical beam, horizontal beam)
    to match the (n, m) element ordering of the channel; columns are delay taps.
    """
    _check_dims(H, array, ofdm)
    N, M, Nc = array.rows, array.cols, ofdm.n_subcarriers
    X = H.data.reshape(N, M, Nc)
    vn = centered_dft(N).conj().T
    vm = centered_dft(M).conj().T
    X = np.einsum("ai,imc->amc", vn, X)
    X = np.einsum("bm,amc->abc", vm, X)
    # right-multiplying by conj(F) is sqrt(Nc) * inverse FFT along the subcarrier axis
    X = np.fft.ifft(X, axis=-1) * math.sqrt(Nc)
    return X.reshape(N * M, Nc) / math.sqrt(M * N * Nc)


def angle_delay_transform_dense(H: ChannelMatrix, array: ArrayConfig, ofdm: OfdmConfig) -> np.ndarray:
    """Explicit Kronecker-matrix form of :func:`angle_delay_transform` (small arrays only)."""
    _check_dims(H, array, ofdm)
    N, M, Nc = array.rows, array.cols, ofdm.n_subcarriers
    A = np.kron(centered_dft(N), centered_dft(M))
    F = centered_dft(Nc, centered=False)
    return A.conj().T @ H.data @ F.conj() / math.sqrt(M * N * Nc)


def _power(G):
    # re^2 + im^2 avoids the rounding of a square root followed by a square
    G = np.asarray(G)
    return G.real ** 2 + G.imag ** 2


def compute_adcpm(G) -> Adcpm:
    """Elementwise power |G|^2, averaged when several realizations are given."""
    if isinstance(G, np.ndarray) and G.ndim == 2:
        return Adcpm(_power(G))
    stack = list(G)
    if not stack:
        raise InvalidInputError("need at least one realization")
    return Adcpm(np.mean([_power(g) for g in stack], axis=0))


def max_pool(X, kernel_h: int, kernel_w: int) -> Adcpm:
    """Non-overlapping max pooling; ragged edge windows keep their partial max."""
    if kernel_h < 1 or kernel_w < 1:
        raise InvalidInputError("kernel dims must be >= 1")
    data = X.data if isinstance(X, Adcpm) else np.asarray(X, dtype=float)
    h, w = data.shape
    oh, ow = -(-h // kernel_h), -(-w // kernel_w)
    padded = np.full((oh * kernel_h, ow * kernel_w), -np.inf)
    padded[:h, :w] = data
    pooled = padded.reshape(oh, kernel_h, ow, kernel_w).max(axis=(1, 3))
    return Adcpm(pooled, pooled_from=(kernel_h, kernel_w))


def normalize_max(X: Adcpm) -> Adcpm:
    peak = float(X.data.max()) if X.data.size else 0.0
    if peak <= 0.0:
        return Adcpm(np.zeros_like(X.data), X.pooled_from)
    return Adcpm(X.data / peak, X.pooled_from)


def cnn_input(H: ChannelMatrix, array: ArrayConfig, ofdm: OfdmConfig,
              pool: tuple[int, int] | None = (4, 4)) -> np.ndarray:
    """Single-snapshot ADCPM, optionally max-pooled, normalized to a peak of 1."""
    X = compute_adcpm(angle_delay_transform(H, array, ofdm))
    if pool is not None and tuple(pool) != (1, 1):
        X = max_pool(X, *pool)
    return normalize_max(X).data


def predicted_peak_bin(array: ArrayConfig, ofdm: OfdmConfig, azimuth: float,
                       elevation: float, delay: float) -> tuple[int, int]:
    """(row, column) where a single on-grid path concentrates its energy."""
    N, M, Nc = array.rows, array.cols, ofdm.n_subcarriers
    jn = int(round(N / 2 + N * array.dv * math.sin(elevation))) % N
    jm = int(round(M / 2 + M * array.dh * math.cos(elevation) * math.sin(azimuth))) % M
    q = int(round(delay / ofdm.sample_interval)) % Nc
    return jn * M + jm, q


def bin_to_angles(array: ArrayConfig, row: int) -> tuple[float, float]:
    """Invert a beam row to (azimuth, elevation) using principal spatial frequencies."""
    N, M = array.rows, array.cols
    jn, jm = divmod(int(row), M)
    un = ((jn - N / 2) / N + 0.5) % 1.0 - 0.5
    um = ((jm - M / 2) / M + 0.5) % 1.0 - 0.5
    sin_el = float(np.clip(un / array.dv, -1.0, 1.0))
    el = math.asin(sin_el)
    cos_el = math.cos(el)
    sin_az = float(np.clip(um / (array.dh * cos_el), -1.0, 1.0)) if cos_el > 1e-12 else 0.0
    return math.asin(sin_az), el


def save_csv(X: Adcpm, path) -> None:
    """Row-major dump with a ``# rows,cols`` header line."""
    h, w = X.data.shape
    with Path(path).open("w") as fh:
        fh.write(f"# rows={h},cols={w}\n")
        np.savetxt(fh, X.data, delimiter=",", fmt="%.9e")
