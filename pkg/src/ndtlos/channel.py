"""OFDM channel synthesis, noisy uplink and least-squares channel estimation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .geometry import SPEED_OF_LIGHT, MultipathSet

TRUE_CHANNEL = "true_channel"
ESTIMATED = "estimated"


@dataclass(frozen=True)
class OfdmConfig:
    fc: float
    bandwidth: float
    n_subcarriers: int
    n_guard: int

    def __post_init__(self):
        if self.n_subcarriers < 2:
            raise InvalidInputError("need at least 2 subcarriers")
        if self.n_guard < 0:
            raise InvalidInputError("n_guard must be >= 0")
        if self.bandwidth <= 0 or self.fc <= 0:
            raise InvalidInputError("fc and bandwidth must be positive")

    @property
    def sample_interval(self) -> float:
        return 1.0 / self.bandwidth

    @property
    def symbol_duration(self) -> float:
        return self.n_subcarriers * self.sample_interval

    @property
    def cp_duration(self) -> float:
        return self.n_guard * self.sample_interval

    @property
    def subcarrier_freqs(self) -> np.ndarray:
        """Baseband subcarrier offsets l / T_c, l = 0..N_c-1."""
        return np.arange(self.n_subcarriers) / self.symbol_duration

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.fc


@dataclass(frozen=True)
class ArrayConfig:
    rows: int
    cols: int
    dv: float = 0.5
    dh: float = 0.5
    element_pattern: str = "isotropic"

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise InvalidInputError("array needs at least one row and column")
        if self.dv <= 0 or self.dh <= 0:
            raise InvalidInputError("element spacings must be positive")
        if self.element_pattern not in ("isotropic", "directional_3gpp"):
            raise InvalidInputError(f"unknown element pattern {self.element_pattern!r}")

    @property
    def n_elements(self) -> int:
        return self.rows * self.cols


@dataclass
class ChannelMatrix:
    """Complex (N*M, N_c) frequency response; element index is n*M + m."""

    data: np.ndarray
    kind: str = TRUE_CHANNEL
    outage: bool = False

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=complex)
        if self.data.ndim != 2:
            raise InvalidInputError("channel data must be a 2-D matrix")
        if self.kind not in (TRUE_CHANNEL, ESTIMATED):
            raise InvalidInputError(f"unknown channel kind {self.kind!r}")


@dataclass
class UplinkRecord:
    received: np.ndarray
    pilots: np.ndarray
    noise_var: float
    snr_db: float = field(default=math.inf)


# Profiles mirror the reference measurement setup and a reduced desk setup.
FULL_OFDM = OfdmConfig(fc=28e9, bandwidth=400e6, n_subcarriers=512, n_guard=128)
FULL_ARRAY = ArrayConfig(rows=8, cols=16, dv=0.8, dh=0.5, element_pattern="directional_3gpp")
DESK_OFDM = OfdmConfig(fc=28e9, bandwidth=100e6, n_subcarriers=128, n_guard=112)
DESK_ARRAY = ArrayConfig(rows=4, cols=8, dv=0.8, dh=0.5, element_pattern="isotropic")
PROFILES = {
    "full": (FULL_OFDM, FULL_ARRAY),
    "desk": (DESK_OFDM, DESK_ARRAY),
}


def steering_vector(array: ArrayConfig, azimuth: float, elevation: float) -> np.ndarray:
    """Unit-modulus UPA response, row-major over (n, m)."""
    n = np.arange(array.rows)[:, None]
    m = np.arange(array.cols)[None, :]
    phase = n * array.dv * np.sin(elevation) + m * array.dh * np.cos(elevation) * np.sin(azimuth)
    return np.exp(-2j * np.pi * phase).reshape(-1)


def element_gain_3gpp(azimuth: float, elevation: float) -> float:
    """Amplitude of the TR 38.901 single-element pattern (8 dBi peak).

    Angles are offsets from boresight in radians; elevation 0 is broadside.
    """
    az = math.degrees(azimuth)
    el = math.degrees(elevation)
    att_v = -min(12.0 * (el / 65.0) ** 2, 30.0)
    att_h = -min(12.0 * (az / 65.0) ** 2, 30.0)
    att = -min(-(att_v + att_h), 30.0)
    return 10.0 ** ((att + 8.0) / 20.0)


def _element_amplitude(array: ArrayConfig, azimuth, elevation):
    if array.element_pattern == "isotropic":
        return 1.0
    return element_gain_3gpp(azimuth, elevation)


def synth_cfr(paths: MultipathSet, array: ArrayConfig, ofdm: OfdmConfig) -> ChannelMatrix:
    """Sum of per-path steering vectors weighted by delayed complex gains."""
    freqs = ofdm.subcarrier_freqs
    if not paths.paths:
        return ChannelMatrix(np.zeros((array.n_elements, ofdm.n_subcarriers), complex), outage=True)
    steer = np.stack([
        _element_amplitude(array, p.azimuth, p.elevation) * steering_vector(array, p.azimuth, p.elevation)
        for p in paths.paths], axis=1)
    alpha = paths.gains[:, None] * np.exp(-2j * np.pi * paths.delays[:, None] * freqs[None, :])
    return ChannelMatrix(steer @ alpha)


def qpsk_pilots(n: int, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.exp(1j * (np.pi / 4 + np.pi / 2 * rng.integers(0, 4, size=n)))


def noise_variance(H: np.ndarray, snr_db: float) -> float:
    """Per-antenna noise power giving ``snr_db`` for unit-power symbols."""
    if math.isinf(snr_db) and snr_db > 0:
        return 0.0
    signal = float(np.mean(np.abs(H) ** 2))
    return signal / 10.0 ** (snr_db / 10.0)


def complex_awgn(shape, var: float, rng: np.random.Generator) -> np.ndarray:
    if var == 0.0:
        return np.zeros(shape, dtype=complex)
    scale = math.sqrt(var / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def simulate_uplink(H: ChannelMatrix, snr_db: float, seed, noise_var: float | None = None) -> UplinkRecord:
    """Received pilots r[l] = h[l] s[l] + z[l] with full-band QPSK pilots.

    ``seed`` may be an int or a SeedSequence-compatible tuple; pilots and noise
    draw from independent child streams.  ``noise_var`` overrides the SNR rule.
    """
    if H.kind != TRUE_CHANNEL:
        raise InvalidInputError("uplink simulation needs the true channel")
    ss = np.random.SeedSequence(seed if not isinstance(seed, tuple) else list(seed))
    pilot_ss, noise_ss = ss.spawn(2)
    n_el, n_sc = H.data.shape
    pilots = qpsk_pilots(n_sc, pilot_ss)
    var = noise_variance(H.data, snr_db) if noise_var is None else float(noise_var)
    z = complex_awgn((n_el, n_sc), var, np.random.default_rng(noise_ss))
    return UplinkRecord(H.data * pilots[None, :] + z, pilots, var, snr_db)


def estimate_channel_ls(received, pilots=None) -> ChannelMatrix:
    """Per-subcarrier least squares: h_hat[l] = r[l] conj(s[l]) / |s[l]|^2.

    Accepts an :class:`UplinkRecord` or explicit (received, pilots) arrays.
    """
    if isinstance(received, UplinkRecord):
        received, pilots = received.received, received.pilots
    pilots = np.asarray(pilots, dtype=complex)
    power = np.abs(pilots) ** 2
    if np.any(power == 0):
        raise InvalidInputError("zero-magnitude pilot")
    est = np.asarray(received) * (np.conj(pilots) / power)[None, :]
    return ChannelMatrix(est, kind=ESTIMATED)


def add_awgn(H: ChannelMatrix, snr_db: float, rng: np.random.Generator) -> ChannelMatrix:
    """Channel-domain white noise at the per-antenna SNR (training augmentation)."""
    var = noise_variance(H.data, snr_db)
    return ChannelMatrix(H.data + complex_awgn(H.data.shape, var, rng), kind=H.kind)


def max_delay_ok(paths: MultipathSet, ofdm: OfdmConfig) -> bool:
    """Cyclic prefix covers every path delay."""
    return all(p.delay <= ofdm.cp_duration for p in paths.paths)
