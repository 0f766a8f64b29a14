"""OFDM and SC-FDMA (DFT-precoded OFDM) symbol synthesis.

Symbols are built as an N-point IFFT of a zero-padded frequency vector
carrying N_U modulated subcarriers. For SC-FDMA the data are first spread
by a unitary N_U-point DFT. Samples are scaled so that the ensemble mean
power equals ``sigma2``.

Seeding follows a counter scheme: a master seed (int) plus a tuple of
non-negative counters maps to ``SeedSequence(master, spawn_key=counters)``.
Monte Carlo code uses ``(point_index, batch_index)`` as counters, so any
batch can be regenerated in isolation.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from .errors import InvalidArgumentError

QAM_ORDERS = (4, 16, 64, 256)


class WaveformKind(str, enum.Enum):
    OFDM = "ofdm"
    SCFDMA = "scfdma"


class ConstellationKind(str, enum.Enum):
    QAM = "qam"
    PSK = "psk"


@dataclass(frozen=True, eq=False)
class Constellation:
    kind: ConstellationKind
    points: np.ndarray

    @property
    def order(self) -> int:
        return len(self.points)

    @property
    def name(self) -> str:
        return f"{self.kind.value}{self.order}"

    def mean_power(self) -> float:
        return float(np.mean(np.abs(self.points) ** 2))

    def __eq__(self, other):
        if not isinstance(other, Constellation):
            return NotImplemented
        return self.kind == other.kind and np.array_equal(self.points, other.points)

    def __hash__(self):
        return hash((self.kind, self.order))


def make_constellation(kind, M: int) -> Constellation:
    """Build a unit-mean-power QAM or PSK alphabet.

    Square QAM is supported for M in {4, 16, 64, 256}; PSK for any M >= 2.
    Points are not Gray labelled since only amplitude statistics matter here.
    """
    try:
        kind = ConstellationKind(kind.lower() if isinstance(kind, str) else kind)
    except ValueError:
        raise InvalidArgumentError(f"unknown constellation kind {kind!r}") from None
    M = int(M)
    if kind is ConstellationKind.QAM:
        if M not in QAM_ORDERS:
            raise InvalidArgumentError(f"unsupported QAM order {M}; expected one of {QAM_ORDERS}")
        side = int(round(np.sqrt(M)))
        levels = np.arange(-(side - 1), side, 2, dtype=float)
        pts = (levels[:, None] + 1j * levels[None, :]).ravel()
    else:
        if M < 2:
            raise InvalidArgumentError(f"PSK order must be >= 2, got {M}")
        pts = np.exp(2j * np.pi * np.arange(M) / M)
    pts = pts / np.sqrt(np.mean(np.abs(pts) ** 2))
    pts.setflags(write=False)
    return Constellation(kind, pts)


def localized_indices(N: int, N_U: int) -> np.ndarray:
    """Contiguous block of ``N_U`` subcarrier indices centred near DC.

    >>> localized_indices(512, 24)[[0, -1]]
    array([-12,  11])
    """
    if N <= 0 or N_U <= 0:
        raise InvalidArgumentError("N and N_U must be positive")
    if N_U > N:
        raise InvalidArgumentError(f"N_U={N_U} exceeds N={N}")
    start = -((N_U + 1) // 2)
    return np.arange(start, start + N_U)


@dataclass(frozen=True, eq=False)
class WaveformConfig:
    """Everything needed to synthesize one waveform.

    ``indices`` are signed subcarrier indices in ``[-N/2, N/2 - 1]``.
    """

    kind: WaveformKind
    n: int
    n_u: int
    constellation: Constellation
    sigma2: float = 1.0
    indices: np.ndarray = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "kind", WaveformKind(self.kind))
        if self.n <= 0 or self.n_u <= 0:
            raise InvalidArgumentError("N and N_U must be positive")
        if self.n_u > self.n:
            raise InvalidArgumentError(f"N_U={self.n_u} exceeds N={self.n}")
        if not self.sigma2 > 0:
            raise InvalidArgumentError(f"sigma2 must be positive, got {self.sigma2}")
        idx = self.indices
        if idx is None:
            idx = localized_indices(self.n, self.n_u)
        idx = np.asarray(idx, dtype=int)
        if idx.shape != (self.n_u,):
            raise InvalidArgumentError("indices must hold exactly N_U entries")
        if np.any(np.diff(idx) <= 0):
            raise InvalidArgumentError("indices must be unique and sorted ascending")
        if idx[0] < -(self.n // 2) or idx[-1] > self.n - self.n // 2 - 1:
            raise InvalidArgumentError("indices must lie in [-N/2, N/2 - 1]")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    @classmethod
    def localized(cls, kind, n=512, n_u=24, constellation=("qam", 4), sigma2=1.0):
        if not isinstance(constellation, Constellation):
            constellation = make_constellation(*constellation)
        return cls(WaveformKind(kind), n, n_u, constellation, sigma2)

    @property
    def bins(self) -> np.ndarray:
        """Occupied FFT bin numbers (indices taken modulo N)."""
        return np.mod(self.indices, self.n)

    @property
    def scale(self) -> float:
        """Amplitude factor giving E|x_n|^2 = sigma2 for unit-power symbols."""
        return float(np.sqrt(self.sigma2 / self.n_u))

    @property
    def descriptor(self) -> str:
        return f"{self.kind.value}-{self.constellation.name}-N{self.n}-NU{self.n_u}"

    def with_sigma2(self, sigma2: float) -> "WaveformConfig":
        return WaveformConfig(self.kind, self.n, self.n_u, self.constellation, sigma2, self.indices)

    def __eq__(self, other):
        if not isinstance(other, WaveformConfig):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.n == other.n
            and self.n_u == other.n_u
            and self.constellation == other.constellation
            and self.sigma2 == other.sigma2
            and np.array_equal(self.indices, other.indices)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class TimeDomainSymbol:
    samples: np.ndarray
    config: WaveformConfig

    def power(self) -> float:
        return float(np.mean(np.abs(self.samples) ** 2))


def derive_seed(seed, *counters) -> np.random.SeedSequence:
    """Child seed for ``counters`` under ``seed`` (int or SeedSequence)."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + counters)
    if seed is None:
        raise InvalidArgumentError("an explicit seed is required for reproducibility")
    return np.random.SeedSequence(int(seed), spawn_key=counters)


def dft_precode(data) -> np.ndarray:
    """Unitary N_U-point DFT spreading applied ahead of subcarrier mapping.

    Operates on the last axis, so a (symbols, N_U) batch is spread row-wise.
    """
    data = np.asarray(data, dtype=complex)
    if data.ndim == 0 or data.shape[-1] == 0:
        raise InvalidArgumentError("dft_precode needs a non-empty vector")
    return sfft.fft(data, axis=-1, norm="ortho")


def draw_data(config: WaveformConfig, n_symbols: int, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. uniform constellation draws, shape (n_symbols, N_U)."""
    pts = config.constellation.points
    return pts[rng.integers(0, len(pts), size=(n_symbols, config.n_u))]


def subcarrier_symbols(config: WaveformConfig, data: np.ndarray) -> np.ndarray:
    """Map raw constellation draws to the values d_k placed on the subcarriers."""
    if config.kind is WaveformKind.SCFDMA:
        return dft_precode(data)
    return data


def synthesize(config: WaveformConfig, carriers: np.ndarray, workers=None) -> np.ndarray:
    """Time-domain samples from subcarrier values, shape (..., N)."""
    carriers = np.asarray(carriers, dtype=complex)
    if carriers.shape[-1] != config.n_u:
        raise InvalidArgumentError(f"expected {config.n_u} subcarrier values, got {carriers.shape[-1]}")
    spectrum = np.zeros(carriers.shape[:-1] + (config.n,), dtype=complex)
    spectrum[..., config.bins] = carriers
    # ifft carries a 1/N factor that the plain subcarrier sum does not
    return sfft.ifft(spectrum, axis=-1, workers=workers) * (config.n * config.scale)


def generate_symbols(config: WaveformConfig, n_symbols: int, seed, workers=None):
    """Batch of symbols from a single generator.

    Returns ``(x, carriers)`` where ``x`` has shape (n_symbols, N) and
    ``carriers`` holds the unscaled subcarrier values d_k, shape (n_symbols, N_U).
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(derive_seed(seed))
    carriers = subcarrier_symbols(config, draw_data(config, n_symbols, rng))
    return synthesize(config, carriers, workers=workers), carriers


def generate_symbol(config: WaveformConfig, rng_seed) -> TimeDomainSymbol:
    """One time-domain symbol; bit-identical for identical (config, seed)."""
    x, _ = generate_symbols(config, 1, rng_seed)
    return TimeDomainSymbol(x[0], config)


def papr_db(samples) -> float:
    samples = np.asarray(samples)
    p = np.abs(samples) ** 2
    return float(10 * np.log10(p.max() / p.mean()))
