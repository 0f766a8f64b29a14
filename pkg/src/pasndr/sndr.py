"""Receiver SNDR from Bussgang coefficients, PA operating point and link.

Quantities cross the public interface in dB where named ``*_db`` and are
linear otherwise.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .montecarlo import CoefficientTable
from .nonlinearity import alpha_ofdm, d_ofdm, d_tilde_ofdm, db_to_lin, lin_to_db


class Band(str, enum.Enum):
    TIME = "time"
    INBAND = "inband"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower().replace("-", "").replace("_", ""))
        except ValueError:
            raise InvalidArgumentError(f"unknown band {value!r}; expected 'time' or 'inband'") from None


def aggregate_channel(taps=None, *, tap_powers=None) -> float:
    """Total channel power gain: sum of per-tap mean power gains.

    Pass either complex ``taps`` (one realization) or their mean ``tap_powers``.
    """
    if (taps is None) == (tap_powers is None):
        raise InvalidArgumentError("pass exactly one of taps or tap_powers")
    if taps is not None:
        arr = np.abs(np.atleast_1d(np.asarray(taps, dtype=complex))) ** 2
    else:
        arr = np.atleast_1d(np.asarray(tap_powers, dtype=float))
        if np.any(arr < 0):
            raise InvalidArgumentError("tap powers must be non-negative")
    if arr.size == 0:
        raise InvalidArgumentError("channel needs at least one tap")
    return float(arr.sum())


@dataclass(frozen=True)
class LinkModel:
    channel_gain: float
    noise_power: float
    n: int
    n_u: int
    p_max: float

    def __post_init__(self):
        if self.channel_gain < 0 or not self.noise_power > 0 or not self.p_max > 0:
            raise InvalidArgumentError("channel_gain >= 0, noise_power > 0 and p_max > 0 required")
        if not 0 < self.n_u <= self.n:
            raise InvalidArgumentError("0 < n_u <= n required")


def snr_sat(link: LinkModel, legacy=False) -> float:
    """Saturation SNR (linear).

    By default only the noise falling on the occupied N_U/N share of the
    band is counted; ``legacy=True`` uses the full-band noise instead.
    """
    share = 1.0 if legacy else link.n_u / link.n
    return link.channel_gain * link.p_max / (share * link.noise_power)


def sndr_model(alpha, d_coeff, gamma, snr_sat):
    """``|alpha|^2 / (d_coeff + gamma/snr_sat)``, linear, elementwise."""
    a2 = np.abs(np.asarray(alpha)) ** 2
    with np.errstate(divide="ignore"):
        val = a2 / (np.asarray(d_coeff, dtype=float) + np.asarray(gamma, dtype=float) / snr_sat)
    return val if np.ndim(val) else float(val)


@dataclass(frozen=True)
class SndrQuery:
    alpha: complex
    d_coeff: float
    gamma: float
    snr_sat: float

    def __post_init__(self):
        if self.d_coeff < 0 or not self.gamma > 0 or not self.snr_sat > 0:
            raise InvalidArgumentError("d_coeff >= 0, gamma > 0 and snr_sat > 0 required")

    def evaluate(self) -> float:
        return sndr_model(self.alpha, self.d_coeff, self.gamma, self.snr_sat)


# --- coefficient sources -----------------------------------------------


class ClosedFormOFDM:
    """Analytic OFDM coefficients (complex-Gaussian PA input)."""

    name = "ofdm"
    domain_db = (-np.inf, np.inf)

    def coefficients(self, gamma_db):
        g = db_to_lin(gamma_db)
        return alpha_ofdm(g), d_ofdm(g), d_tilde_ofdm(g)


class TableSource:
    """Coefficients interpolated from a Monte Carlo table."""

    def __init__(self, table: CoefficientTable):
        self.table = table
        self.name = table.waveform_id.slug()
        self.domain_db = (float(table.gamma_grid_db[0]), float(table.gamma_grid_db[-1]))

    @property
    def grid_db(self):
        return self.table.gamma_grid_db

    def coefficients(self, gamma_db):
        return self.table.evaluate(gamma_db)


def as_source(obj):
    if isinstance(obj, CoefficientTable):
        return TableSource(obj)
    if hasattr(obj, "coefficients"):
        return obj
    raise InvalidArgumentError(f"not a coefficient source: {obj!r}")


def sndr_db(source, gamma_db, snr_sat_db, band=Band.INBAND):
    """SNDR in dB for arrays of back-off values at one link quality."""
    band = Band.parse(band)
    a, d, dt = as_source(source).coefficients(gamma_db)
    val = sndr_model(a, dt if band is Band.INBAND else d, db_to_lin(gamma_db), db_to_lin(snr_sat_db))
    return lin_to_db(val)


def sndr_curve(source, snr_sat_db, gamma_grid_db, band=Band.INBAND):
    """Pairs ``(gamma_db, sndr_db)`` over a back-off grid, shape (n, 2)."""
    grid = np.asarray(gamma_grid_db, dtype=float)
    return np.column_stack([grid, sndr_db(source, grid, snr_sat_db, band)])
