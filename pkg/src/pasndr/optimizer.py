"""SNDR-maximizing input back-off.

Closed-form OFDM uses Newton-Raphson on the derivative of SNDR(dB) with
respect to IBO(dB); tabulated coefficients use a grid scan followed by
golden-section refinement of the interpolated objective.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize as sopt

from .errors import BracketError, InvalidArgumentError, OptimizationError
from .nonlinearity import IN_BAND_FRACTION, _scaled_tail, db_to_lin
from .sndr import Band, ClosedFormOFDM, TableSource, as_source, sndr_db
from .waveform import WaveformKind

SEARCH_DB = (-30.0, 30.0)
VERIFY_STEP_DB = 0.01
_INV_PHI = (math.sqrt(5) - 1) / 2
_DB = 10.0 / math.log(10.0)


class Method(str, enum.Enum):
    NEWTON = "newton"
    BRACKETED = "bracketed"


@dataclass(frozen=True)
class OptimizationResult:
    gamma_opt_db: float
    sndr_opt_db: float
    method: Method
    iterations: int
    converged: bool
    diagnostics: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float
    rms_residual: float

    def __call__(self, x):
        return self.slope * np.asarray(x, dtype=float) + self.intercept


# --- closed-form OFDM derivatives ----------------------------------------


def _ofdm_terms(gamma):
    """alpha, D and their first two derivatives in linear gamma.

    Written in terms of u = exp(-gamma) and the scaled tail s so that the
    tiny values at large back-off keep full relative precision.
    """
    u = math.exp(-gamma)
    s = float(_scaled_tail(gamma))
    a = 1.0 - u * (1.0 - s)
    a1 = u * (0.5 + s / (2 * gamma))
    a2 = -u * (0.5 + 1 / (4 * gamma) + s / (4 * gamma**2))
    d = u * (1.0 - 2.0 * s - u * (1.0 - s) ** 2)
    d1 = u * (u * (1.0 - s) - a * s / gamma)
    d2 = u * (-u * (1.0 - s) + a * (1 / (2 * gamma) + s / (2 * gamma**2)) - 2 * u * (0.5 + s / (2 * gamma)) ** 2)
    return a, a1, a2, max(d, 0.0), d1, d2


def ofdm_sndr_derivatives(gamma_db, snr_sat_db, band=Band.INBAND):
    """SNDR(dB) and its first and second derivatives with respect to IBO(dB)."""
    c = IN_BAND_FRACTION if Band.parse(band) is Band.INBAND else 1.0
    g = float(db_to_lin(gamma_db))
    snr = float(db_to_lin(snr_sat_db))
    a, a1, a2, d, d1, d2 = _ofdm_terms(g)
    den = c * d + g / snr
    num1 = c * d1 + 1.0 / snr
    value = _DB * (2 * math.log(a) - math.log(den))
    # derivative of ln SNDR in linear gamma
    h = 2 * a1 / a - num1 / den
    h1 = 2 * (a2 / a - (a1 / a) ** 2) - (c * d2 * den - num1**2) / den**2
    k = math.log(10.0) / 10.0
    first = g * h
    second = k * (g * h + g * g * h1)
    return value, first, second


def _golden_max(f, lo, hi, xtol):
    """Golden-section search for the maximum of a unimodal f on [lo, hi]."""
    a, b = lo, hi
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    it = 0
    while b - a > xtol:
        it += 1
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    x = c if fc >= fd else d
    # endpoints are candidates too: the maximum may sit on the bracket edge
    best = max((f(a), a), (f(x), x), (f(b), b), key=lambda t: (t[0], -t[1]))
    return best[1], best[0], it


def optimize_ofdm(snr_sat_db, band=Band.INBAND, tol=1e-9, max_iter=50) -> OptimizationResult:
    """Maximize closed-form OFDM SNDR over IBO.

    Newton-Raphson on d SNDR(dB) / d IBO(dB), started from a 0.5 dB scan
    of the search interval. Falls back to golden-section search when Newton
    leaves the interval, meets a non-concave point or stalls.
    """
    if not tol > 0:
        raise InvalidArgumentError("tol must be positive")
    snr_sat_db = float(snr_sat_db)
    if not np.isfinite(snr_sat_db):
        raise InvalidArgumentError("snr_sat must be positive and finite")
    band = Band.parse(band)
    src = ClosedFormOFDM()
    lo, hi = SEARCH_DB
    coarse = np.arange(lo, hi + 0.25, 0.5)
    vals = sndr_db(src, coarse, snr_sat_db, band)
    i0 = int(np.argmax(vals))
    u = float(coarse[i0])
    method, iterations, converged = Method.NEWTON, 0, False
    for iterations in range(1, max_iter + 1):
        _, f1, f2 = ofdm_sndr_derivatives(u, snr_sat_db, band)
        if abs(f1) < tol:
            converged = True
            break
        if not f2 < 0:
            break
        step = max(-2.0, min(2.0, -f1 / f2))
        u += step
        if not lo <= u <= hi:
            break
    else:
        iterations = max_iter
    if converged:
        _, f1, _ = ofdm_sndr_derivatives(u, snr_sat_db, band)
        converged = abs(f1) < tol
    if not converged:
        method = Method.BRACKETED
        a = float(coarse[max(i0 - 1, 0)])
        b = float(coarse[min(i0 + 1, coarse.size - 1)])
        u, _, iterations = _golden_max(lambda t: float(sndr_db(src, t, snr_sat_db, band)), a, b, 1e-9)
        try:
            u = sopt.brentq(lambda t: ofdm_sndr_derivatives(t, snr_sat_db, band)[1], a, b, xtol=1e-12)
        except ValueError:
            pass
        f1 = ofdm_sndr_derivatives(u, snr_sat_db, band)[1]
        converged = abs(f1) < tol or (u in (lo, hi))
        if not converged:
            raise OptimizationError(
                "OFDM optimization failed", diagnostics={"gamma_db": u, "derivative": f1, "snr_sat_db": snr_sat_db}
            )
    best = float(sndr_db(src, u, snr_sat_db, band))
    grid = np.arange(lo, hi + VERIFY_STEP_DB / 2, VERIFY_STEP_DB)
    grid_best = float(np.max(sndr_db(src, grid, snr_sat_db, band)))
    if best < grid_best - 1e-6:
        raise OptimizationError(
            "optimum worse than verification grid",
            diagnostics={"gamma_db": u, "sndr_db": best, "grid_best_db": grid_best, "snr_sat_db": snr_sat_db},
        )
    return OptimizationResult(u, best, method, iterations, converged, {"derivative": f1})


def optimize_table(table, snr_sat_db, band=Band.INBAND, xtol=1e-4) -> OptimizationResult:
    """Maximize SNDR built from a tabulated (Monte Carlo) coefficient source.

    The table grid is scanned first; exact ties go to the smallest IBO.
    Raises :class:`BracketError` when the scan peaks on a grid endpoint.
    """
    src = as_source(table)
    if not isinstance(src, TableSource):
        raise InvalidArgumentError("optimize_table needs a coefficient table")
    band = Band.parse(band)
    grid = src.grid_db
    if grid.size < 3:
        raise BracketError("table needs at least three grid points")
    vals = sndr_db(src, grid, snr_sat_db, band)
    i = int(np.argmax(vals))
    if i == 0 or i == grid.size - 1:
        raise BracketError(
            f"SNDR maximum at grid endpoint {grid[i]} dB for snr_sat={snr_sat_db} dB; extend the grid",
            diagnostics={"gamma_db": float(grid[i]), "snr_sat_db": float(snr_sat_db)},
        )
    u, best, it = _golden_max(lambda t: float(sndr_db(src, t, snr_sat_db, band)), grid[i - 1], grid[i + 1], xtol)
    if vals[i] > best:
        u, best = float(grid[i]), float(vals[i])
    return OptimizationResult(float(u), float(best), Method.BRACKETED, it, True)


def optimize(source, snr_sat_db, band=Band.INBAND) -> OptimizationResult:
    src = as_source(source)
    if isinstance(src, ClosedFormOFDM):
        return optimize_ofdm(snr_sat_db, band)
    return optimize_table(src.table, snr_sat_db, band)


@dataclass(frozen=True)
class SweepPoint:
    snr_sat_db: float
    gamma_opt_db: float
    sndr_opt_db: float
    result: OptimizationResult = field(compare=False, repr=False)


def optimal_sndr_sweep(source, snr_sat_grid_db, band=Band.INBAND):
    """One optimization per link quality, in grid order."""
    grid = np.atleast_1d(np.asarray(snr_sat_grid_db, dtype=float))
    if grid.size == 0:
        raise InvalidArgumentError("empty snr_sat grid")
    out = []
    for s in grid:
        r = optimize(source, s, band)
        out.append(SweepPoint(float(s), r.gamma_opt_db, r.sndr_opt_db, r))
    return out


def fit_linear(points) -> LinearFit:
    """Ordinary least-squares line through (x, y) pairs, both in dB."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise InvalidArgumentError("points must be a sequence of (x, y) pairs")
    x, y = pts[:, 0], pts[:, 1]
    if np.unique(x).size < 2:
        raise InvalidArgumentError("need at least two distinct x values")
    A = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + intercept)
    return LinearFit(float(slope), float(intercept), float(np.sqrt(np.mean(resid**2))))


_REFERENCE_IBO_DB = {
    (WaveformKind.SCFDMA, 4): -10.0,
    (WaveformKind.SCFDMA, 64): 2.0,
}


def reference_ibo(kind, M=None) -> float:
    """Fixed IBO (dB) matching standard transmitter EVM limits."""
    try:
        kind = WaveformKind(kind)
    except ValueError:
        raise InvalidArgumentError(f"unknown waveform kind {kind!r}") from None
    if kind is WaveformKind.OFDM:
        return 6.0
    try:
        return _REFERENCE_IBO_DB[(kind, int(M))]
    except (KeyError, TypeError):
        raise InvalidArgumentError(f"no reference IBO for {kind.value} with M={M}") from None


def tangency_snr_sat(source, gamma_ref_db, band=Band.INBAND, snr_range_db=(0.0, 40.0)):
    """Link quality at which the optimal IBO equals ``gamma_ref_db``, or None."""

    def gap(s):
        return optimize(source, s, band).gamma_opt_db - gamma_ref_db

    lo, hi = snr_range_db
    try:
        g_lo, g_hi = gap(lo), gap(hi)
    except BracketError:
        return None
    if g_lo * g_hi > 0:
        return None
    return float(sopt.brentq(gap, lo, hi, xtol=1e-6))
