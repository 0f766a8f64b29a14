"""Soft-limiter PA, Bussgang decomposition and closed-form OFDM coefficients.

The closed forms assume a complex-Gaussian PA input (Rayleigh amplitude).
They are evaluated through the scaled complementary error function
``erfcx(x) = exp(x^2) erfc(x)`` from ``scipy.special`` (S. G. Johnson's
Faddeeva package, accurate to a few ulp), which keeps ``sqrt(gamma) *
erfc(sqrt(gamma))`` finite and cancellation-free for large back-off.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .errors import DegenerateInputError, InvalidArgumentError, NumericError

IN_BAND_FRACTION = 2.0 / 3.0
_QUAD_TOL = 1e-12


def db_to_lin(x_db):
    return 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)


def lin_to_db(x):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class PAOperatingPoint:
    """Saturation power and input back-off, tied by ``gamma = p_max / sigma2``."""

    p_max: float
    gamma: float

    def __post_init__(self):
        if not self.p_max > 0 or not self.gamma > 0:
            raise InvalidArgumentError("p_max and gamma must be positive")

    @classmethod
    def from_ibo(cls, gamma, sigma2):
        if not sigma2 > 0:
            raise InvalidArgumentError("sigma2 must be positive")
        return cls(gamma * sigma2, gamma)

    @classmethod
    def from_ibo_db(cls, gamma_db, sigma2):
        return cls.from_ibo(float(db_to_lin(gamma_db)), sigma2)

    @classmethod
    def from_p_max(cls, p_max, sigma2):
        if not sigma2 > 0:
            raise InvalidArgumentError("sigma2 must be positive")
        return cls(p_max, p_max / sigma2)

    @property
    def sigma2(self) -> float:
        return self.p_max / self.gamma

    @property
    def gamma_db(self) -> float:
        return float(lin_to_db(self.gamma))


@dataclass(frozen=True)
class BussgangEstimate:
    alpha: complex
    distortion_power: float
    residual_correlation: float


def soft_limit(samples, p_max) -> np.ndarray:
    """Clip magnitudes to ``sqrt(p_max)`` keeping the phase.

    ``p_max = inf`` is accepted and means an ideal linear PA.
    """
    if not p_max > 0:
        raise InvalidArgumentError(f"p_max must be positive, got {p_max}")
    x = np.asarray(samples, dtype=complex)
    if np.isinf(p_max):
        return x.copy()
    clip = np.sqrt(p_max)
    mag = np.abs(x)
    over = mag >= clip
    y = x.copy()
    y[over] = x[over] * (clip / mag[over])
    return y


def _check_gamma(gamma):
    g = np.asarray(gamma, dtype=float)
    if np.any(~(g > 0)):
        raise InvalidArgumentError("gamma must be positive")
    return g


def _scaled_tail(g):
    """0.5 * sqrt(pi*g) * erfcx(sqrt(g)); tends to 1/2 for large g."""
    with np.errstate(invalid="ignore"):
        s = 0.5 * np.sqrt(np.pi * g) * special.erfcx(np.sqrt(g))
    return np.where(np.isinf(g), 0.5, s)


def alpha_ofdm(gamma):
    """Bussgang gain of a soft limiter driven by a complex-Gaussian signal.

    Equals ``1 - exp(-g) + 0.5*sqrt(pi*g)*erfc(sqrt(g))``, written as
    ``1 - exp(-g) * (1 - s)`` with ``s`` the scaled tail term.
    """
    g = _check_gamma(gamma)
    a = 1.0 - np.exp(-g) * (1.0 - _scaled_tail(g))
    return a if a.ndim else float(a)


def d_ofdm(gamma):
    """Distortion power over input power, ``1 - exp(-g) - alpha_ofdm(g)**2``.

    Expanded as ``u * (1 - 2s - u*(1-s)**2)`` with ``u = exp(-g)`` so the
    result stays accurate (and non-negative) when it is many orders of
    magnitude below one.
    """
    g = _check_gamma(gamma)
    u = np.exp(-g)
    s = _scaled_tail(g)
    d = u * (1.0 - 2.0 * s - u * (1.0 - s) ** 2)
    d = np.maximum(d, 0.0)
    return d if d.ndim else float(d)


def d_tilde_ofdm(gamma):
    """In-band share of the OFDM distortion coefficient (fixed 2/3 of it)."""
    return IN_BAND_FRACTION * d_ofdm(gamma)


def output_power_ofdm(gamma, sigma2):
    """Mean soft-limiter output power for a complex-Gaussian input."""
    g = _check_gamma(gamma)
    if not np.all(np.asarray(sigma2) > 0):
        raise InvalidArgumentError("sigma2 must be positive")
    p = sigma2 * -np.expm1(-g)
    return p if np.ndim(p) else float(p)


def estimate_bussgang(x, y) -> BussgangEstimate:
    """Least-squares split ``y = alpha*x + q`` with ``q`` uncorrelated to ``x``.

    Works on the clipping error ``e = y - x`` so that an undistorted input
    gives exactly ``alpha = 1`` and zero distortion.
    """
    x = np.asarray(x, dtype=complex).ravel()
    y = np.asarray(y, dtype=complex).ravel()
    if x.shape != y.shape or x.size < 2:
        raise InvalidArgumentError("x and y must have equal length >= 2")
    pxx = np.vdot(x, x).real
    if pxx == 0:
        raise DegenerateInputError("input sequence has zero power")
    e = y - x
    beta = np.vdot(x, e) / pxx
    q = e - beta * x
    return BussgangEstimate(
        alpha=complex(1.0 + beta),
        distortion_power=float(np.vdot(q, q).real / q.size),
        residual_correlation=float(abs(np.vdot(x, q)) / pxx),
    )


# --- quadrature oracles -------------------------------------------------


class PointMass:
    """Degenerate amplitude law: the envelope always equals ``location``."""

    def __init__(self, location):
        self.location = float(location)


def rayleigh_pdf(sigma2):
    """Amplitude density of a complex-Gaussian signal of power ``sigma2``."""

    def pdf(z):
        return 2.0 * z / sigma2 * np.exp(-z * z / sigma2)

    # beyond this the tail mass exp(-z^2/sigma2) is below 1e-16
    pdf.upper = float(np.sqrt(sigma2 * 16 * np.log(10)))
    return pdf


def _quad(f, a, b):
    if b <= a:
        return 0.0
    val, err = integrate.quad(f, a, b, epsabs=_QUAD_TOL, epsrel=_QUAD_TOL, limit=200)
    if not np.isfinite(val) or err > 1e-9:
        raise NumericError(f"quadrature did not converge on [{a}, {b}] (err={err:g})")
    return val


def _expect(pdf, p_max, g_lin, g_sat):
    """E[g(z)] with g = g_lin below sqrt(p_max) and g_sat above."""
    clip = np.sqrt(p_max)
    if isinstance(pdf, PointMass):
        z = pdf.location
        return g_lin(z) if z < clip else g_sat(z)
    upper = getattr(pdf, "upper", np.inf)
    total = _quad(pdf, 0.0, upper)
    if abs(total - 1.0) > 1e-6:
        raise InvalidArgumentError(f"amplitude pdf integrates to {total}, not 1")
    lo = _quad(lambda z: g_lin(z) * pdf(z), 0.0, min(clip, upper))
    hi = _quad(lambda z: g_sat(z) * pdf(z), clip, upper) if clip < upper else 0.0
    return lo + hi


def alpha_by_pdf_integral(pdf, p_max, sigma2) -> float:
    """Soft-limiter gain ``E[|y||x|] / sigma2`` by adaptive quadrature.

    Independent check of :func:`alpha_ofdm`; ``pdf`` is an amplitude density
    (callable, optionally with an ``upper`` truncation attribute) or a
    :class:`PointMass`.
    """
    if not p_max > 0 or not sigma2 > 0:
        raise InvalidArgumentError("p_max and sigma2 must be positive")
    clip = np.sqrt(p_max)
    return _expect(pdf, p_max, lambda z: z * z, lambda z: clip * z) / sigma2


def output_power_by_pdf_integral(pdf, p_max) -> float:
    """Soft-limiter output power ``E[|y|^2]`` by adaptive quadrature."""
    if not p_max > 0:
        raise InvalidArgumentError("p_max must be positive")
    return _expect(pdf, p_max, lambda z: z * z, lambda z: p_max)


def d_by_pdf_integral(pdf, p_max, sigma2) -> float:
    """Distortion coefficient ``(E|y|^2 - alpha^2 sigma2) / sigma2`` by quadrature."""
    a = alpha_by_pdf_integral(pdf, p_max, sigma2)
    return output_power_by_pdf_integral(pdf, p_max) / sigma2 - a * a
