"""Monte Carlo estimation of the Bussgang coefficients (alpha, D, D~).

A point estimate draws ``n_symbols`` symbols in a fixed number of batches.
Each batch has its own seed ``derive_seed(seed, batch)`` and reduces to a
handful of sufficient statistics; these are summed in batch order, so the
pooled result does not depend on how batches are scheduled.

With the clipping error ``e = y - x`` and ``beta = alpha - 1`` the residual
is ``q = e - beta*x`` and

    sum|q|^2 = sum|e|^2 - |sum e x*|^2 / sum|x|^2

with the same identity holding bin-wise over the occupied subcarriers after
an N-point FFT. ``D`` and ``D~`` are those energies per sample over sigma2.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import os
import time
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.fft as sfft
from scipy.interpolate import PchipInterpolator

from .errors import GridRangeError, InvalidArgumentError, StorageError
from .nonlinearity import db_to_lin, lin_to_db
from .waveform import WaveformConfig, derive_seed, draw_data, subcarrier_symbols, synthesize

log = logging.getLogger(__name__)

CACHE_ENV = "PASNDR_CACHE_DIR"
MIN_SYMBOLS = 100
CHUNK_SYMBOLS = 2000
TABLE_COLUMNS = ("gamma_db", "alpha_re", "alpha_im", "d", "d_tilde", "stderr_alpha", "stderr_d")


@dataclass(frozen=True)
class CoefficientSample:
    gamma_db: float
    alpha: complex
    d: float
    d_tilde: float
    n_symbols: int
    stderr_alpha: float = 0.0
    stderr_d: float = 0.0

    @property
    def in_band_fraction(self) -> float:
        return self.d_tilde / self.d if self.d > 0 else float("nan")


def _n_batches(n_symbols):
    return 20 if n_symbols >= 2000 else 10


def _batch_sizes(n_symbols):
    nb = _n_batches(n_symbols)
    base, extra = divmod(n_symbols, nb)
    return [base + (1 if b < extra else 0) for b in range(nb)]


def _clip(x, p_max):
    mag = np.abs(x)
    clip = np.sqrt(p_max)
    over = mag >= clip
    e = np.zeros_like(x)
    e[over] = x[over] * (clip / mag[over] - 1.0)
    return e, over


def _batch_stats(config, gamma, n_symbols, rng, workers):
    """Sufficient statistics for one batch.

    Returns [sum|x|^2, sum e x*, sum|e|^2, sum_in|X|^2, sum_in E X*, sum_in|E|^2, n_samples];
    frequency-domain sums already carry the 1/N Parseval factor.
    """
    p_max = gamma * config.sigma2
    acc = np.zeros(7, dtype=complex)
    done = 0
    while done < n_symbols:
        m = min(CHUNK_SYMBOLS, n_symbols - done)
        done += m
        carriers = subcarrier_symbols(config, draw_data(config, m, rng))
        x = synthesize(config, carriers, workers=workers)
        e, over = _clip(x, p_max)
        acc[0] += np.vdot(x, x).real
        acc[6] += x.size
        # fft(x) on the occupied bins equals N * scale * carriers
        xf = carriers * (config.n * config.scale)
        acc[3] += np.vdot(xf, xf).real / config.n
        rows = np.flatnonzero(over.any(axis=1))
        if rows.size == 0:
            continue
        er = e[rows]
        acc[1] += np.vdot(x[rows], er)
        acc[2] += np.vdot(er, er).real
        ef = sfft.fft(er, axis=1, workers=workers)[:, config.bins]
        acc[4] += np.vdot(xf[rows], ef) / config.n
        acc[5] += np.vdot(ef, ef).real / config.n
    return acc


def _coefficients(stats, sigma2):
    sxx, sex, see, sxx_f, sex_f, see_f, count = stats
    sxx, see, sxx_f, see_f, count = (v.real for v in (sxx, see, sxx_f, see_f, count))
    beta = sex / sxx
    q_time = max(see - abs(sex) ** 2 / sxx, 0.0)
    q_band = see_f - 2 * (np.conj(beta) * sex_f).real + abs(beta) ** 2 * sxx_f
    q_band = min(max(q_band, 0.0), q_time)
    return 1.0 + beta, q_time / count / sigma2, q_band / count / sigma2


def estimate_point(config: WaveformConfig, gamma_db: float, n_symbols: int, seed, workers=None) -> CoefficientSample:
    """Pooled Bussgang estimate at one back-off, with batch-means standard errors."""
    if n_symbols < MIN_SYMBOLS:
        raise InvalidArgumentError(f"n_symbols must be >= {MIN_SYMBOLS}")
    gamma = float(db_to_lin(gamma_db))
    if not gamma > 0:
        raise InvalidArgumentError("gamma must be positive")
    per_batch = []
    for b, m in enumerate(_batch_sizes(n_symbols)):
        rng = np.random.default_rng(derive_seed(seed, b))
        per_batch.append(_batch_stats(config, gamma, m, rng, workers))
    per_batch = np.array(per_batch)
    alpha, d, d_tilde = _coefficients(per_batch.sum(axis=0), config.sigma2)
    batch = [_coefficients(s, config.sigma2) for s in per_batch]
    nb = len(batch)
    a_b = np.array([c[0] for c in batch])
    d_b = np.array([c[1] for c in batch])
    return CoefficientSample(
        gamma_db=float(gamma_db),
        alpha=complex(alpha),
        d=float(d),
        d_tilde=float(d_tilde),
        n_symbols=int(n_symbols),
        stderr_alpha=float(np.std(a_b, ddof=1) / np.sqrt(nb)),
        stderr_d=float(np.std(d_b, ddof=1) / np.sqrt(nb)),
    )


# --- tables --------------------------------------------------------------


@dataclass(frozen=True)
class WaveformId:
    kind: str
    n: int
    n_u: int
    constellation: str

    @classmethod
    def of(cls, config: WaveformConfig):
        return cls(config.kind.value, config.n, config.n_u, config.constellation.name)

    @property
    def order(self) -> int:
        return int("".join(ch for ch in self.constellation if ch.isdigit()))

    def slug(self):
        return f"{self.kind}-{self.constellation}-N{self.n}-NU{self.n_u}"


@dataclass(frozen=True)
class Provenance:
    seed: int
    n_symbols: int
    built_at: float = field(default=0.0, compare=False)


@dataclass(frozen=True, eq=False)
class CoefficientTable:
    """Immutable IBO-indexed coefficient table for one waveform.

    ``built_at`` in the provenance is informational and never serialized,
    so identical inputs produce identical files.
    """

    waveform_id: WaveformId
    gamma_grid_db: np.ndarray
    samples: tuple
    provenance: Provenance

    def __post_init__(self):
        grid = np.asarray(self.gamma_grid_db, dtype=float)
        if grid.ndim != 1 or grid.size == 0:
            raise InvalidArgumentError("gamma grid must be a non-empty vector")
        if np.any(np.diff(grid) <= 0):
            raise InvalidArgumentError("gamma grid must be strictly increasing")
        if len(self.samples) != grid.size:
            raise InvalidArgumentError("one sample per grid point is required")
        for g, s in zip(grid, self.samples):
            if s.gamma_db != g or s.d_tilde > s.d:
                raise InvalidArgumentError(f"inconsistent sample at {g} dB")
        grid.setflags(write=False)
        object.__setattr__(self, "gamma_grid_db", grid)
        object.__setattr__(self, "samples", tuple(self.samples))

    def column(self, name):
        if name == "alpha":
            return np.array([s.alpha for s in self.samples])
        return np.array([getattr(s, name) for s in self.samples], dtype=float)

    def __eq__(self, other):
        if not isinstance(other, CoefficientTable):
            return NotImplemented
        return (
            self.waveform_id == other.waveform_id
            and np.array_equal(self.gamma_grid_db, other.gamma_grid_db)
            and self.samples == other.samples
            and self.provenance == other.provenance
        )

    __hash__ = None

    def to_text(self) -> str:
        wid = self.waveform_id
        out = io.StringIO()
        out.write(f"# waveform={wid.kind}\n")
        out.write(f"# N={wid.n} N_U={wid.n_u}\n")
        out.write(f"# constellation={wid.constellation}\n")
        out.write(f"# seed={self.provenance.seed} n_symbols={self.provenance.n_symbols}\n")
        out.write(",".join(TABLE_COLUMNS) + "\n")
        for s in self.samples:
            row = (s.gamma_db, s.alpha.real, s.alpha.imag, s.d, s.d_tilde, s.stderr_alpha, s.stderr_d)
            out.write(",".join(repr(float(v)) for v in row) + "\n")
        return out.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "CoefficientTable":
        header = {}
        rows = []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    k, _, v = tok.partition("=")
                    header[k] = v
            elif line.startswith("gamma_db"):
                if tuple(c.strip() for c in line.split(",")) != TABLE_COLUMNS:
                    raise InvalidArgumentError(f"unexpected table columns: {line}")
            else:
                rows.append([float(v) for v in line.split(",")])
        try:
            wid = WaveformId(header["waveform"], int(header["N"]), int(header["N_U"]), header["constellation"])
            prov = Provenance(int(header["seed"]), int(header["n_symbols"]))
        except KeyError as exc:
            raise InvalidArgumentError(f"table header lacks {exc}") from None
        samples = [
            CoefficientSample(r[0], complex(r[1], r[2]), r[3], r[4], prov.n_symbols, r[5], r[6]) for r in rows
        ]
        return cls(wid, np.array([r[0] for r in rows]), samples, prov)

    @cached_property
    def _interpolants(self):
        g = self.gamma_grid_db
        if g.size < 2:
            return None
        return {
            name: PchipInterpolator(g, np.abs(self.column("alpha")) if name == "alpha" else self.column(name))
            for name in ("alpha", "d", "d_tilde", "stderr_alpha", "stderr_d")
        }

    def evaluate(self, gamma_db):
        """Vectorized interpolation; returns (|alpha|, d, d_tilde) arrays."""
        g = np.asarray(gamma_db, dtype=float)
        lo, hi = self.gamma_grid_db[0], self.gamma_grid_db[-1]
        if np.any((g < lo) | (g > hi)):
            raise GridRangeError(f"IBO outside the tabulated range [{lo}, {hi}] dB")
        f = self._interpolants
        if f is None:
            s = self.samples[0]
            shape = g.shape
            return np.full(shape, abs(s.alpha)), np.full(shape, s.d), np.full(shape, s.d_tilde)
        a = f["alpha"](g)
        d = np.maximum(f["d"](g), 0.0)
        dt = np.minimum(np.maximum(f["d_tilde"](g), 0.0), d)
        return a, d, dt


def cache_key(waveform_id: WaveformId, gamma_grid_db, n_symbols, seed) -> str:
    payload = json.dumps(
        {
            "waveform": [waveform_id.kind, waveform_id.n, waveform_id.n_u, waveform_id.constellation],
            "grid": [repr(float(g)) for g in gamma_grid_db],
            "n_symbols": int(n_symbols),
            "seed": int(seed),
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def default_cache_dir() -> Path:
    env = os.environ.get(CACHE_ENV)
    if env:
        return Path(env)
    return Path(os.environ.get("XDG_CACHE_HOME", Path.home() / ".cache")) / "pasndr"


def table_path(cache_dir, waveform_id, gamma_grid_db, n_symbols, seed) -> Path:
    key = cache_key(waveform_id, gamma_grid_db, n_symbols, seed)
    return Path(cache_dir) / f"{waveform_id.slug()}-{key}.csv"


def build_table(config: WaveformConfig, gamma_grid_db, n_symbols: int, seed: int, cache_dir=None, workers=None):
    """Estimate one coefficient sample per grid point and persist the table.

    ``cache_dir=None`` uses :func:`default_cache_dir`; ``False`` disables
    caching. A cached file with the same key is loaded instead of recomputed.
    Point ``i`` uses the seed ``derive_seed(seed, i)``.
    """
    grid = np.asarray(gamma_grid_db, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise InvalidArgumentError("gamma grid must be a non-empty vector")
    if np.any(np.diff(grid) <= 0):
        raise InvalidArgumentError("gamma grid must be strictly increasing")
    wid = WaveformId.of(config)
    path = None
    if cache_dir is not False:
        path = table_path(default_cache_dir() if cache_dir is None else cache_dir, wid, grid, n_symbols, seed)
        if path.is_file():
            log.info("loading cached table %s", path)
            return CoefficientTable.from_text(path.read_text())

    t0 = time.time()
    samples = []
    for i, g in enumerate(grid):
        samples.append(estimate_point(config, g, n_symbols, derive_seed(seed, i), workers=workers))
    table = CoefficientTable(wid, grid, samples, Provenance(int(seed), int(n_symbols), time.time()))
    log.info("built %s (%d points) in %.1f s", wid.slug(), grid.size, time.time() - t0)

    if path is not None:
        try:
            save_table(table, path)
        except OSError as exc:
            raise StorageError(f"could not write table cache {path}: {exc}", result=table) from exc
    return table


def save_table(table: CoefficientTable, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + f".tmp{os.getpid()}")
    tmp.write_text(table.to_text())
    os.replace(tmp, path)


def load_table(path) -> CoefficientTable:
    return CoefficientTable.from_text(Path(path).read_text())


def interpolate(table: CoefficientTable, gamma_db: float) -> CoefficientSample:
    """Monotone piecewise-cubic (PCHIP) interpolation of the table.

    |alpha|, D and D~ are interpolated independently; D~ is clamped to
    [0, D]. Grid points return the stored sample itself.
    """
    grid = table.gamma_grid_db
    hit = np.flatnonzero(grid == gamma_db)
    if hit.size:
        return table.samples[hit[0]]
    a, d, dt = (float(v) for v in table.evaluate(gamma_db))
    f = table._interpolants
    return CoefficientSample(
        gamma_db=float(gamma_db),
        alpha=complex(a),
        d=d,
        d_tilde=dt,
        n_symbols=table.provenance.n_symbols,
        stderr_alpha=float(f["stderr_alpha"](gamma_db)),
        stderr_d=float(f["stderr_d"](gamma_db)),
    )


# --- end-to-end link -----------------------------------------------------


@dataclass(frozen=True)
class LinkMeasurement:
    sndr_db: float
    half_width_db: float
    n_symbols: int
    band: str

    @property
    def sigma_db(self) -> float:
        # the 95 % percentile half-width spans about 1.96 sigma
        return self.half_width_db / 1.96


def validate_link(
    config: WaveformConfig,
    gamma_db: float,
    snr_sat_db: float,
    n_symbols: int,
    seed,
    band="inband",
    channel_gain=1.0,
    n_boot=200,
    workers=None,
) -> LinkMeasurement:
    """Simulate PA -> flat channel -> AWGN and measure the received SNDR.

    Noise is sized from the occupied-band SNR_SAT: per-sample variance
    ``channel_gain * p_max / ((N_U/N) * snr_sat)``. Since only bin energies are
    used, noise is drawn directly in the frequency domain (white noise of
    per-sample variance v gives i.i.d. bins of variance N*v).

    The wanted component is found by a least-squares fit of the received
    occupied bins onto the transmitted ones. ``band='inband'`` counts
    distortion and noise on the occupied bins only; ``band='time'`` counts
    the PA distortion over all N bins plus the occupied-band noise. The
    returned half-width is a 95 % symbol-bootstrap interval.
    """
    band = str(getattr(band, "value", band)).lower()
    if band not in ("inband", "time"):
        raise InvalidArgumentError(f"unknown band {band!r}")
    if n_symbols < MIN_SYMBOLS:
        raise InvalidArgumentError(f"n_symbols must be >= {MIN_SYMBOLS}")
    gamma = float(db_to_lin(gamma_db))
    p_max = gamma * config.sigma2
    snr_sat = float(db_to_lin(snr_sat_db))
    noise_var = channel_gain * p_max / ((config.n_u / config.n) * snr_sat)
    h = np.sqrt(channel_gain)
    n = config.n

    # per-symbol sums: a=sum Z X*, b=sum|X|^2, c=sum|Z|^2, f=sum_all|hY|^2, g=sum hY X*, w=sum|W|^2
    parts = []
    for b, m in enumerate(_batch_sizes(n_symbols)):
        rng = np.random.default_rng(derive_seed(seed, b))
        done = 0
        while done < m:
            k = min(CHUNK_SYMBOLS, m - done)
            done += k
            carriers = subcarrier_symbols(config, draw_data(config, k, rng))
            x = synthesize(config, carriers, workers=workers)
            e, _ = _clip(x, p_max)
            hy = sfft.fft(x + e, axis=1, workers=workers) * h
            xin = carriers * (n * config.scale)
            w = np.sqrt(n * noise_var / 2) * (rng.standard_normal(xin.shape) + 1j * rng.standard_normal(xin.shape))
            hyin = hy[:, config.bins]
            z = hyin + w
            parts.append(
                np.column_stack(
                    [
                        np.sum(z * xin.conj(), axis=1),
                        np.sum(np.abs(xin) ** 2, axis=1),
                        np.sum(np.abs(z) ** 2, axis=1),
                        np.sum(np.abs(hy) ** 2, axis=1),
                        np.sum(hyin * xin.conj(), axis=1),
                        np.sum(np.abs(w) ** 2, axis=1),
                    ]
                )
            )
    per_symbol = np.concatenate(parts)

    def sndr_of(s):
        a, bb, c, f, g, w = s
        bb, c, f, w = bb.real, c.real, f.real, w.real
        gain = a / bb
        wanted = abs(gain) ** 2 * bb
        if band == "inband":
            err = c - abs(a) ** 2 / bb
        else:
            err = f - 2 * (np.conj(gain) * g).real + abs(gain) ** 2 * bb + w
        return 10 * np.log10(wanted / err)

    value = sndr_of(per_symbol.sum(axis=0))
    boot_rng = np.random.default_rng(derive_seed(seed, 1_000_000))
    count = per_symbol.shape[0]
    boots = np.array(
        [sndr_of(per_symbol[boot_rng.integers(0, count, count)].sum(axis=0)) for _ in range(n_boot)]
    )
    lo, hi = np.percentile(boots, [2.5, 97.5])
    return LinkMeasurement(float(value), float((hi - lo) / 2), int(n_symbols), band)

