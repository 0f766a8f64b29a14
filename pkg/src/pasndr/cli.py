"""Command-line experiment runner.

Subcommands ``coeffs``, ``sndr-map``, ``optimize`` and ``validate`` write
CSV datasets into the output directory. Settings come from built-in
defaults, then an optional key-value config file (``--config``), then
command-line flags, each overriding the previous.

Config file format: one ``key = value`` per line, ``#`` starts a comment.
Keys mirror the long flags with dashes turned into underscores, e.g.::

    waveform = ofdm:64, scfdma:4, scfdma:64
    n = 512
    n_u = 24
    gamma_grid = -20:20:0.25
    snrsat_grid = 0:40:1
    band = both
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import BracketError, InvalidArgumentError, NumericError, PasndrError, StorageError
from .montecarlo import build_table, interpolate, save_table, validate_link
from .nonlinearity import db_to_lin, lin_to_db
from .optimizer import fit_linear, optimize, reference_ibo
from .sndr import Band, ClosedFormOFDM, TableSource, sndr_db, sndr_model
from .waveform import WaveformConfig, WaveformKind, derive_seed, make_constellation

log = logging.getLogger("pasndr")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3
EXIT_VALIDATION = 4
EXIT_STORAGE = 5

VALIDATE_TOL_DB = 0.5
MIN_CONFIDENT_SYMBOLS = 1000

FIGURE_FILES = {
    "ALPHA_D": "fig1_alpha_D.csv",
    "SNDR_CONTOUR": "fig2_sndr_map.csv",
    "OPT_IBO": "fig3_opt_ibo.csv",
    "MAX_SNDR": "fig4_max_sndr.csv",
}


class UsageError(PasndrError):
    pass


# --- configuration ---------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    waveforms: tuple = (("ofdm", 64), ("scfdma", 4), ("scfdma", 64))
    n: int = 512
    n_u: int = 24
    gamma_grid_db: tuple = (-20.0, 20.0, 0.25)
    snr_sat_grid_db: tuple = (0.0, 40.0, 1.0)
    n_symbols: int = 20000
    master_seed: int = 1
    output_dir: str = "results"
    band: str = "both"
    cache_dir: str | None = None
    ofdm_model: str = "closed"
    validate_gamma_db: tuple = (-4.0, 0.0, 4.0)
    validate_snrsat_db: tuple = (10.0, 20.0, 30.0)
    measure_band: str | None = None
    legacy_snr_sat: bool = False

    def __post_init__(self):
        for name in ("gamma_grid_db", "snr_sat_grid_db"):
            lo, hi, step = getattr(self, name)
            if not (lo < hi and step > 0):
                raise UsageError(f"{name}: need min < max and step > 0, got {lo}:{hi}:{step}")
        if self.n <= 0 or self.n_u <= 0 or self.n_u > self.n:
            raise UsageError(f"n_u: need 0 < n_u <= n, got n={self.n} n_u={self.n_u}")
        if self.band not in ("time", "inband", "both"):
            raise UsageError(f"band: expected time, inband or both, got {self.band!r}")
        if self.measure_band not in (None, "time", "inband"):
            raise UsageError(f"measure_band: expected time or inband, got {self.measure_band!r}")
        if self.ofdm_model not in ("closed", "table"):
            raise UsageError(f"ofdm_model: expected closed or table, got {self.ofdm_model!r}")
        if self.n_symbols < 100:
            raise UsageError("n_symbols: must be >= 100")
        if not self.waveforms:
            raise UsageError("waveform: at least one waveform is required")
        for kind, m in self.waveforms:
            if kind not in ("ofdm", "scfdma"):
                raise UsageError(f"waveform: unknown kind {kind!r}")
            try:
                make_constellation("qam", m)
            except InvalidArgumentError as exc:
                raise UsageError(f"waveform: {exc}") from None

    @property
    def bands(self):
        return [Band.TIME, Band.INBAND] if self.band == "both" else [Band.parse(self.band)]

    def gamma_grid(self):
        return _grid(self.gamma_grid_db)

    def snr_sat_grid(self):
        return _grid(self.snr_sat_grid_db)

    def waveform_config(self, kind, m) -> WaveformConfig:
        return WaveformConfig.localized(kind, self.n, self.n_u, ("qam", m))

    def snr_offset_db(self):
        """Shift applied to the snr_sat axis when it is given in the full-band sense."""
        return float(lin_to_db(self.n / self.n_u)) if self.legacy_snr_sat else 0.0

    def digest(self) -> str:
        d = dataclasses.asdict(self)
        for k in ("output_dir", "cache_dir"):
            d.pop(k)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def _grid(spec):
    lo, hi, step = spec
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return np.round(lo + step * np.arange(count), 10)


def _parse_triple(key, text):
    try:
        parts = [float(p) for p in str(text).split(":")]
    except ValueError:
        raise UsageError(f"{key}: expected min:max:step, got {text!r}") from None
    if len(parts) != 3:
        raise UsageError(f"{key}: expected min:max:step, got {text!r}")
    return tuple(parts)


def _parse_list(key, text):
    try:
        return tuple(float(p) for p in str(text).replace(",", " ").split())
    except ValueError:
        raise UsageError(f"{key}: expected a list of numbers, got {text!r}") from None


def _parse_waveforms(key, items):
    out = []
    for item in items:
        for tok in str(item).replace(",", " ").split():
            kind, _, m = tok.partition(":")
            kind = kind.lower().replace("-", "")
            if kind not in ("ofdm", "scfdma") or not m.isdigit():
                raise UsageError(f"{key}: expected kind:M such as scfdma:4, got {tok!r}")
            out.append((kind, int(m)))
    return tuple(out)


def _parse_bool(key, text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"{key}: expected a boolean, got {text!r}")


def _parse_int(key, text):
    try:
        return int(str(text))
    except ValueError:
        raise UsageError(f"{key}: expected an integer, got {text!r}") from None


def _lower(key, text):
    return str(text).strip().lower().replace("-", "")


# config key -> (dataclass field, parser)
_KEYS = {
    "waveform": ("waveforms", lambda k, v: _parse_waveforms(k, [v])),
    "n": ("n", _parse_int),
    "n_u": ("n_u", _parse_int),
    "gamma_grid": ("gamma_grid_db", _parse_triple),
    "snrsat_grid": ("snr_sat_grid_db", _parse_triple),
    "n_symbols": ("n_symbols", _parse_int),
    "seed": ("master_seed", _parse_int),
    "out_dir": ("output_dir", lambda k, v: str(v)),
    "band": ("band", _lower),
    "cache_dir": ("cache_dir", lambda k, v: str(v)),
    "ofdm_model": ("ofdm_model", _lower),
    "validate_gamma": ("validate_gamma_db", _parse_list),
    "validate_snrsat": ("validate_snrsat_db", _parse_list),
    "measure_band": ("measure_band", _lower),
    "legacy_snr_sat": ("legacy_snr_sat", _parse_bool),
}


def read_config_file(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from None
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        if key not in _KEYS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        fname, parser = _KEYS[key]
        values[fname] = parser(key, value.strip())
    return values


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key-value config file")
    common.add_argument("--seed", help="master seed")
    common.add_argument("--n", help="IFFT size N")
    common.add_argument("--n-u", dest="n_u", help="occupied subcarriers N_U")
    common.add_argument("--waveform", action="append", help="kind:M, repeatable (e.g. scfdma:4)")
    common.add_argument("--band", help="time, inband or both")
    common.add_argument("--out-dir", dest="out_dir", help="output directory")
    common.add_argument("--n-symbols", dest="n_symbols", help="Monte Carlo symbols per IBO point")
    common.add_argument("--gamma-grid", dest="gamma_grid", help="IBO grid min:max:step in dB")
    common.add_argument("--snrsat-grid", dest="snrsat_grid", help="SNR_SAT grid min:max:step in dB")
    common.add_argument("--cache-dir", dest="cache_dir", help="coefficient table cache directory")
    common.add_argument("--ofdm-model", dest="ofdm_model", help="closed (analytic) or table")
    common.add_argument("--validate-gamma", dest="validate_gamma", help="IBO values (dB) for validate")
    common.add_argument("--validate-snrsat", dest="validate_snrsat", help="SNR_SAT values (dB) for validate")
    common.add_argument("--measure-band", dest="measure_band", help="band measured by validate (default: model band)")
    common.add_argument(
        "--legacy-snr-sat", dest="legacy_snr_sat", action="store_const", const="true",
        help="interpret the SNR_SAT axis with full-band noise",
    )
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="pasndr", description="PA-aware IBO optimization for OFDM and SC-FDMA")
    parser.add_argument("--version", action="version", version=f"pasndr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("coeffs", parents=[common], help="build coefficient tables and fig1 CSV")
    sub.add_parser("sndr-map", parents=[common], help="SNDR over (IBO, SNR_SAT), fig2 CSV")
    sub.add_parser("optimize", parents=[common], help="optimal IBO and SNDR, fig3/fig4 CSV")
    sub.add_parser("validate", parents=[common], help="end-to-end check of the SNDR model")
    return parser


def _join_negative_values(argv):
    # argparse takes "-20:20:0.25" for an option; glue such values to their flag
    out = []
    for tok in argv:
        if out and out[-1].startswith("--") and "=" not in out[-1] and re.match(r"-\d", tok):
            out[-1] = f"{out[-1]}={tok}"
        else:
            out.append(tok)
    return out


def parse_config(argv=None):
    """Parse command-line arguments into ``(command, ExperimentConfig, verbosity)``."""
    parser = build_parser()
    argv = _join_negative_values(sys.argv[1:] if argv is None else list(argv))
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code in (0, None):
            raise
        raise UsageError("invalid command line") from None
    values = read_config_file(args.config) if args.config else {}
    for key, (fname, conv) in _KEYS.items():
        raw = getattr(args, key, None)
        if raw is None:
            continue
        values[fname] = _parse_waveforms(key, raw) if key == "waveform" else conv(key, raw)
    try:
        config = ExperimentConfig(**values)
    except TypeError as exc:
        raise UsageError(str(exc)) from None
    return args.command, config, args.verbose


# --- figure datasets ---------------------------------------------------------


@dataclass
class FigureDataset:
    figure_id: str
    columns: dict
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) > 1:
            raise InvalidArgumentError(f"{self.figure_id}: column lengths differ {lengths}")

    def __len__(self):
        return len(next(iter(self.columns.values()), []))

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write(f"# figure={self.figure_id}\n")
        for k, v in self.provenance.items():
            out.write(f"# {k}={v}\n")
        w = csv.writer(out, lineterminator="\n")
        names = list(self.columns)
        w.writerow(names)
        for row in zip(*(self.columns[n] for n in names)):
            w.writerow([_fmt(v) for v in row])
        return out.getvalue()

    def write(self, out_dir) -> Path:
        path = Path(out_dir) / FIGURE_FILES[self.figure_id]
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(self.to_csv())
        except OSError as exc:
            raise StorageError(f"could not write {path}: {exc}") from exc
        return path


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".10g")
    return str(v)


def read_dataset(path):
    """Load a CSV written by :class:`FigureDataset` into (header dict, rows)."""
    header, lines = {}, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            k, _, v = line[1:].strip().partition("=")
            header[k] = v
        else:
            lines.append(line)
    rows = list(csv.DictReader(lines))
    return header, rows


def _provenance(config):
    return {
        "tool": f"pasndr {__version__}",
        "config_hash": config.digest(),
        "seed": config.master_seed,
    }


# --- runners -------------------------------------------------------------------


class Runner:
    """Holds one experiment's configuration and its lazily built tables."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.out_dir = Path(config.output_dir)
        self._tables = {}
        self.storage_failed = False

    def cache_dir(self):
        return self.config.cache_dir if self.config.cache_dir else None

    def table(self, kind, m):
        key = (kind, m)
        if key not in self._tables:
            cfg = self.config.waveform_config(kind, m)
            try:
                table = build_table(
                    cfg, self.config.gamma_grid(), self.config.n_symbols, self.config.master_seed,
                    cache_dir=self.cache_dir(),
                )
            except StorageError as exc:
                log.error("%s", exc)
                self.storage_failed = True
                table = exc.result
            self._tables[key] = table
            try:
                save_table(table, self.out_dir / "tables" / f"{table.waveform_id.slug()}.csv")
            except OSError as exc:
                log.error("could not write table copy: %s", exc)
                self.storage_failed = True
        return self._tables[key]

    def source(self, kind, m):
        if kind == "ofdm" and self.config.ofdm_model == "closed":
            return ClosedFormOFDM()
        return TableSource(self.table(kind, m))

    def write(self, figure_id, columns):
        ds = FigureDataset(figure_id, columns, _provenance(self.config))
        path = ds.write(self.out_dir)
        log.info("wrote %s (%d rows)", path, len(ds))
        return path

    def exit_code(self, default=EXIT_OK):
        return EXIT_STORAGE if self.storage_failed and default == EXIT_OK else default


def cmd_coeffs(config: ExperimentConfig) -> int:
    run = Runner(config)
    cols = {k: [] for k in ("waveform", "M", "gamma_db", "alpha_abs", "d_db", "d_tilde_db")}
    for kind, m in config.waveforms:
        table = run.table(kind, m)
        for s in table.samples:
            cols["waveform"].append(kind)
            cols["M"].append(m)
            cols["gamma_db"].append(s.gamma_db)
            cols["alpha_abs"].append(abs(s.alpha))
            cols["d_db"].append(float(lin_to_db(s.d)))
            cols["d_tilde_db"].append(float(lin_to_db(s.d_tilde)))
    run.write("ALPHA_D", cols)
    return run.exit_code()


def cmd_sndr_map(config: ExperimentConfig) -> int:
    run = Runner(config)
    gamma = config.gamma_grid()
    cols = {k: [] for k in ("waveform", "M", "band", "snr_sat_db", "gamma_db", "sndr_db")}
    for kind, m in config.waveforms:
        src = run.source(kind, m)
        for band in config.bands:
            for s in config.snr_sat_grid():
                vals = sndr_db(src, gamma, s + config.snr_offset_db(), band)
                n = gamma.size
                cols["waveform"] += [kind] * n
                cols["M"] += [m] * n
                cols["band"] += [band.value] * n
                cols["snr_sat_db"] += [float(s)] * n
                cols["gamma_db"] += list(gamma)
                cols["sndr_db"] += list(vals)
    run.write("SNDR_CONTOUR", cols)
    return run.exit_code()


def _reference(kind, m):
    try:
        return reference_ibo(kind, m)
    except InvalidArgumentError:
        return float("nan")


def cmd_optimize(config: ExperimentConfig) -> int:
    run = Runner(config)
    names3 = ("waveform", "M", "band", "snr_sat_db", "gamma_opt_db", "sndr_opt_db")
    fig3 = {k: [] for k in names3}
    fig4 = {k: [] for k in names3 + ("gamma_ref_db", "sndr_ref_db", "fit_sndr_db", "slope", "intercept")}
    failures = 0
    offset = config.snr_offset_db()
    for kind, m in config.waveforms:
        src = run.source(kind, m)
        g_ref = _reference(kind, m)
        for band in config.bands:
            rows = []
            for s in config.snr_sat_grid():
                try:
                    r = optimize(src, s + offset, band)
                    rows.append((float(s), r.gamma_opt_db, r.sndr_opt_db))
                except (BracketError, NumericError) as exc:
                    log.warning("%s M=%d %s snr_sat=%g dB: %s", kind, m, band.value, s, exc)
                    failures += 1
                    rows.append((float(s), float("nan"), float("nan")))
            ok = [(s, v) for s, _, v in rows if np.isfinite(v)]
            fit = fit_linear(ok) if len({s for s, _ in ok}) >= 2 else None
            for s, g, v in rows:
                for cols in (fig3, fig4):
                    cols["waveform"].append(kind)
                    cols["M"].append(m)
                    cols["band"].append(band.value)
                    cols["snr_sat_db"].append(s)
                    cols["gamma_opt_db"].append(g)
                    cols["sndr_opt_db"].append(v)
                ref = float("nan")
                if np.isfinite(g_ref):
                    try:
                        ref = float(sndr_db(src, g_ref, s + offset, band))
                    except PasndrError:
                        pass
                fig4["gamma_ref_db"].append(g_ref)
                fig4["sndr_ref_db"].append(ref)
                fig4["fit_sndr_db"].append(float(fit(s)) if fit else float("nan"))
                fig4["slope"].append(fit.slope if fit else float("nan"))
                fig4["intercept"].append(fit.intercept if fit else float("nan"))
    run.write("OPT_IBO", fig3)
    run.write("MAX_SNDR", fig4)
    return run.exit_code(EXIT_NUMERIC if failures else EXIT_OK)


@dataclass(frozen=True)
class ValidationCell:
    waveform: str
    m: int
    model_band: str
    measured_band: str
    gamma_db: float
    snr_sat_db: float
    model_sndr_db: float
    measured_sndr_db: float
    half_width_db: float
    status: str

    @property
    def diff_db(self):
        return self.measured_sndr_db - self.model_sndr_db


def classify(diff_db, half_width_db, n_symbols, tol_db=VALIDATE_TOL_DB):
    """PASS / FAIL / LOW-CONFIDENCE for one measured-vs-model comparison.

    Cells with fewer than ``MIN_CONFIDENT_SYMBOLS`` symbols, or whose 3-sigma
    statistical spread alone exceeds the tolerance, cannot decide a failure.
    """
    three_sigma = 3 * half_width_db / 1.96
    if n_symbols < MIN_CONFIDENT_SYMBOLS or three_sigma > tol_db:
        return "LOW-CONFIDENCE"
    return "PASS" if abs(diff_db) <= tol_db else "FAIL"


def run_validation(config: ExperimentConfig, runner=None):
    run = runner or Runner(config)
    model_band = Band.INBAND if config.band == "both" else Band.parse(config.band)
    measured_band = Band.parse(config.measure_band) if config.measure_band else model_band
    offset = config.snr_offset_db()
    cells = []
    for w, (kind, m) in enumerate(config.waveforms):
        cfg = config.waveform_config(kind, m)
        table = run.table(kind, m)
        for i, g in enumerate(config.validate_gamma_db):
            sample = interpolate(table, g)
            d = sample.d_tilde if model_band is Band.INBAND else sample.d
            for j, s in enumerate(config.validate_snrsat_db):
                snr = s + offset
                model = float(lin_to_db(sndr_model(sample.alpha, d, db_to_lin(g), db_to_lin(snr))))
                seed = derive_seed(config.master_seed, 7, w, i, j)
                meas = validate_link(cfg, g, snr, config.n_symbols, seed, band=measured_band)
                status = classify(meas.sndr_db - model, meas.half_width_db, config.n_symbols)
                cells.append(
                    ValidationCell(kind, m, model_band.value, measured_band.value, float(g), float(s),
                                   model, meas.sndr_db, meas.half_width_db, status)
                )
    return cells, run


def cmd_validate(config: ExperimentConfig) -> int:
    cells, run = run_validation(config)
    out = io.StringIO()
    out.write("# figure=VALIDATE\n")
    for k, v in _provenance(config).items():
        out.write(f"# {k}={v}\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["waveform", "M", "model_band", "measured_band", "gamma_db", "snr_sat_db",
                "model_sndr_db", "measured_sndr_db", "ci_half_width_db", "diff_db", "status"])
    for c in cells:
        w.writerow([c.waveform, c.m, c.model_band, c.measured_band, _fmt(c.gamma_db), _fmt(c.snr_sat_db),
                    _fmt(c.model_sndr_db), _fmt(c.measured_sndr_db), _fmt(c.half_width_db), _fmt(c.diff_db),
                    c.status])
        print(f"{c.status:14s} {c.waveform}:{c.m} gamma={c.gamma_db:+6.2f} dB snr_sat={c.snr_sat_db:5.1f} dB "
              f"model={c.model_sndr_db:7.3f} measured={c.measured_sndr_db:7.3f} (+-{c.half_width_db:.3f}) dB")
    path = run.out_dir / "validate_report.csv"
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(out.getvalue())
    except OSError as exc:
        log.error("could not write %s: %s", path, exc)
        return EXIT_STORAGE
    failed = sum(c.status == "FAIL" for c in cells)
    print(f"{len(cells) - failed}/{len(cells)} cells without failure; report in {path}")
    return run.exit_code(EXIT_VALIDATION if failed else EXIT_OK)


COMMANDS = {
    "coeffs": cmd_coeffs,
    "sndr-map": cmd_sndr_map,
    "optimize": cmd_optimize,
    "validate": cmd_validate,
}


def main(argv=None) -> int:
    try:
        command, config, verbose = parse_config(argv)
    except UsageError as exc:
        print(f"pasndr: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.WARNING - 10 * min(verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return COMMANDS[command](config)
    except StorageError as exc:
        print(f"pasndr: storage error: {exc}", file=sys.stderr)
        return EXIT_STORAGE
    except (NumericError, ArithmeticError) as exc:
        print(f"pasndr: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except PasndrError as exc:
        print(f"pasndr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
