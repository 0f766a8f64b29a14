import subprocess
import sys
from collections import defaultdict

import numpy as np
import pytest

from pasndr import cli
from pasndr.cli import (
    EXIT_NUMERIC,
    EXIT_OK,
    EXIT_STORAGE,
    EXIT_USAGE,
    EXIT_VALIDATION,
    ExperimentConfig,
    FigureDataset,
    UsageError,
    classify,
    main,
    parse_config,
    read_dataset,
)
from pasndr.errors import InvalidArgumentError
from pasndr.nonlinearity import alpha_ofdm, db_to_lin

TINY = ["--n", "64", "--n-u", "8", "--n-symbols", "200", "--gamma-grid", "-20:12:1", "--snrsat-grid", "0:40:5"]


def run(tmp_path, command, *extra, out="out"):
    argv = [command, *TINY, "--out-dir", str(tmp_path / out), "--cache-dir", str(tmp_path / "cache"), *extra]
    return main(argv)


def groups(rows, *keys):
    out = defaultdict(list)
    for r in rows:
        out[tuple(r[k] for k in keys)].append(r)
    return out


class TestParseConfig:
    def test_defaults(self, tmp_path):
        f = tmp_path / "empty.cfg"
        f.write_text("# nothing here\n\n")
        command, cfg, verbose = parse_config(["coeffs", "--config", str(f)])
        assert command == "coeffs" and verbose == 0
        assert cfg == ExperimentConfig()
        assert (cfg.n, cfg.n_u) == (512, 24)
        assert cfg.waveforms == (("ofdm", 64), ("scfdma", 4), ("scfdma", 64))
        assert cfg.gamma_grid()[0] == -20.0 and cfg.gamma_grid()[-1] == 20.0 and cfg.gamma_grid().size == 161
        assert cfg.snr_sat_grid().size == 41

    def test_flag_overrides_file(self, tmp_path):
        f = tmp_path / "a.cfg"
        f.write_text("band = time\nseed = 5  # comment\nwaveform = scfdma:4, ofdm:16\n")
        _, cfg, _ = parse_config(["optimize", "--config", str(f), "--band", "inband"])
        assert cfg.band == "inband"
        assert cfg.master_seed == 5
        assert cfg.waveforms == (("scfdma", 4), ("ofdm", 16))

    def test_repeatable_waveform(self):
        _, cfg, _ = parse_config(["coeffs", "--waveform", "scfdma:4", "--waveform", "sc-fdma:64"])
        assert cfg.waveforms == (("scfdma", 4), ("scfdma", 64))

    def test_negative_values(self):
        _, cfg, _ = parse_config(["coeffs", "--gamma-grid", "-10:5:0.5", "--validate-gamma", "-4,-2"])
        assert cfg.gamma_grid_db == (-10.0, 5.0, 0.5)
        assert cfg.validate_gamma_db == (-4.0, -2.0)

    def test_nu_above_n(self):
        with pytest.raises(UsageError, match="n_u"):
            parse_config(["coeffs", "--n-u", "600", "--n", "512"])

    @pytest.mark.parametrize(
        "argv,key",
        [
            (["coeffs", "--gamma-grid", "5:1:0.5"], "gamma_grid"),
            (["coeffs", "--gamma-grid", "1:2"], "gamma_grid"),
            (["coeffs", "--snrsat-grid", "a:b:c"], "snrsat_grid"),
            (["coeffs", "--waveform", "fbmc:4"], "waveform"),
            (["coeffs", "--waveform", "scfdma:8"], "waveform"),
            (["coeffs", "--band", "oob"], "band"),
            (["coeffs", "--seed", "x"], "seed"),
            (["coeffs", "--n-symbols", "10"], "n_symbols"),
        ],
    )
    def test_bad_values_name_key(self, argv, key):
        with pytest.raises(UsageError, match=key):
            parse_config(argv)

    def test_bad_file(self, tmp_path):
        f = tmp_path / "bad.cfg"
        f.write_text("colour = blue\n")
        with pytest.raises(UsageError, match="colour"):
            parse_config(["coeffs", "--config", str(f)])
        f.write_text("n 512\n")
        with pytest.raises(UsageError, match="key = value"):
            parse_config(["coeffs", "--config", str(f)])
        with pytest.raises(UsageError):
            parse_config(["coeffs", "--config", str(tmp_path / "missing.cfg")])

    def test_digest_ignores_paths(self):
        a = ExperimentConfig(output_dir="x", cache_dir="y")
        assert a.digest() == ExperimentConfig().digest()
        assert ExperimentConfig(master_seed=2).digest() != a.digest()


class TestExitCodes:
    def test_usage(self, capsys):
        assert main(["coeffs", "--n-u", "600", "--n", "512"]) == EXIT_USAGE
        assert "n_u" in capsys.readouterr().err
        assert main([]) == EXIT_USAGE
        assert main(["frobnicate"]) == EXIT_USAGE

    def test_distinct(self):
        assert len({EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_VALIDATION, EXIT_STORAGE}) == 5

    def test_storage(self, tmp_path):
        blocker = tmp_path / "out"
        blocker.write_text("not a directory")
        assert run(tmp_path, "coeffs", "--waveform", "ofdm:4") == EXIT_STORAGE

    def test_cache_storage(self, tmp_path):
        (tmp_path / "cache").write_text("not a directory")
        assert run(tmp_path, "coeffs", "--waveform", "ofdm:4") == EXIT_STORAGE
        # the figure is still produced from the computed table
        assert (tmp_path / "out" / "fig1_alpha_D.csv").is_file()

    def test_bracket_failure_is_numeric(self, tmp_path):
        code = run(tmp_path, "optimize", "--waveform", "scfdma:4", "--gamma-grid", "0:3:0.5")
        assert code == EXIT_NUMERIC
        _, rows = read_dataset(tmp_path / "out" / "fig3_opt_ibo.csv")
        assert any(r["gamma_opt_db"] == "nan" for r in rows)

    def test_module_entry_point(self):
        out = subprocess.run([sys.executable, "-m", "pasndr", "--version"], capture_output=True, text=True)
        assert out.returncode == 0 and "pasndr" in out.stdout


class TestCoeffs:
    def test_schema_and_provenance(self, tmp_path):
        assert run(tmp_path, "coeffs", "--waveform", "ofdm:16", "--waveform", "scfdma:4") == EXIT_OK
        header, rows = read_dataset(tmp_path / "out" / "fig1_alpha_D.csv")
        assert header["figure"] == "ALPHA_D"
        assert header["tool"].startswith("pasndr ")
        assert len(header["config_hash"]) == 16 and header["seed"] == "1"
        assert list(rows[0]) == ["waveform", "M", "gamma_db", "alpha_abs", "d_db", "d_tilde_db"]
        assert len(rows) == 2 * 33
        tables = sorted(p.name for p in (tmp_path / "out" / "tables").iterdir())
        assert tables == ["ofdm-qam16-N64-NU8.csv", "scfdma-qam4-N64-NU8.csv"]

    def test_rerun_byte_identical(self, tmp_path):
        run(tmp_path, "coeffs", "--waveform", "scfdma:4", out="a")
        # second run reuses nothing: fresh cache
        main(["coeffs", *TINY, "--waveform", "scfdma:4", "--out-dir", str(tmp_path / "b"),
              "--cache-dir", str(tmp_path / "cache2")])
        for name in ("fig1_alpha_D.csv", "tables/scfdma-qam4-N64-NU8.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_env_cache_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv("PASNDR_CACHE_DIR", str(tmp_path / "envcache"))
        assert main(["coeffs", *TINY, "--waveform", "ofdm:4", "--out-dir", str(tmp_path / "o")]) == EXIT_OK
        assert len(list((tmp_path / "envcache").iterdir())) == 1

    def test_ofdm_alpha_close_to_closed_form(self, tmp_path):
        main(["coeffs", "--n", "512", "--n-u", "256", "--n-symbols", "400", "--gamma-grid", "-10:10:5",
              "--waveform", "ofdm:64", "--out-dir", str(tmp_path / "o"), "--cache-dir", str(tmp_path / "c")])
        _, rows = read_dataset(tmp_path / "o" / "fig1_alpha_D.csv")
        for r in rows:
            g = float(r["gamma_db"])
            assert abs(float(r["alpha_abs"]) - alpha_ofdm(float(db_to_lin(g)))) < 5e-3


class TestSndrMap:
    def test_properties(self, tmp_path):
        assert run(tmp_path, "sndr-map", "--waveform", "ofdm:64", "--waveform", "scfdma:4") == EXIT_OK
        header, rows = read_dataset(tmp_path / "out" / "fig2_sndr_map.csv")
        assert header["figure"] == "SNDR_CONTOUR"
        assert list(rows[0]) == ["waveform", "M", "band", "snr_sat_db", "gamma_db", "sndr_db"]
        for key, grp in groups(rows, "waveform", "band", "snr_sat_db").items():
            v = np.array([float(r["sndr_db"]) for r in grp])
            assert 0 < int(np.argmax(v)) < v.size - 1, key
        by_point = groups(rows, "waveform", "gamma_db", "snr_sat_db")
        for grp in by_point.values():
            val = {r["band"]: float(r["sndr_db"]) for r in grp}
            assert val["inband"] >= val["time"] - 1e-12
        for key, grp in groups(rows, "waveform", "band", "gamma_db").items():
            grp = sorted(grp, key=lambda r: float(r["snr_sat_db"]))
            v = np.array([float(r["sndr_db"]) for r in grp])
            assert np.all(np.diff(v) >= -1e-12), key


class TestOptimize:
    def test_outputs(self, tmp_path):
        assert run(tmp_path, "optimize", "--waveform", "ofdm:64", "--waveform", "scfdma:4",
                   "--gamma-grid", "-20:14:0.5", "--n-symbols", "400") == EXIT_OK
        h3, fig3 = read_dataset(tmp_path / "out" / "fig3_opt_ibo.csv")
        h4, fig4 = read_dataset(tmp_path / "out" / "fig4_max_sndr.csv")
        assert h3["figure"] == "OPT_IBO" and h4["figure"] == "MAX_SNDR"
        assert list(fig3[0]) == ["waveform", "M", "band", "snr_sat_db", "gamma_opt_db", "sndr_opt_db"]
        assert list(fig4[0])[-5:] == ["gamma_ref_db", "sndr_ref_db", "fit_sndr_db", "slope", "intercept"]
        ofdm = [float(r["gamma_opt_db"]) for r in fig3 if r["waveform"] == "ofdm" and r["band"] == "inband"]
        assert np.all(np.diff(ofdm) > 0)
        for r in fig3:
            if r["snr_sat_db"] == "5":
                assert float(r["gamma_opt_db"]) < 0
        for r in fig4:
            assert float(r["sndr_opt_db"]) >= float(r["sndr_ref_db"]) - 1e-9
        for key, grp in groups(fig4, "waveform", "band").items():
            assert len({r["slope"] for r in grp}) == 1

    def test_legacy_axis_shift(self, tmp_path):
        run(tmp_path, "optimize", "--waveform", "ofdm:64", "--band", "inband", out="new")
        run(tmp_path, "optimize", "--waveform", "ofdm:64", "--band", "inband", "--legacy-snr-sat", out="old")
        _, new = read_dataset(tmp_path / "new" / "fig3_opt_ibo.csv")
        _, old = read_dataset(tmp_path / "old" / "fig3_opt_ibo.csv")
        # legacy axis counts full-band noise, so the same label means a better link
        assert all(float(o["sndr_opt_db"]) > float(n["sndr_opt_db"]) for o, n in zip(old, new))


class TestValidate:
    def test_low_confidence(self, tmp_path, capsys):
        code = run(tmp_path, "validate", "--waveform", "ofdm:4", "--n-symbols", "100")
        assert code == EXIT_OK
        _, rows = read_dataset(tmp_path / "out" / "validate_report.csv")
        assert len(rows) == 9
        assert {r["status"] for r in rows} == {"LOW-CONFIDENCE"}

    def test_consistent_bands_pass(self, tmp_path):
        code = run(tmp_path, "validate", "--waveform", "scfdma:4", "--n-symbols", "1000")
        _, rows = read_dataset(tmp_path / "out" / "validate_report.csv")
        assert {r["status"] for r in rows} <= {"PASS", "LOW-CONFIDENCE"}
        assert code == EXIT_OK

    def test_band_mismatch_flagged(self, tmp_path):
        code = run(tmp_path, "validate", "--waveform", "scfdma:4", "--n-symbols", "1000",
                   "--band", "inband", "--measure-band", "time", "--validate-snrsat", "20 30 40")
        assert code == EXIT_VALIDATION
        _, rows = read_dataset(tmp_path / "out" / "validate_report.csv")
        low = [r for r in rows if float(r["gamma_db"]) <= 0]
        assert low and all(r["status"] == "FAIL" for r in low)
        assert all(float(r["diff_db"]) < -0.5 for r in low)


class TestClassify:
    def test_rules(self):
        assert classify(0.1, 0.05, 5000) == "PASS"
        assert classify(0.8, 0.05, 5000) == "FAIL"
        assert classify(0.8, 0.05, 100) == "LOW-CONFIDENCE"
        assert classify(0.8, 0.6, 5000) == "LOW-CONFIDENCE"


def test_dataset_columns_must_match():
    with pytest.raises(InvalidArgumentError):
        FigureDataset("ALPHA_D", {"a": [1, 2], "b": [1]})


def test_dataset_float_format():
    ds = FigureDataset("ALPHA_D", {"x": [0.1, 1 / 3]}, {"seed": 1})
    assert ds.to_csv() == "# figure=ALPHA_D\n# seed=1\nx\n0.1\n0.3333333333\n"


def test_main_numeric_failure(monkeypatch, capsys):
    from pasndr.errors import NumericError

    def boom(config):
        raise NumericError("no convergence")

    monkeypatch.setitem(cli.COMMANDS, "coeffs", boom)
    assert main(["coeffs"]) == EXIT_NUMERIC
    assert "numeric" in capsys.readouterr().err
