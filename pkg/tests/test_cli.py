import csv
import json

import numpy as np
import pytest

from doa_bcskf import __version__
from doa_bcskf.cli import main
from doa_bcskf.cli_io import (
    MEASUREMENT_HEADER,
    RECORD_HEADER,
    SERIES_HEADER,
    ConfigError,
    MeasurementFormatError,
    default_config,
    load_scenario,
    read_measurements,
    scenario_from_config,
    threads_from_env,
    write_measurements,
)
from doa_bcskf.scenarios import ScenarioSpec


def _write_cfg(tmp_path, name="cfg.json", **over):
    cfg = default_config()
    solver = over.pop("solver", {})
    cfg.update(over)
    cfg["solver"].update(solver)
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


class TestConfig:
    def test_bundled_scenarios(self):
        end, out = load_scenario("endfire")
        assert (end.initial_doa, end.doa_rate, end.signal_amplitude, end.noise_var) == (20.0, -1.0, 1.0, 0.4)
        assert (end.num_sensors, end.spacing_wavelengths, end.solver.sigma2_init, end.num_trials) == (20, 0.5, 0.1, 25)
        non, _ = load_scenario("non_endfire")
        assert (non.initial_doa, non.doa_rate, non.signal_amplitude) == (100.0, 1.0, -1.0)
        rnd, _ = load_scenario("random_init")
        assert (rnd.initial_doa, rnd.doa_rate, rnd.signal_amplitude) == ("random", 1.0, "random_pm1")

    def test_unknown_keys_rejected(self):
        cfg = default_config()
        cfg["extra"] = 1
        with pytest.raises(ConfigError, match="extra"):
            scenario_from_config(cfg)
        cfg = default_config()
        cfg["solver"]["lr"] = 1
        with pytest.raises(ConfigError, match="lr"):
            scenario_from_config(cfg)

    def test_malformed_json_reports_position(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{"name": "x",\n  "seed": }')
        with pytest.raises(ConfigError, match=r"bad.json:2:11"):
            load_scenario(str(p))

    def test_nan_literal_rejected(self, tmp_path):
        p = tmp_path / "nan.json"
        p.write_text('{"noise_var": NaN}')
        with pytest.raises(ConfigError):
            load_scenario(str(p))

    def test_complex_amplitude_round_trip(self):
        cfg = default_config()
        cfg["signal_amplitude"] = [0.5, -1.0]
        spec, _ = scenario_from_config(cfg)
        assert spec.signal_amplitude == 0.5 - 1j

    def test_threads_env(self, monkeypatch):
        monkeypatch.delenv("DOA_BCSKF_THREADS", raising=False)
        assert threads_from_env(None) == 1
        monkeypatch.setenv("DOA_BCSKF_THREADS", "3")
        assert threads_from_env(None) == 3
        assert threads_from_env(2) == 2
        monkeypatch.setenv("DOA_BCSKF_THREADS", "many")
        with pytest.raises(ConfigError):
            threads_from_env(None)
        with pytest.raises(ConfigError):
            threads_from_env(0)


class TestMeasurements:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        snaps = [rng.standard_normal(4) + 1j * rng.standard_normal(4) for _ in range(3)]
        p = tmp_path / "m.csv"
        with open(p, "w", newline="") as fh:
            write_measurements(fh, snaps)
        assert p.read_text().splitlines()[0] == ",".join(MEASUREMENT_HEADER)
        back = read_measurements(p)
        for a, b in zip(snaps, back):
            assert np.array_equal(a, b)

    @pytest.mark.parametrize("text,where", [
        ("", ":1:1"),
        ("k,sensor,re,im\n", "no measurements"),
        ("k,sensor,re,im\n0,0,1.0,x\n", ":2:9"),
        ("k,sensor,re,im\n0,0,1.0\n", ":2:1"),
        ("k,sensor,re,im\n0,a,1.0,0.0\n", ":2:3"),
        ("k,sensor,re,im\n0,0,1.0,nan\n", ":2:9"),
        ("k,sensor,re,im\n0,1,1.0,0.0\n", "missing sensor"),
        ("k,sensor,re,im\n1,0,1.0,0.0\n", "0..K-1"),
    ])
    def test_malformed(self, tmp_path, text, where):
        p = tmp_path / "m.csv"
        p.write_text(text)
        with pytest.raises(MeasurementFormatError, match=where):
            read_measurements(p)


class TestCommands:
    def test_print_defaults(self, capsys):
        assert main(["--print-defaults"]) == 0
        assert json.loads(capsys.readouterr().out) == default_config()
        assert main(["bench", "--print-defaults"]) == 0

    def test_usage_errors_exit_one(self, tmp_path, capsys):
        assert main([]) == 1
        assert main(["bench", "--bogus"]) == 1
        bad = tmp_path / "bad.json"
        bad.write_text("{")
        assert main(["bench", "--config", str(bad)]) == 1
        assert "bad.json:1:2" in capsys.readouterr().err

    def test_synth_noiseless_broadside(self, tmp_path):
        cfg = _write_cfg(tmp_path, initial_doa=90.0, doa_rate=0.0, noise_var=0.0, num_snapshots=2)
        out = tmp_path / "m.csv"
        assert main(["synth", "--config", cfg, "--out", str(out)]) == 0
        rows = list(csv.DictReader(open(out)))
        assert len(rows) == 40 and all(r["re"] == "1.0" and r["im"] == "0.0" for r in rows)

    def test_synth_zero_sources(self, tmp_path):
        cfg = _write_cfg(tmp_path, signal_amplitude=0.0, noise_var=0.0, num_snapshots=1)
        out = tmp_path / "m.csv"
        assert main(["synth", "--config", cfg, "--out", str(out)]) == 0
        assert all(float(r["re"]) == 0 and float(r["im"]) == 0 for r in csv.DictReader(open(out)))

    def test_synth_is_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(["synth", "--config", "endfire", "--seed", "5", "--out", str(a)]) == 0
        assert main(["synth", "--config", "endfire", "--seed", "5", "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_estimate_noiseless(self, tmp_path):
        cfg = _write_cfg(tmp_path, initial_doa=100.0, doa_rate=0.0, noise_var=0.0, num_snapshots=1)
        m, out = tmp_path / "m.csv", tmp_path / "e.json"
        main(["synth", "--config", cfg, "--out", str(m)])
        assert main(["estimate", str(m), "--config", cfg, "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert doc["doas_deg"] == [100.0] and doc["num_kept"] == 1

    def test_estimate_empty_file(self, tmp_path, capsys):
        m = tmp_path / "m.csv"
        m.write_text("k,sensor,re,im\n")
        assert main(["estimate", str(m)]) == 1
        assert "no measurements" in capsys.readouterr().err

    def test_estimate_seeded_endfire(self, tmp_path):
        out = tmp_path / "e.json"
        assert main(["estimate", "--config", "endfire", "--out", str(out)]) == 0
        assert abs(json.loads(out.read_text())["dominant_doa_deg"] - 20.0) <= 2.0

    def test_track_noiseless(self, tmp_path):
        cfg = _write_cfg(tmp_path, noise_var=0.0, num_snapshots=8)
        m, out = tmp_path / "m.csv", tmp_path / "t.csv"
        main(["synth", "--config", cfg, "--out", str(m)])
        assert main(["track", str(m), "--config", cfg, "--out", str(out)]) == 0
        rows = list(csv.DictReader(open(out)))
        assert [float(r["est_doa_deg"]) for r in rows] == [20.0 - k for k in range(8)]

    def test_track_single_snapshot(self, tmp_path):
        cfg = _write_cfg(tmp_path, noise_var=0.0, num_snapshots=1)
        m, out = tmp_path / "m.csv", tmp_path / "t.csv"
        main(["synth", "--config", cfg, "--out", str(m)])
        assert main(["track", str(m), "--config", cfg, "--out", str(out)]) == 0
        assert len(list(csv.DictReader(open(out)))) == 1

    def test_track_seeded_endfire_final_error(self, tmp_path):
        m, out = tmp_path / "m.csv", tmp_path / "t.csv"
        main(["synth", "--config", "endfire", "--out", str(m)])
        assert main(["track", str(m), "--config", "endfire", "--out", str(out)]) == 0
        last = list(csv.DictReader(open(out)))[-1]
        assert abs(float(last["est_doa_deg"]) - 1.0) <= 2.0

    def test_bench_bundle_layout_and_round_trip(self, tmp_path, capsys):
        out = tmp_path / "res"
        assert main(["bench", "--config", "endfire", "--trials", "2", "--snapshots", "5", "--out", str(out)]) == 0
        series = list(csv.reader(open(out / "rmse_series.csv")))
        assert series[0] == SERIES_HEADER and len(series) == 6
        for method in ("baseline", "modified"):
            recs = list(csv.reader(open(out / method / "records.csv")))
            assert recs[0] == RECORD_HEADER and len(recs) == 11
            summary = json.loads((out / method / "summary.json").read_text(),
                                 parse_constant=lambda c: pytest.fail(f"non-strict literal {c}"))
            assert summary["method"] == method and summary["version"] == __version__
            assert len(summary["per_snapshot_rmse_deg"]) == 5
        # echoed config re-runs to the same records
        echoed = json.loads((out / "modified" / "summary.json").read_text())["config"]
        echoed["output_dir"] = str(tmp_path / "again")
        cfg = tmp_path / "echo.json"
        cfg.write_text(json.dumps(echoed))
        assert main(["bench", "--config", str(cfg)]) == 0
        for method in ("baseline", "modified"):
            a = [r[:-1] for r in csv.reader(open(out / method / "records.csv"))]
            b = [r[:-1] for r in csv.reader(open(tmp_path / "again" / method / "records.csv"))]
            assert a == b

    def test_bench_single_method(self, tmp_path):
        out = tmp_path / "res"
        assert main(["bench", "--trials", "1", "--snapshots", "3", "--method", "baseline", "--out", str(out)]) == 0
        assert (out / "baseline" / "records.csv").exists() and not (out / "modified").exists()
        rows = list(csv.DictReader(open(out / "rmse_series.csv")))
        assert rows[0]["rmse_modified"] == ""

    def test_bench_check_failure_exits_two(self, tmp_path):
        # a single noisy snapshot gives the tracker no advantage, so the ordering check fails
        cfg = _write_cfg(tmp_path, num_trials=1, num_snapshots=1, noise_var=0.4)
        assert main(["bench", "--config", cfg, "--out", str(tmp_path / "r"), "--check"]) == 2

    def test_eta_override(self):
        spec = ScenarioSpec()
        assert spec.solver.threshold_eta == 0.9
        from doa_bcskf.cli import build_parser, resolve
        _, spec, _ = resolve(build_parser().parse_args(["bench", "--eta", "0.5"]))
        assert spec.solver.threshold_eta == 0.5
