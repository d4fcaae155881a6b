"""Serialization round-trips, CLI scenario plumbing, exit codes, determinism,
and plot-data emission."""

import json

import numpy as np
import pytest

from confocal import cli, gridio
from confocal.errors import ConfigError, MissingRun


class TestGridIO:
    def test_fieldgrid_roundtrip(self, soliton32, qwc2, tmp_path):
        gridio.save_fieldgrid(tmp_path / "state", soliton32, qwc2)
        back = gridio.load_fieldgrid(tmp_path / "state")
        assert np.array_equal(back.V, soliton32.V)
        assert np.array_equal(back.lam, soliton32.lam)
        assert np.array_equal(back.R, soliton32.R)
        assert back.grid == soliton32.grid

    def test_header_contents(self, soliton32, qwc2, tmp_path):
        gridio.save_fieldgrid(tmp_path / "state", soliton32, qwc2,
                              {"provenance": {"z": [0.3, 0.1]}})
        header = json.loads((tmp_path / "state.json").read_text())
        assert header["quadric"]["kind"] == "QWC"
        assert header["provenance"]["z"] == [0.3, 0.1]

    def test_csv_byte_identical(self, soliton32, qwc2, tmp_path):
        gridio.save_fieldgrid(tmp_path / "a", soliton32, qwc2)
        gridio.save_fieldgrid(tmp_path / "b", soliton32, qwc2)
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


class TestConfigValidation:
    def test_unknown_scenario(self):
        with pytest.raises(ConfigError):
            cli.validate_config({"scenario": "nope"})

    def test_equal_z_rejected(self):
        with pytest.raises(ConfigError):
            cli.validate_config({"scenario": "bpt",
                                 "z": [[0.3, 0.1], [0.3, 0.1]]})

    def test_m3_needs_three(self):
        with pytest.raises(ConfigError):
            cli.validate_config({"scenario": "m3", "z": [[0.3, 0.1],
                                                         [0.2, 0.0]]})

    def test_unknown_tolerance(self):
        with pytest.raises(ConfigError):
            cli.validate_config({"scenario": "ivory-check",
                                 "tolerances": {"bogus": 1e-3}})

    def test_negative_tolerance(self):
        with pytest.raises(ConfigError):
            cli.validate_config({"scenario": "ivory-check",
                                 "tolerances": {"ivory_identities": -1.0}})

    def test_bad_quadric(self):
        with pytest.raises(ConfigError):
            cli._parse_quadric({"kind": "QC", "blocks": [{"a": [0, 0], "p": 1}]})


class TestRunScenario:
    def test_ivory_run_and_exit(self, tmp_path):
        report = cli.run_scenario({"scenario": "ivory-check", "samples": 200,
                                   "lame_samples": 10}, tmp_path / "run")
        assert report["passed"]
        assert (tmp_path / "run" / "report.json").exists()
        assert (tmp_path / "run" / "ivory_residuals.csv").exists()



    def test_unit_sphere_example(self, tmp_path):
        cfg = {"scenario": "ivory-check", "samples": 300, "lame_samples": 20,
               "quadric": {"kind": "QC", "blocks": [{"a": [1.0, 0.0], "p": 1},
                                                    {"a": [1.0, 0.0], "p": 1},
                                                    {"a": [1.0, 0.0], "p": 1}]}}
        report = cli.run_scenario(cfg, tmp_path / "sphere")
        assert report["passed"]
        for c in report["checks"]:
            if c["name"] != "lame_orthogonality":
                assert c["max_residual"] < 1e-10

    def test_residuals_bit_identical(self, tmp_path):
        cfg = {"scenario": "ivory-check", "samples": 100, "lame_samples": 5}
        r1 = cli.run_scenario(dict(cfg), tmp_path / "r1")
        r2 = cli.run_scenario(dict(cfg), tmp_path / "r2")
        v1 = [c["max_residual"] for c in r1["checks"]]
        v2 = [c["max_residual"] for c in r2["checks"]]
        assert v1 == v2
        a = (tmp_path / "r1" / "ivory_residuals.csv").read_bytes()
        b = (tmp_path / "r2" / "ivory_residuals.csv").read_bytes()
        assert a == b

    def test_cli_exit_codes(self, tmp_path):
        rc = cli.main(["run", "--scenario", "ivory-check", "--out",
                       str(tmp_path / "ok"), "--seed", "3"])
        assert rc == 0
        cfgfile = tmp_path / "bad.json"
        cfgfile.write_text(json.dumps({"scenario": "bpt",
                                       "z": [[0.3, 0.1], [0.3, 0.1]]}))
        rc = cli.main(["run", "--config", str(cfgfile), "--out",
                       str(tmp_path / "bad")])
        assert rc == 2

    def test_module_error_recorded_not_crash(self, tmp_path):
        # a non-admissible quadric: peterson check recorded as failed,
        # dependent checks skipped
        cfg = {"scenario": "deform-0soliton",
               "quadric": {"kind": "QWC",
                           "blocks": [{"a": [0.9, -0.2], "p": 2}]},
               "grid": {"axes": [[0.0, 0.2, 6], [0.0, 0.2, 6]]}}
        report = cli.run_scenario(cfg, tmp_path / "na")
        assert not report["passed"]
        assert len(report["checks"]) == 1
        assert report["checks"][0]["name"] == "peterson_admissible"

    def test_tolerance_table_embedded(self, tmp_path):
        report = cli.run_scenario({"scenario": "ivory-check", "samples": 50,
                                   "lame_samples": 5}, tmp_path / "t")
        assert "ivory_identities" in report["tolerances"]

    def test_tol_scale(self, tmp_path):
        report = cli.run_scenario({"scenario": "ivory-check", "samples": 50,
                                   "lame_samples": 5, "tol_scale": 10.0},
                                  tmp_path / "s")
        assert report["tolerances"]["ivory_identities"] == 1e-9


class TestPlotData:
    def test_missing_run(self, tmp_path):
        with pytest.raises(MissingRun):
            cli.emit_plotdata(tmp_path)

    def test_convergence_and_drift_tables(self, tmp_path):
        cfg = {"scenario": "backlund-qwc", "samples": 50,
               "grid": {"axes": [[0.0, 0.3, 16], [0.0, 0.3, 16]]}}
        cli.run_scenario(cfg, tmp_path / "bq")
        files = cli.emit_plotdata(tmp_path / "bq")
        names = {f.name for f in files}
        assert "convergence.csv" in names
        assert "convergence_fits.csv" in names
        assert "drift_vs_arclength.csv" in names
        fits = (tmp_path / "bq" / "convergence_fits.csv").read_text()
        slopes = {line.split(",")[0]: float(line.split(",")[1])
                  for line in fits.strip().split("\n")[1:]}
        assert abs(slopes["leaf_system_residual"] - 2.0) < 0.3
        assert abs(slopes["path_mismatch"] - 4.0) < 0.4

    def test_plotdata_deterministic(self, tmp_path):
        cfg = {"scenario": "backlund-qwc", "samples": 50,
               "grid": {"axes": [[0.0, 0.3, 16], [0.0, 0.3, 16]]}}
        cli.run_scenario(cfg, tmp_path / "p1")
        cli.run_scenario(cfg, tmp_path / "p2")
        cli.emit_plotdata(tmp_path / "p1")
        cli.emit_plotdata(tmp_path / "p2")
        a = (tmp_path / "p1" / "convergence.csv").read_bytes()
        b = (tmp_path / "p2" / "convergence.csv").read_bytes()
        assert a == b

    def test_lattice_heatmap(self, tmp_path):
        cfg = {"scenario": "lattice",
               "grid": {"axes": [[0.0, 0.25, 14], [0.0, 0.25, 14]]},
               "z": [[0.31, 0.12], [-0.2, 0.25]], "extent": [3, 3]}
        cli.run_scenario(cfg, tmp_path / "lat")
        files = cli.emit_plotdata(tmp_path / "lat")
        names = {f.name for f in files}
        assert "lattice_heatmap.csv" in names
        assert (tmp_path / "lat" / "lattice" / "index.json").exists()


class TestLeafExportRoundtrip:
    def test_scenario_leaf_reloads(self, tmp_path):
        cfg = {"scenario": "backlund-qwc", "samples": 20,
               "grid": {"axes": [[0.0, 0.2, 8], [0.0, 0.2, 8]]}}
        cli.run_scenario(cfg, tmp_path / "r")
        leaf = gridio.load_fieldgrid(tmp_path / "r" / "leaf")
        assert leaf.V.shape == (8, 8, 2)
        assert leaf.R.shape == (8, 8, 2, 2)
        import json
        header = json.loads((tmp_path / "r" / "leaf.json").read_text())
        assert "provenance" in header and "z" in header["provenance"]

    def test_help_exit(self, capsys):
        assert cli.main([]) == 2
