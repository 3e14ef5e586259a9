"""Config parsing, artifact round-trips, verification suites, CLI exit codes."""

import json
import math
import re

import numpy as np
import pytest

from lagflow import cli, expr
from lagflow.grids import GridSpec, ScalarField, TWO_PI
from lagflow.hamiltonian import HamiltonianSpec, integrate_isotopy, time_one_map
from lagflow.mcf import induced_geometry
from lagflow.torus_maps import TorusMap
from lagflow.session import (
    ConfigError,
    RunConfig,
    VERIFY_SUITES,
    VerifyRow,
    cmd_simulate,
    cmd_verify,
    emit_snapshot,
    emit_svg,
    load_config,
    load_snapshot,
    parse_config_text,
)


class TestConfigParsing:
    def test_minimal_config_fills_defaults(self):
        cfg = parse_config_text("n = 16\nhamiltonian = 0\nt_max = 1.0\n")
        assert cfg.n == 16
        assert cfg.t_max == 1.0
        assert cfg.m == 128
        assert cfg.scheme == "spectral"
        assert cfg.dt_safety == 0.5
        assert cfg.dt_fixed is None
        assert cfg.emit_svg is True
        assert cfg.seed == 0

    def test_comments_and_blanks_ignored(self):
        cfg = parse_config_text("# header\n\nn = 32  # inline\n")
        assert cfg.n == 32

    def test_quoted_expression_round_trips(self):
        cfg = parse_config_text('hamiltonian = "0.1*cos(x)*cos(y)"\n')
        assert cfg.hamiltonian == "0.1*cos(x)*cos(y)"
        ast = expr.parse(cfg.hamiltonian)
        assert expr.evaluate(ast, x=0.0, y=0.0, s=0.0) == pytest.approx(0.1, abs=1e-15)

    @pytest.mark.parametrize(
        "text, needle",
        [
            ("n = 7\n", "'n'"),
            ("n = 600\n", "'n'"),
            ("m = 5\n", "'m'"),
            ("m = 2\n", "'m'"),
            ("observer_interval = 0\n", "observer_interval"),
            ("scheme = upwind\n", "'scheme'"),
            ("hamiltonian = cos(\n", "hamiltonian"),
            ("integrator = leapfrog\n", "integrator"),
            ("conv_threshold = -1\n", "conv_threshold"),
            ("bogus_key = 3\n", "unknown config key"),
            ("n = sixteen\n", "'n'"),
        ],
    )
    def test_validation_errors_name_the_key(self, text, needle):
        with pytest.raises(ConfigError, match=re.escape(needle)):
            parse_config_text(text)

    def test_parse_error_reports_line_number(self):
        with pytest.raises(ConfigError, match=r"<config>:2"):
            parse_config_text("n = 16\nnot a key value line\n")

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config_text("n = 16\nn = 32\n")

    def test_optional_dt_fixed(self):
        assert parse_config_text("dt_fixed = none\n").dt_fixed is None
        assert parse_config_text("dt_fixed = 0.01\n").dt_fixed == 0.01

    def test_bool_parsing(self):
        assert parse_config_text("emit_svg = false\n").emit_svg is False
        assert parse_config_text("emit_svg = on\n").emit_svg is True
        with pytest.raises(ConfigError, match="emit_svg"):
            parse_config_text("emit_svg = maybe\n")

    def test_load_config_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "absent.cfg")

    def test_load_config_reads_file(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("n = 24\nseed = 7\n", encoding="utf-8")
        cfg = load_config(p)
        assert cfg.n == 24
        assert cfg.seed == 7


@pytest.fixture(scope="module")
def small_state():
    grid = GridSpec(16)
    iso = integrate_isotopy(HamiltonianSpec.from_expression("0.1*cos(x)*cos(y)"), grid, 8)
    return induced_geometry(time_one_map(iso))


class TestSnapshot:
    def test_identity_snapshot_layout(self, tmp_path):
        grid = GridSpec(16)
        state = induced_geometry(TorusMap.identity(grid))
        path = tmp_path / "snap.lmcf"
        emit_snapshot(state, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "LMCF1 16 0 spectral"
        assert len(lines) == 1 + 3 * 16
        f, theta, t = load_snapshot(path)
        assert t == 0.0
        assert np.all(f.u.x.values == 0.0)
        assert np.all(f.u.y.values == 0.0)
        assert np.all(theta.values == -np.pi / 2)

    def test_round_trip_is_exact(self, small_state, tmp_path):
        path = tmp_path / "snap.lmcf"
        emit_snapshot(small_state, path, t=1.25)
        f, theta, t = load_snapshot(path)
        assert t == 1.25
        assert np.array_equal(f.u.x.values, small_state.f.u.x.values)
        assert np.array_equal(f.u.y.values, small_state.f.u.y.values)

    def test_wrong_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.lmcf"
        path.write_text("NOPE 16 0 spectral\n")
        with pytest.raises(ValueError, match="LMCF1"):
            load_snapshot(path)

    def test_truncated_rejected(self, small_state, tmp_path):
        path = tmp_path / "snap.lmcf"
        emit_snapshot(small_state, path)
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:20]) + "\n")
        with pytest.raises(ValueError, match="truncated"):
            load_snapshot(path)


class TestSvg:
    def test_heatmap_structure(self, small_state, tmp_path):
        from lagflow import diagnostics

        theta = diagnostics.lagrangian_angle(small_state).theta
        path = tmp_path / "theta.svg"
        emit_svg(theta, path, title="angle")
        text = path.read_text()
        assert text.startswith("<svg")
        assert text.count("<rect") == 16 * 16
        got = re.search(r"min=([^<\s]+) max=([^<\s]+)", text)
        assert float(got.group(1)) == theta.values.min()
        assert float(got.group(2)) == theta.values.max()

    def test_constant_field_renders_midscale(self, tmp_path):
        grid = GridSpec(16)
        field = ScalarField(grid, np.full((16, 16), 2.5))
        path = tmp_path / "flat.svg"
        emit_svg(field, path)
        text = path.read_text()
        assert text.count("#ffffff") == 16 * 16
        assert "min=2.5 max=2.5" in text


def run_cfg(tmp_path, **kwargs):
    kwargs.setdefault("n", 16)
    kwargs.setdefault("m", 8)
    kwargs.setdefault("out", str(tmp_path / "out"))
    return RunConfig(**kwargs)


class TestSimulate:
    def test_identity_hamiltonian_converges_single_row(self, tmp_path):
        from pathlib import Path

        cfg = run_cfg(tmp_path, hamiltonian="0", m=4)
        report = cmd_simulate(cfg)
        assert report.termination == "converged"
        assert report.error is None
        for f in report.files:
            assert Path(f).exists()
        series = (Path(cfg.out) / "series.csv").read_text().splitlines()
        assert series[0] == "t,area,maxH,defect,flux_px,flux_py,angle_spread,w_x,w_y"
        assert len(series) == 2
        assert series[1].startswith("0,")

    def test_translation_only_reports_constant_periods(self, tmp_path):
        cfg = run_cfg(tmp_path, hamiltonian="0", m=4, translation_a=1.0)
        report = cmd_simulate(cfg)
        assert report.termination == "converged"
        assert report.invariants["flux_px"] == pytest.approx(0.0, abs=1e-10)
        assert report.invariants["flux_py"] == pytest.approx(TWO_PI, abs=1e-10)
        assert report.invariants["area"] == pytest.approx(8 * math.pi**2, rel=1e-12)

    def test_series_is_byte_identical_across_runs(self, tmp_path):
        from pathlib import Path

        blobs = []
        for name in ("a", "b"):
            cfg = run_cfg(tmp_path / name, t_max=0.1)
            cmd_simulate(cfg)
            blobs.append((Path(cfg.out) / "series.csv").read_bytes())
        assert blobs[0] == blobs[1]

    def test_aborted_run_preserves_partial_outputs(self, tmp_path):
        from pathlib import Path

        cfg = run_cfg(tmp_path, dt_fixed=1.0, t_max=5.0)
        report = cmd_simulate(cfg)
        assert report.termination == "aborted"
        assert "stability" in report.error
        assert (Path(cfg.out) / "series.csv").exists()
        assert (Path(cfg.out) / "report.json").exists()

    def test_pipeline_error_recorded_in_report(self, tmp_path):
        from pathlib import Path

        cfg = run_cfg(tmp_path, hamiltonian="0.06*cos(2*x)*cos(y)", m=4)
        report = cmd_simulate(cfg)
        assert report.termination == "error"
        assert "IsotopyError" in report.error
        payload = json.loads((Path(cfg.out) / "report.json").read_text())
        assert payload["error"] == report.error

    def test_observer_interval_decimates_series(self, tmp_path):
        from pathlib import Path

        rows = {}
        for every in (1, 2):
            cfg = run_cfg(tmp_path / str(every), t_max=0.08, observer_interval=every)
            cmd_simulate(cfg)
            rows[every] = (Path(cfg.out) / "series.csv").read_text().splitlines()[1:]
        full = len(rows[1])
        expected = len(range(0, full, 2)) + (0 if (full - 1) % 2 == 0 else 1)
        assert len(rows[2]) == expected
        assert rows[2][-1] == rows[1][-1]

    def test_snapshot_cadence(self, tmp_path):
        from pathlib import Path

        cfg = run_cfg(tmp_path, t_max=0.08, snapshot_interval=2)
        report = cmd_simulate(cfg)
        snaps = sorted(Path(cfg.out).glob("snapshot_*.lmcf"))
        assert len(snaps) >= 2
        assert str(snaps[0]) in report.files
        f, theta, t = load_snapshot(snaps[0])
        assert t == 0.0
        assert np.isfinite(theta.values).all()

    def test_svg_emitted_for_healthy_run(self, tmp_path):
        from pathlib import Path

        cfg = run_cfg(tmp_path, t_max=0.05)
        report = cmd_simulate(cfg)
        svg = Path(cfg.out) / "theta.svg"
        assert svg.exists()
        assert str(svg) in report.files
        got = re.search(r"min=([^<\s]+) max=([^<\s]+)", svg.read_text())
        spread = float(got.group(2)) - float(got.group(1))
        assert spread == pytest.approx(report.invariants["angle_spread"], rel=1e-12)


class TestVerifyRows:
    def test_comparators(self):
        assert VerifyRow("a", 1.0, 2.0, "<=").passed
        assert not VerifyRow("a", 3.0, 2.0, "<=").passed
        assert VerifyRow("a", 3.0, 2.0, ">=").passed
        with pytest.raises(ValueError, match="comparator"):
            VerifyRow("a", 1.0, 2.0, "~").passed


class TestVerifySuites:
    def test_stationary_suite_passes(self, tmp_path):
        cfg = run_cfg(tmp_path)
        report = cmd_verify(cfg, "stationary")
        assert report.passed is True
        assert report.termination == "verified"
        assert set(report.invariants) == {
            "identity_c0_change",
            "identity_max_h",
            "translation_c0_change",
            "translation_max_h",
        }

    def test_verify_csv_layout(self, tmp_path):
        from pathlib import Path

        cfg = run_cfg(tmp_path)
        cmd_verify(cfg, "stationary")
        lines = (Path(cfg.out) / "verify.csv").read_text().splitlines()
        assert lines[0] == "check,measured,threshold,comparator,pass"
        assert all(line.endswith(",true") for line in lines[1:])

    def test_flux_suite_passes(self, tmp_path):
        cfg = run_cfg(tmp_path, n=32, m=8)
        report = cmd_verify(cfg, "flux")
        assert report.passed is True
        assert "flux_coscos" in report.invariants
        assert "flux_s_dependent" in report.invariants
        assert report.invariants["translation_py_error"] <= 1e-10

    def test_angle_suite_passes(self, tmp_path):
        cfg = run_cfg(tmp_path, n=32, m=8)
        report = cmd_verify(cfg, "angle")
        assert report.passed is True
        assert report.invariants["angle_refinement_ratio"] >= 4.0

    def test_two_param_suite_passes(self, tmp_path):
        cfg = run_cfg(tmp_path, n=16, m=8)
        report = cmd_verify(cfg, "two_param")
        assert report.passed is True
        assert report.invariants["refinement_ratio"] >= 2.0
        assert report.invariants["period_gap_x"] <= 1e-6

    def test_angle_suite_needs_room_to_coarsen(self, tmp_path):
        cfg = run_cfg(tmp_path, n=12, m=8)
        with pytest.raises(ConfigError, match="'n'"):
            cmd_verify(cfg, "angle")

    def test_two_param_staging_constraint(self, tmp_path):
        cfg = run_cfg(tmp_path, m=6)
        with pytest.raises(ConfigError, match="'m'"):
            cmd_verify(cfg, "two_param")

    def test_unknown_suite(self, tmp_path):
        cfg = run_cfg(tmp_path)
        with pytest.raises(ConfigError, match="suite"):
            cmd_verify(cfg, "everything")


class TestCli:
    def test_info(self, capsys):
        assert cli.main(["info"]) == 0
        out = capsys.readouterr().out
        assert "conventions" in out
        assert "X_G" in out

    def test_simulate_exit_zero(self, tmp_path, capsys):
        p = tmp_path / "run.cfg"
        p.write_text("n = 16\nm = 4\nhamiltonian = 0\n", encoding="utf-8")
        code = cli.main(["simulate", "--config", str(p), "--out", str(tmp_path / "o")])
        assert code == 0
        assert "converged" in capsys.readouterr().out

    def test_simulate_exit_nonzero_on_abort(self, tmp_path, capsys):
        p = tmp_path / "run.cfg"
        p.write_text("n = 16\nm = 8\ndt_fixed = 1.0\nt_max = 5.0\n", encoding="utf-8")
        code = cli.main(["simulate", "--config", str(p), "--out", str(tmp_path / "o")])
        assert code == 1

    def test_bad_config_exit_two(self, tmp_path, capsys):
        p = tmp_path / "run.cfg"
        p.write_text("n = 7\n", encoding="utf-8")
        code = cli.main(["simulate", "--config", str(p)])
        assert code == 2
        assert "error:" in capsys.readouterr().err

    def test_verify_exit_codes(self, tmp_path, capsys, monkeypatch):
        p = tmp_path / "run.cfg"
        p.write_text("n = 16\nm = 8\n", encoding="utf-8")
        code = cli.main(
            ["verify", "--suite", "stationary", "--config", str(p), "--out", str(tmp_path / "v")]
        )
        assert code == 0
        assert "PASS" in capsys.readouterr().out

        monkeypatch.setitem(VERIFY_SUITES, "always_fail", lambda cfg: [VerifyRow("x", 1.0, 0.5, "<=")])
        code = cli.main(
            ["verify", "--suite", "always_fail", "--config", str(p), "--out", str(tmp_path / "w")]
        )
        assert code == 1
        assert "FAIL" in capsys.readouterr().out
        table = (tmp_path / "w" / "verify.csv").read_text().splitlines()
        assert table[1].endswith(",false")
