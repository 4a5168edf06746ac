"""
Integration tests for the command-line front end
Runs subcommands end to end through main() and inspects the files they write
"""

import json
from pathlib import Path
from unittest.mock import patch

import pandas as pd
import pytest

from src.dephydro import cli
from src.dephydro.cli import EXIT_FAILED, EXIT_OK, EXIT_USAGE, main
from src.dephydro.errors import AuditViolation

pytestmark = pytest.mark.integration

SMALL_SWEEP = ["--set", "riemann.sweep_states=4", "--set", "riemann.sweep_speeds=21"]


@pytest.fixture(autouse=True)
def isolated(tmp_path, monkeypatch):
    """Run from a scratch directory so log files and default outputs stay out of the repo"""
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("DEPHYDRO_SEED", raising=False)
    return tmp_path


def _read_lines(path: Path):
    return path.read_text().splitlines()


# ============================================
# Conservation-law subcommands
# ============================================

class TestRiemannCommand:
    """Test the riemann subcommand"""

    def test_writes_curve_report_and_echo(self, isolated):
        out = isolated / "riemann"
        code = main(["riemann", "--lambda", "1", "--rho", "0", "--t", "1", "--grid", "2001",
                     "--out", str(out)] + SMALL_SWEEP)
        assert code == EXIT_OK
        assert {p.name for p in out.iterdir()} >= {"riemann.csv", "report.json", "config.echo", "meta.json"}
        curve = pd.read_csv(out / "riemann.csv")
        assert list(curve.columns) == ["v", "u"]
        assert len(curve) == 2001
        # fan on (-2, 1/4], zero ahead of the shock
        assert curve.loc[curve["v"] > 0.26, "u"].eq(0.0).all()
        assert curve.loc[curve["v"] <= -2.0, "u"].eq(1.0).all()

        report = json.loads((out / "report.json").read_text())
        assert report["kind"] == "riemann"
        assert report["passed"] is True
        assert list(report) == ["kind", "version", "seed", "passed", "exploratory", "checks", "summary", "tables"]

    def test_output_is_newline_terminated(self, isolated):
        out = isolated / "r"
        assert main(["riemann", "--t", "1", "--grid", "11", "--out", str(out)] + SMALL_SWEEP) == EXIT_OK
        text = (out / "riemann.csv").read_text()
        assert text.startswith("v,u\n")
        assert text.endswith("\n")

    def test_echo_records_flags(self, isolated):
        out = isolated / "r"
        main(["riemann", "--lambda", "0.2", "--rho", "0.4", "--t", "2", "--out", str(out)] + SMALL_SWEEP)
        echo = _read_lines(out / "config.echo")
        assert "profile.lambda = 0.2" in echo
        assert "profile.rho = 0.4" in echo
        assert "time.horizon = 2.0" in echo
        assert 'experiment.kind = "riemann"' in echo


class TestGodunovCommand:
    """Test the godunov subcommand"""

    def test_coarse_mesh_fails_the_accuracy_check(self, isolated, capsys):
        out = isolated / "g"
        code = main(["godunov", "--lambda", "1", "--rho", "0", "--t", "0.5", "--dx", "0.05",
                     "--set", "godunov.half_width=1.5", "--out", str(out)])
        assert code == EXIT_FAILED
        assert "failed: l1_finest" in capsys.readouterr().out
        profile = pd.read_csv(out / "profile_godunov.csv")
        assert list(profile.columns) == ["x_macro", "empirical", "reference", "abs_err"]
        assert (out / "mesh.csv").exists()

    def test_cfl_above_half_is_a_usage_error(self, isolated):
        out = isolated / "g"
        assert main(["godunov", "--cfl", "0.6", "--dx", "0.05", "--t", "0.2", "--out", str(out)]) == EXIT_USAGE
        assert not out.exists()


class TestFluxCheckCommand:
    """Test the flux-check subcommand"""

    def test_passes_with_table(self, isolated, capsys):
        out = isolated / "flux"
        assert main(["flux-check", "--out", str(out)]) == EXIT_OK
        assert "flux-check: PASS" in capsys.readouterr().out
        lines = _read_lines(out / "flux_check.csv")
        assert lines[0] == "rho,expectation,flux,abs_diff"
        assert len(lines) == 102

    def test_reruns_are_byte_identical(self, isolated):
        first, second = isolated / "a", isolated / "b"
        assert main(["flux-check", "--out", str(first)]) == EXIT_OK
        assert main(["flux-check", "--out", str(second)]) == EXIT_OK
        for name in ("flux_check.csv", "report.json", "config.echo"):
            assert (first / name).read_bytes() == (second / name).read_bytes()
        meta = json.loads((first / "meta.json").read_text())
        assert {"version", "timestamp", "argv", "wall_clock_s", "stages"} <= set(meta)


# ============================================
# Configuration handling
# ============================================

class TestConfigHandling:
    """Test config files, overrides and the environment seed"""

    def test_config_file_and_output_dir(self, isolated):
        conf = isolated / "run.conf"
        out = isolated / "from_config"
        conf.write_text(f'# flux run\nexperiment.seed = 5\noutput.dir = "{out.as_posix()}"\n')
        assert main(["flux-check", "--config", str(conf)]) == EXIT_OK
        assert json.loads((out / "report.json").read_text())["seed"] == 5

    def test_default_output_dir(self, isolated):
        assert main(["flux-check"]) == EXIT_OK
        assert (isolated / "results" / "report.json").exists()

    def test_environment_seed(self, isolated, monkeypatch):
        monkeypatch.setenv("DEPHYDRO_SEED", "4242")
        out = isolated / "env"
        assert main(["flux-check", "--out", str(out)]) == EXIT_OK
        assert json.loads((out / "report.json").read_text())["seed"] == 4242

    def test_set_beats_environment_seed(self, isolated, monkeypatch):
        monkeypatch.setenv("DEPHYDRO_SEED", "4242")
        out = isolated / "env"
        assert main(["flux-check", "--set", "experiment.seed=7", "--out", str(out)]) == EXIT_OK
        assert json.loads((out / "report.json").read_text())["seed"] == 7

    def test_echo_reparses(self, isolated):
        out = isolated / "echo"
        main(["flux-check", "--out", str(out)])
        again = isolated / "again"
        assert main(["flux-check", "--config", str(out / "config.echo"), "--out", str(again)]) == EXIT_OK
        assert (out / "config.echo").read_text() == (again / "config.echo").read_text()


# ============================================
# Exit codes
# ============================================

class TestExitCodes:
    """Test the exit-code contract and that usage errors write nothing"""

    def test_missing_config_file(self, isolated):
        out = isolated / "never"
        assert main(["flux-check", "--config", str(isolated / "absent.conf"), "--out", str(out)]) == EXIT_USAGE
        assert not out.exists()

    def test_unknown_key(self, isolated):
        out = isolated / "never"
        assert main(["flux-check", "--set", "experiment.colour=blue", "--out", str(out)]) == EXIT_USAGE
        assert not out.exists()

    def test_window_too_small(self, isolated):
        out = isolated / "never"
        code = main(["hydro-riemann", "--set", "window.speed=1", "--set", "time.horizon=1", "--out", str(out)])
        assert code == EXIT_USAGE
        assert not out.exists()

    def test_strong_hydro_with_gillespie(self, isolated):
        out = isolated / "never"
        assert main(["strong-hydro", "--set", "dynamics.mode=gillespie", "--out", str(out)]) == EXIT_USAGE
        assert not out.exists()

    def test_finite_prop_horizon_beyond_interval(self, isolated):
        out = isolated / "never"
        code = main(["finite-prop", "--set", "finite_prop.horizon=50", "--out", str(out)])
        assert code == EXIT_USAGE
        assert not out.exists()

    def test_malformed_test_function(self, isolated):
        out = isolated / "never"
        code = main(["hydro-riemann", "--set", 'observables.test_functions="hat:left"', "--out", str(out)])
        assert code == EXIT_USAGE
        assert not out.exists()

    def test_unknown_subcommand_and_option(self):
        assert main(["forecast"]) == EXIT_USAGE
        assert main(["riemann", "--bogus"]) == EXIT_USAGE

    def test_version_and_help(self, capsys):
        assert main(["--version"]) == EXIT_OK
        assert "dephydro" in capsys.readouterr().out
        assert main(["riemann", "--help"]) == EXIT_OK

    def test_audit_violation_is_a_failure(self, isolated):
        out = isolated / "never"
        violation = AuditViolation("count increased", 12, {"site": 3}, (0, 1))
        with patch.object(cli, "run_experiment", side_effect=violation):
            assert main(["coupling", "--out", str(out)]) == EXIT_FAILED
        assert not out.exists()

    def test_write_failure_is_a_failure(self, isolated):
        with patch.object(cli, "emit_outputs", side_effect=OSError("read-only file system")):
            assert main(["flux-check", "--out", str(isolated / "ro")]) == EXIT_FAILED


# ============================================
# Pipelines through the CLI at toy sizes
# ============================================

class TestPipelines:
    """Test that particle-system subcommands emit their file sets"""

    def test_hydro_riemann_profiles(self, isolated):
        out = isolated / "hydro"
        code = main(["hydro-riemann", "--set", "scales.n=40, 80", "--set", "experiment.replicas=2",
                     "--set", "time.horizon=0.2", "--set", "window.half_width=1.0",
                     "--set", "observables.test_functions=hat", "--jobs", "1", "--out", str(out)])
        assert code in (EXIT_OK, EXIT_FAILED)
        for name in ("profile_n40.csv", "profile_n80.csv", "scales.csv", "replicas.csv", "report.json"):
            assert (out / name).exists(), name
        assert _read_lines(out / "profile_n40.csv")[0] == "x_macro,empirical,reference,abs_err"

    def test_halfline_is_exploratory(self, isolated, capsys):
        out = isolated / "half"
        code = main(["halfline", "--set", "halfline.length=200", "--set", "halfline.ells=4, 8",
                     "--set", "halfline.t_burn=5", "--set", "halfline.t_sample=10",
                     "--set", "halfline.samples=8", "--set", "halfline.batches=2",
                     "--set", "halfline.wall_block=8", "--out", str(out)])
        assert code == EXIT_OK
        assert "(exploratory)" in capsys.readouterr().out
        assert _read_lines(out / "series_wall_density.csv")[0] == "t,value,stderr"
        assert json.loads((out / "report.json").read_text())["exploratory"] is True
