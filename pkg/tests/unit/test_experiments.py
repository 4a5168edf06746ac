"""
Unit tests for experiment pipelines at toy sizes
"""

import json
from unittest.mock import patch

import numpy as np
import pytest

from src.dephydro import experiments
from src.dephydro.config import Settings, load_config
from src.dephydro.coupling import AnnihilationEstimate
from src.dephydro.errors import ConfigError, DomainError
from src.dephydro.experiments import (
    EXPERIMENTS,
    CheckResult,
    Report,
    hydro_window,
    profile_from_config,
    remark_equality_pattern,
    riemann_sweep,
    run_coupling_suite,
    run_experiment,
    run_finite_propagation,
    run_flux_check,
    run_fluctuations,
    run_godunov,
    run_halfline,
    run_hydro_riemann,
    run_riemann_table,
    run_stationarity,
    run_strong_hydro,
    shock_position_tolerance,
)

pytestmark = pytest.mark.unit


@pytest.fixture
def make_config():
    def _make(*overrides):
        return load_config(overrides=list(overrides), env=Settings(seed=None))
    return _make


def _check(report: Report, name: str) -> CheckResult:
    matches = [c for c in report.checks if c.name == name]
    assert matches, f"no check named {name}"
    return matches[0]


class TestReport:
    """Test verdict aggregation and serialization"""

    def test_exploratory_checks_do_not_gate(self):
        report = Report("demo", 1)
        report.add(CheckResult("a", "exact", True, 0.0, 1.0))
        report.add(CheckResult("b", "exploratory", False))
        assert report.passed
        report.add(CheckResult("c", "statistical", False, float("nan")))
        assert not report.passed
        assert report.failed_checks == ["c"]

    def test_to_dict_layout(self):
        report = Report("demo", 3)
        report.add(CheckResult("a", "exact", True, np.float64(0.5), None, {"n": np.int64(4)}))
        data = report.to_dict()
        assert list(data) == ["kind", "version", "seed", "passed", "exploratory", "checks", "summary", "tables"]
        assert data["checks"][0]["detail"] == {"n": 4}
        assert json.loads(json.dumps(data)) == data

    def test_non_finite_values_become_null(self):
        check = CheckResult("x", "statistical", False, float("inf"), [np.nan, 1.0])
        assert check.to_dict()["measured"] is None
        assert check.to_dict()["threshold"] == [None, 1.0]


class TestWindowPolicy:
    """Test window sizing and its failures"""

    def test_window_size(self, make_config):
        config = make_config("window.half_width=1.0", "window.speed=5", "time.horizon=0.2")
        window = hydro_window(config, 100)
        # ceil(100 * (1.0 + 5 * 0.2 + 0.5))
        assert window.half_sites == 250
        assert window.topology.L == 501
        assert window.origin == 251
        assert window.coords[0] == -250 and window.coords[-1] == 250
        assert window.eps == 0.01

    def test_padding_too_small(self, make_config):
        config = make_config("window.speed=1", "time.horizon=1.0")
        with pytest.raises(DomainError):
            hydro_window(config, 100)

    def test_window_too_large(self, make_config):
        config = make_config("window.max_sites=100")
        with pytest.raises(DomainError):
            hydro_window(config, 200)

    def test_profile_from_config(self, make_config):
        config = make_config("profile.kind=table", "profile.breakpoints=0, 1, 2", "profile.values=0.9, 0.1")
        assert profile_from_config(config).edge_values == (0.9, 0.1)
        with pytest.raises(ConfigError):
            profile_from_config(make_config("profile.kind=table", "profile.breakpoints=0, 1", "profile.values=0.9, 0.1"))


class TestConservationLawRuns:
    """Test the PDE-only experiments"""

    def test_flux_check(self, make_config):
        report = run_flux_check(make_config())
        assert report.passed
        table = report.tables["flux_check"]
        assert list(table.columns) == ["rho", "expectation", "flux", "abs_diff"]
        assert len(table) == 101

    def test_riemann_table(self, make_config):
        config = make_config("profile.lambda=1.0", "profile.rho=0.0", "time.horizon=1.0",
                             "riemann.grid=301", "riemann.sweep_states=6", "riemann.sweep_speeds=61")
        report = run_riemann_table(config)
        assert report.passed
        assert list(report.curve.columns) == ["v", "u"]
        assert len(report.curve) == 301
        [jump] = report.summary["jumps"]
        assert jump["speed"] == pytest.approx(0.25)

    def test_riemann_needs_positive_time(self, make_config):
        with pytest.raises(ConfigError):
            run_riemann_table(make_config("time.horizon=0"))

    def test_riemann_sweep(self):
        sweep = riemann_sweep(5, 41)
        assert sweep["cases"] == 5 * 5 * 41
        assert sweep["bad_jumps"] == 0
        assert sweep["oracle_gap"] <= 1e-10

    def test_godunov_step(self, make_config):
        config = make_config("profile.lambda=1.0", "profile.rho=0.0", "time.horizon=0.5",
                             "godunov.dx=0.01", "godunov.half_width=1.5")
        report = run_godunov(config)
        assert _check(report, "mass_balance").passed
        assert _check(report, "values_in_unit_interval").passed
        assert _check(report, "l1_mesh_decreasing").passed
        assert list(report.tables["mesh"]["dx"]) == pytest.approx([0.04, 0.02, 0.01])
        assert list(report.profiles["godunov"].columns) == ["x_macro", "empirical", "reference", "abs_err"]
        assert _check(report, "jump0_position").detail["tolerance"] == pytest.approx(0.02 * 0.25)

    def test_shock_position_tolerance(self):
        assert shock_position_tolerance(0.25, 1.0, 1e-3) == pytest.approx(0.005)
        assert shock_position_tolerance(-0.25, 2.0, 1e-3) == pytest.approx(0.01)
        # a standing shock gets one cell
        assert shock_position_tolerance(0.0, 1.0, 1e-3) == 1e-3

    def test_godunov_constant_has_no_mesh_study(self, make_config):
        report = run_godunov(make_config("profile.kind=constant", "profile.value=0.3",
                                         "time.horizon=0.2", "godunov.dx=0.02"))
        assert report.passed
        assert "mesh" not in report.tables
        assert np.allclose(report.profiles["godunov"]["empirical"], 0.3)


class TestHydroRuns:
    """Test the particle-system comparisons at toy scales"""

    @pytest.fixture
    def hydro_config(self, make_config):
        return make_config(
            "experiment.replicas=2", "scales.n=40, 80", "time.horizon=0.2",
            "window.half_width=1.0", "profile.lambda=1.0", "profile.rho=0.0",
            "observables.test_functions=hat",
        )

    def test_hydro_riemann_tables(self, hydro_config):
        report = run_hydro_riemann(hydro_config)
        assert list(report.tables["scales"]["n"]) == [40, 80]
        assert len(report.tables["replicas"]) == 4
        assert report.tables["scales"]["l1_outliers"].between(0, 2).all()
        assert set(report.profiles) == {"n40", "n80"}
        names = [c.name for c in report.checks]
        assert names[:2] == ["l1_decreasing_in_n", "l1_at_largest_n"]
        assert "jump0_err_at_largest_n" in names
        assert report.summary["scales"] == [40, 80]

    def test_window_audit_reruns_on_a_wider_window(self, hydro_config):
        config = hydro_config.model_copy(update={"window": hydro_config.window.model_copy(update={"audit": True})})
        report = run_hydro_riemann(config)
        check = _check(report, "window_sufficiency")
        assert check.passed
        assert check.detail["n"] == 40
        assert check.measured < config.acceptance.window_audit_tolerance

    def test_hydro_riemann_needs_step(self, make_config):
        config = make_config("profile.kind=table", "profile.breakpoints=0, 1, 2", "profile.values=0.9, 0.1")
        with pytest.raises(ConfigError):
            run_hydro_riemann(config)

    def test_replicas_are_reproducible(self, hydro_config):
        first = run_hydro_riemann(hydro_config).tables["replicas"]
        second = run_hydro_riemann(hydro_config).tables["replicas"]
        assert first.equals(second)

    def test_strong_hydro_rejects_gillespie(self, hydro_config):
        config = hydro_config.model_copy(update={"dynamics": hydro_config.dynamics.model_copy(update={"mode": "gillespie"})})
        with pytest.raises(ConfigError):
            run_strong_hydro(config)

    def test_strong_hydro_is_bit_reproducible(self, hydro_config):
        config = hydro_config.model_copy(update={"time": hydro_config.time.model_copy(update={"snapshots": 2})})
        report = run_strong_hydro(config)
        assert _check(report, "bit_reproducible").passed
        assert list(report.tables["scales"]["n"]) == [40, 80]


class TestStationarityRun:
    """Test the stationarity suite at toy sizes"""

    def test_exact_checks(self, make_config):
        config = make_config(
            "stationarity.n_max=6", "stationarity.ring=64", "stationarity.replicas=4",
            "stationarity.horizon=5", "stationarity.current_ring=64", "stationarity.current_rhos=0.5",
            "stationarity.current_horizon=10", "stationarity.current_replicas=3",
            "stationarity.law_replicas=10",
        )
        report = run_stationarity(config)
        assert _check(report, "torus_identity").passed
        assert _check(report, "negative_control_detected").passed
        assert report.summary["identity_without_left_long_jump"] is True
        assert list(report.tables["identity"]["n"]) == [3, 4, 5, 6]
        assert "bond_current_rho_0.5" in [c.name for c in report.checks]
        assert "modes_equal_in_law" in [c.name for c in report.checks]


class TestCouplingRuns:
    """Test the coupling suite and finite propagation at toy sizes"""

    def test_remark_pattern(self):
        zeta, xi, y = remark_equality_pattern()
        assert zeta.topology.L == 11
        assert zeta.to_array()[y - 2 : y + 3].tolist() == [0, 0, 0, 1, 1]
        assert xi.to_array()[y - 2 : y + 3].tolist() == [0, 0, 0, 0, 1]

    def test_coupling_suite(self, make_config):
        config = make_config(
            "coupling.ring=32", "coupling.trials=6", "coupling.horizon=2",
            "coupling.monotone_trials=3", "coupling.monotone_horizon=5",
            "coupling.copies=3", "coupling.copy_trials=3", "coupling.gs_patterns=500",
            "coupling.annihilation_trials=20", "coupling.stationary_replicas=2",
            "coupling.stationary_horizon=2",
        )
        report = run_coupling_suite(config)
        for name in ("pair_audit_violations", "monotone_violations", "multi_copy_violations",
                     "attractiveness_inequalities", "tight_pattern_equality"):
            assert _check(report, name).passed, name
        assert _check(report, "opposite_signs_coexist").kind == "exploratory"
        audits = report.tables["audits"]
        assert len(audits) == 6 + 3 + 3
        assert audits["passed"].all()

    @pytest.mark.parametrize("annihilations,exposure,passed", [(180, 100.0, False), (3000, 1000.0, True)])
    def test_annihilation_rate_needs_lower_bound_above_two(self, make_config, annihilations, exposure, passed):
        config = make_config(
            "coupling.ring=32", "coupling.trials=2", "coupling.horizon=1",
            "coupling.monotone_trials=1", "coupling.monotone_horizon=1",
            "coupling.copies=2", "coupling.copy_trials=1", "coupling.gs_patterns=10",
            "coupling.stationary_replicas=1", "coupling.stationary_horizon=1",
        )
        estimate = AnnihilationEstimate(1000, annihilations, exposure)
        with patch.object(experiments, "annihilation_trials", return_value=estimate):
            report = run_coupling_suite(config)
        check = _check(report, "annihilation_rate")
        assert check.passed is passed
        assert check.measured == pytest.approx(annihilations / exposure)

    def test_finite_propagation(self, make_config):
        config = make_config("finite_prop.agree_length=100", "finite_prop.pad=50",
                             "finite_prop.horizon=2", "finite_prop.speed=10", "finite_prop.trials=20")
        report = run_finite_propagation(config)
        table = report.tables["finite_propagation"]
        assert list(table["label"]) == ["bound", "control"]
        assert (table["interval_lo"].iloc[0], table["interval_hi"].iloc[0]) == (70, 130)
        assert table["frequency"].iloc[1] < table["frequency"].iloc[0]
        assert _check(report, "slow_speed_control_fails").passed


class TestExploratoryRuns:
    """Test the half-line and fluctuation scans"""

    def test_halfline(self, make_config):
        config = make_config(
            "experiment.replicas=2", "halfline.length=200", "halfline.ells=4, 8",
            "halfline.t_burn=5", "halfline.t_sample=10", "halfline.samples=8",
            "halfline.batches=2", "halfline.wall_block=8",
        )
        report = run_halfline(config)
        assert report.exploratory and report.passed
        assert list(report.tables["variance"]["ell"]) == [4, 8]
        wall = report.series["wall_density"]
        assert len(wall) == 10
        assert list(wall.columns) == ["t", "value", "stderr"]

    def test_halfline_interval_too_long(self, make_config):
        with pytest.raises(DomainError):
            run_halfline(make_config("halfline.length=200", "halfline.ells=64"))

    def test_halfline_needs_enough_samples(self, make_config):
        with pytest.raises(ConfigError):
            run_halfline(make_config("halfline.length=200", "halfline.ells=4",
                                     "halfline.samples=3", "halfline.batches=2"))

    def test_fluctuations(self, make_config):
        config = make_config("fluctuations.eps=0.05", "fluctuations.times=0, 0.5",
                             "fluctuations.functions=hat", "fluctuations.replicas=5")
        report = run_fluctuations(config)
        assert report.passed and report.exploratory
        table = report.tables["variance"]
        assert list(table["t"]) == [0.0, 0.5]
        assert set(report.series) == {"eps0.05_hat"}


class TestDispatch:
    """Test experiment lookup"""

    def test_every_kind_registered(self):
        assert set(EXPERIMENTS) == {
            "stationarity", "coupling", "riemann", "godunov", "hydro-riemann", "hydro-cauchy",
            "strong-hydro", "finite-prop", "halfline", "fluctuations", "flux-check",
        }

    def test_run_experiment_uses_kind(self, make_config):
        report = run_experiment(make_config("experiment.kind=flux-check"))
        assert report.kind == "flux-check"


class TestStrongHydroConstant:
    """A full lattice never moves, so every pairing error vanishes"""

    def test_full_lattice_has_zero_error(self, make_config):
        config = make_config("profile.kind=constant", "profile.value=1.0", "scales.n=20, 40",
                             "time.horizon=0.2", "time.snapshots=2", "window.half_width=1.0",
                             "observables.test_functions=hat")
        report = run_strong_hydro(config)
        assert report.tables["replicas"]["sup_error"].max() == pytest.approx(0.0, abs=1e-12)
