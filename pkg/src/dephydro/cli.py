"""
Command-line front end for dephydro
One subcommand per experiment; writes CSV tables, a JSON report, a config echo and meta.json
"""

import json
import sys
import time
from datetime import datetime, timezone
from functools import wraps
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import click
import pandas as pd
from loguru import logger

from . import __version__
from .config import ExperimentConfig, dump_config, load_config, settings
from .errors import AuditViolation, CflError, ConfigError, DomainError
from .experiments import Report, run_experiment
from .monitoring import get_health_checker, get_performance_monitor

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2

PROFILE_COLUMNS = ["x_macro", "empirical", "reference", "abs_err"]
SERIES_COLUMNS = ["t", "value", "stderr"]
CURVE_COLUMNS = ["v", "u"]


def setup_logging(verbose: bool = False, log_file: Optional[str] = None) -> None:
    level = "DEBUG" if verbose else settings.log_level
    logger.remove()
    logger.add(sys.stderr, level=level)
    log_file = log_file if log_file is not None else settings.log_file
    if log_file:
        logger.add(log_file, level=level, rotation="10 MB", retention=5)


# ============================================
# Emitters
# ============================================

def _write_csv(df: pd.DataFrame, path: Path, columns: Optional[List[str]] = None) -> Path:
    if columns is not None:
        df = df.reindex(columns=columns)
    df.to_csv(path, index=False, lineterminator="\n", float_format="%.12g")
    return path


def emit_profile_csv(df: pd.DataFrame, path: Path) -> Path:
    return _write_csv(df, path, PROFILE_COLUMNS)


def emit_series_csv(df: pd.DataFrame, path: Path) -> Path:
    return _write_csv(df, path, SERIES_COLUMNS)


def emit_curve_csv(df: pd.DataFrame, path: Path) -> Path:
    return _write_csv(df, path, CURVE_COLUMNS)


def emit_report_json(report: Report, out_dir: Path) -> Path:
    path = out_dir / "report.json"
    path.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    return path


def emit_meta_json(out_dir: Path, argv: Sequence[str], wall_clock: float) -> Path:
    """Everything that legitimately differs between reruns lives here"""
    meta = {
        "version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "argv": list(argv),
        "wall_clock_s": wall_clock,
        "health": get_health_checker().get_system_health(),
        "rss_mb": get_health_checker().rss_mb(),
        "stages": get_performance_monitor().all_stats(),
    }
    path = out_dir / "meta.json"
    path.write_text(json.dumps(meta, indent=2, default=str) + "\n")
    return path


def emit_outputs(report: Report, config: ExperimentConfig, out_dir: Path) -> List[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    written = [out_dir / "config.echo"]
    written[0].write_text(dump_config(config))
    for name, df in report.profiles.items():
        written.append(emit_profile_csv(df, out_dir / f"profile_{name}.csv"))
    for name, df in report.series.items():
        written.append(emit_series_csv(df, out_dir / f"series_{name}.csv"))
    for name, df in report.tables.items():
        written.append(_write_csv(df, out_dir / f"{name}.csv"))
    if report.curve is not None:
        written.append(emit_curve_csv(report.curve, out_dir / f"{report.kind}.csv"))
    written.append(emit_report_json(report, out_dir))
    return written


# ============================================
# Runner
# ============================================

def _float_override(key: str, value: Optional[float]) -> List[str]:
    return [] if value is None else [f"{key}={value!r}"]


def execute(kind: str, config_path: Optional[str], sets: Sequence[str], out: Optional[str],
            jobs: Optional[int], extra: Sequence[str] = ()) -> int:
    """Load, run, emit; returns the process exit code"""
    started = time.perf_counter()
    overrides = list(extra) + list(sets) + [f'experiment.kind="{kind}"']
    if jobs is not None:
        overrides.append(f"experiment.jobs={jobs}")
    elif settings.jobs > 1:
        overrides.insert(0, f"experiment.jobs={settings.jobs}")

    try:
        config = load_config(config_path, overrides)
        report = run_experiment(config)
    except (ConfigError, DomainError, CflError) as e:
        logger.error(f"Configuration error: {e}")
        click.echo(f"error: {e}", err=True)
        return EXIT_USAGE
    except AuditViolation as e:
        logger.error(f"Hard invariant violated: {e}")
        click.echo(f"audit violation: {e}", err=True)
        return EXIT_FAILED

    out_dir = Path(out or config.output.dir or settings.output_dir)
    try:
        written = emit_outputs(report, config, out_dir)
        emit_meta_json(out_dir, sys.argv, time.perf_counter() - started)
    except OSError as e:
        logger.error(f"Error writing outputs to {out_dir}: {e}")
        click.echo(f"error: cannot write outputs: {e}", err=True)
        return EXIT_FAILED

    logger.info(f"Wrote {len(written) + 1} files to {out_dir}")
    status = "PASS" if report.passed else "FAIL"
    if report.exploratory:
        status += " (exploratory)"
    click.echo(f"{kind}: {status}")
    for name in report.failed_checks:
        click.echo(f"  failed: {name}")
    return EXIT_OK if report.passed else EXIT_FAILED


def common_options(fn: Callable) -> Callable:
    @click.option("--config", "config_path", type=click.Path(), default=None, help="Experiment config file")
    @click.option("--set", "sets", multiple=True, metavar="SECTION.KEY=VALUE", help="Override one config key")
    @click.option("--out", type=click.Path(), default=None, help="Output directory")
    @click.option("--jobs", type=int, default=None, help="Cap on concurrent replicas")
    @click.option("-v", "--verbose", is_flag=True, help="Debug logging")
    @wraps(fn)
    def wrapper(config_path, sets, out, jobs, verbose, **kwargs):
        setup_logging(verbose)
        return fn(config_path=config_path, sets=sets, out=out, jobs=jobs, **kwargs)

    return wrapper


def step_options(fn: Callable) -> Callable:
    @click.option("--lambda", "lam", type=float, default=None, help="Left state")
    @click.option("--rho", type=float, default=None, help="Right state")
    @click.option("--t", "t", type=float, default=None, help="Time")
    @wraps(fn)
    def wrapper(lam, rho, t, **kwargs):
        extra = []
        if lam is not None or rho is not None:
            extra.append("profile.kind=step")
        extra += _float_override("profile.lambda", lam)
        extra += _float_override("profile.rho", rho)
        extra += _float_override("time.horizon", t)
        return fn(extra=extra, **kwargs)

    return wrapper


@click.group()
@click.version_option(__version__, prog_name="dephydro")
def cli():
    """Directed exclusion process: simulations, coupling audits and hydrodynamic checks"""


@cli.command("riemann")
@common_options
@step_options
@click.option("--grid", type=int, default=None, help="Number of sample points on [-A, A]")
def riemann_cmd(config_path, sets, out, jobs, extra, grid):
    """Entropy solution of a Riemann problem sampled at x / t"""
    extra = list(extra) + ([f"riemann.grid={grid}"] if grid is not None else [])
    return execute("riemann", config_path, sets, out, jobs, extra)


@cli.command("godunov")
@common_options
@step_options
@click.option("--dx", type=float, default=None, help="Mesh size")
@click.option("--cfl", type=float, default=None, help="CFL number (at most 0.5)")
def godunov_cmd(config_path, sets, out, jobs, extra, dx, cfl):
    """Finite-volume reference solution with convergence checks"""
    extra = list(extra) + _float_override("godunov.dx", dx) + _float_override("godunov.cfl", cfl)
    return execute("godunov", config_path, sets, out, jobs, extra)


def _plain_command(kind: str, help_text: str) -> None:
    @common_options
    def command(config_path, sets, out, jobs):
        return execute(kind, config_path, sets, out, jobs)

    command.__doc__ = help_text
    cli.command(kind)(command)


_PLAIN = {
    "stationarity": "Exact torus identity plus statistical stationarity and current checks",
    "coupling": "Coupled-copy audits, attractiveness inequalities and discrepancy statistics",
    "hydro-riemann": "Hydrodynamic limit from step initial data",
    "hydro-cauchy": "Hydrodynamic limit from piecewise-constant data against a Godunov reference",
    "strong-hydro": "Pathwise convergence under one fixed clock realization",
    "finite-prop": "Finite propagation speed of disagreement",
    "halfline": "Exploratory: variance of interval counts on a half-line",
    "fluctuations": "Exploratory: critical fluctuation variance curves",
    "flux-check": "Exact flux identity under product measures",
}
for _kind, _help in _PLAIN.items():
    _plain_command(_kind, _help)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = list(sys.argv[1:] if argv is None else argv)
    try:
        code = cli.main(args=args, prog_name="dephydro", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except click.ClickException as e:
        e.show()
        return EXIT_USAGE
    return EXIT_USAGE if code is None else int(code)


if __name__ == "__main__":
    sys.exit(main())
