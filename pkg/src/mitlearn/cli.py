"""Command-line surface: run, analyze, validate, list-scenarios.

Exit codes: 0 success, 2 validation failure, 3 numerical failure,
4 I/O failure.  Failures also leave a machine-readable ``error.json`` in
the output directory when one is available.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .errors import (
    DivergenceError,
    InfeasibleScheduleError,
    MissingArtifactsError,
    MitlearnError,
    NoConvergenceError,
    NotHurwitzError,
    NotStabilizableError,
    NotStabilizingError,
    RankDeficientError,
    ScenarioParseError,
    ScenarioValidationError,
    SingularClosedLoopError,
    SingularSystemError,
)
from .scenario import bundled_scenario_names, bundled_scenario_path, load_scenario

EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

_NUMERICAL = (DivergenceError, RankDeficientError, NoConvergenceError,
              NotHurwitzError, NotStabilizingError, NotStabilizableError,
              SingularSystemError, SingularClosedLoopError)
_VALIDATION = (ScenarioParseError, ScenarioValidationError, InfeasibleScheduleError)


def _exit_code(exc):
    if isinstance(exc, _VALIDATION):
        return EXIT_VALIDATION
    if isinstance(exc, _NUMERICAL):
        return EXIT_NUMERICAL
    if isinstance(exc, (MissingArtifactsError, OSError)):
        return EXIT_IO
    return EXIT_NUMERICAL if isinstance(exc, MitlearnError) else 1


def _fail(exc, out_dir=None):
    payload = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ScenarioValidationError):
        payload["problems"] = exc.problems
    if out_dir is not None:
        try:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            with open(Path(out_dir) / "error.json", "w", encoding="utf-8") as fh:
                json.dump(payload, fh, indent=1)
                fh.write("\n")
        except OSError:
            pass
    click.echo(f"error: {payload['error']}: {payload['message']}", err=True)
    if "problems" in payload:
        for p in payload["problems"]:
            click.echo(f"  - {p}", err=True)
    sys.exit(_exit_code(exc))


def _resolve(scenario_arg):
    path = Path(scenario_arg)
    if path.is_file():
        return path
    return bundled_scenario_path(scenario_arg)


@click.group()
def main():
    """Off-policy mitigation workbench for switching insider threats."""


@main.command("list-scenarios")
def list_scenarios():
    """Show the bundled scenario names."""
    for name in bundled_scenario_names():
        click.echo(name)


@main.command()
@click.option("--scenario", required=True, help="Scenario file path or bundled name.")
@click.option("--strict-dwell", is_flag=True, default=False,
              help="Fail if the dwell-time feasibility bound is violated.")
def validate(scenario, strict_dwell):
    """Parse and validate a scenario, printing a short summary."""
    try:
        sc = load_scenario(_resolve(scenario), strict_dwell=strict_dwell)
        if strict_dwell:
            from .runner import dwell_check

            dwell_check(sc)
    except MitlearnError as exc:
        _fail(exc)
    click.echo(f"{sc.name}: n={sc.n} s={sc.s} m={sc.m}, {len(sc.modes)} modes, "
               f"dwell_min={sc.signal.dwell_min}s, t_end={sc.sim.t_end}s")


@main.command("run")
@click.option("--scenario", required=True, help="Scenario file path or bundled name.")
@click.option("--seed", type=int, default=None, help="Override the exploration-noise seed.")
@click.option("--out", "out_dir", default="out", show_default=True,
              help="Directory for run artifacts.")
@click.option("--strict-dwell", is_flag=True, default=False,
              help="Fail if the dwell-time feasibility bound is violated.")
def run_cmd(scenario, seed, out_dir, strict_dwell):
    """Run a scenario and write trajectory, gains, schedule, and report."""
    from .runner import run

    try:
        sc = load_scenario(_resolve(scenario), strict_dwell=strict_dwell)
        report = run(sc, seed=seed, out_dir=out_dir)
    except (MitlearnError, OSError) as exc:
        _fail(exc, out_dir)
    click.echo(f"run complete: {report['scenario']} seed={report['seed']} "
               f"phases={len(report['phases'])} "
               f"steady_output={report['tracking']['steady_output']:.3f} "
               f"-> {out_dir}/report.json")


@main.command("analyze")
@click.option("--scenario", required=True, help="Scenario file path or bundled name.")
@click.option("--run-dir", "run_dir", default="out", show_default=True,
              help="Directory holding run artifacts.")
@click.option("--oracle", is_flag=True, default=True,
              help="Enable oracle-side comparisons (requires true matrices).")
def analyze_cmd(scenario, run_dir, oracle):
    """Analyze run artifacts against the model-based oracle."""
    from .runner import analyze

    try:
        sc = load_scenario(_resolve(scenario))
        if not (oracle and sc.oracle_enabled):
            raise ScenarioValidationError(
                ["analysis needs oracle mode ([oracle].enabled and --oracle)"])
        analysis = analyze(sc, run_dir)
    except (MitlearnError, OSError) as exc:
        _fail(exc, run_dir)
    worst = analysis["contraction_bound"]["worst_ratio"] if analysis["contraction_bound"] else None
    click.echo(f"analysis complete: {len(analysis['gain_errors'])} learned gains"
               + (f", worst bound ratio {worst:.3f}" if worst is not None else "")
               + f" -> {run_dir}/analysis.json")


if __name__ == "__main__":
    main()
