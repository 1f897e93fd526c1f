#!/usr/bin/env python3
"""Command line interface for ewtreg.

Exit codes: 0 on success, 2 for configuration or usage errors, 3 for solver errors.
"""

from collections.abc import Iterator
from contextlib import contextmanager
from pathlib import Path

import pandas as pd
import typer
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from .exceptions import ConfigError, EwtRegError
from .experiments import (
    ExperimentResult,
    parse_lookahead_range,
    parse_solver,
    parse_switch,
    parse_targets,
    run_experiment,
    run_metadata,
    run_replay,
    run_time_varying,
    sweep_lookahead,
    sweep_targets,
)
from .io import write_csv, write_json
from .mdp import TargetProfile
from .scenario import Scenario, ScenarioConfig, SolverConfig, generate_scenario, load_config
from .utils import get_logger, setup_logging

CONFIG_ERROR_EXIT = 2
SOLVER_ERROR_EXIT = 3

app = typer.Typer(
    help=(
        "Regulate the estimated waiting time of a shared ride service through the desired "
        "probability of acceptance of each ride offer."
    ),
    add_completion=True,
)
console = Console()

CONFIG_OPTION = typer.Option(
    None,
    "--config",
    "-c",
    help="YAML/JSON scenario config (optional 'solver' section)",
    exists=True,
    dir_okay=False,
    resolve_path=True,
)
SEED_OPTION = typer.Option(None, "--seed", help="Scenario seed (overrides the config)", min=0)
SCENARIO_OPTION = typer.Option(
    None,
    "--scenario",
    "-s",
    help="Scenario JSON written by 'ewt-reg generate' (replaces the scenario keys of --config)",
    exists=True,
    dir_okay=False,
    resolve_path=True,
)
OUT_OPTION = typer.Option(
    None, "--out", "-o", help="Directory for result files [default: ./results]", resolve_path=True
)
SOLVER_OPTION = typer.Option("edp", "--solver", help="'edp' or 'hdp:K'")
VERBOSE_OPTION = typer.Option(False, "--verbose", "-v", help="Enable verbose output")
QUIET_OPTION = typer.Option(False, "--quiet", "-q", help="Suppress all output except errors")
NO_LOG_OPTION = typer.Option(False, "--no-log", help="Disable writing to log file")


@contextmanager
def _exit_codes() -> Iterator[None]:
    """Map library errors onto process exit codes."""
    logger = get_logger()
    try:
        yield
    except (ConfigError, ValidationError, FileNotFoundError) as err:
        logger.error(f"Configuration error: {err}")
        console.print(f"[bold red]Configuration error:[/] {err}", highlight=False)
        raise typer.Exit(code=CONFIG_ERROR_EXIT) from err
    except EwtRegError as err:
        logger.error(f"Solver error: {err}")
        console.print(f"[bold red]Solver error:[/] {err}", highlight=False)
        raise typer.Exit(code=SOLVER_ERROR_EXIT) from err


def _prepare(
    config: Path | None,
    seed: int | None,
    out: Path | None,
    verbose: bool,
    quiet: bool,
    no_log: bool,
    run_name: str,
    scenario_file: Path | None = None,
) -> tuple[Scenario, SolverConfig, Path]:
    output_dir = out if out is not None else Path.cwd() / "results"
    setup_logging(
        verbose=verbose,
        quiet=quiet,
        log_to_file=not no_log,
        output_dir=output_dir,
        run_name=run_name,
    )
    if config is not None:
        scenario_config, solver_config = load_config(config)
        get_logger().debug(f"Loaded config from {config}")
    else:
        scenario_config, solver_config = ScenarioConfig(), SolverConfig()
    if scenario_file is not None:
        if seed is not None:
            raise ConfigError("--seed cannot be combined with --scenario")
        get_logger().debug(f"Loaded scenario from {scenario_file}")
        return Scenario.from_file(scenario_file), solver_config, output_dir
    if seed is not None:
        scenario_config = scenario_config.model_copy(update={"seed": seed})
        scenario_config = ScenarioConfig.model_validate(scenario_config.model_dump())
    return generate_scenario(scenario_config), solver_config, output_dir


def _with_target(config: SolverConfig, target: float | None) -> SolverConfig:
    if target is None:
        return config
    if not target > 0:
        raise ConfigError(f"Target must be positive, got {target}")
    return config.model_copy(update={"target": TargetProfile.constant(target)})


def _print_result(result: ExperimentResult, title: str) -> None:
    table = Table(title=title)
    table.add_column("Passenger", style="cyan")
    table.add_column("Expected acceptance", style="green", justify="right")
    for pid, rate in result.acceptance_rates.items():
        table.add_row(pid, f"{rate:.4f}")
    table.add_section()
    table.add_row("mean", f"{result.mean_acceptance:.4f}")
    table.add_row("deviation (min)", f"{result.average_deviation:.4f}")
    table.add_row("baseline deviation (min)", f"{result.baseline_deviation:.4f}")
    console.print(table)


def _print_frame(frame: pd.DataFrame, title: str) -> None:
    table = Table(title=title)
    for column in frame.columns:
        table.add_column(str(column), style="cyan" if column == frame.columns[0] else "green")
    for row in frame.itertuples(index=False):
        table.add_row(*(f"{value:.4f}" if isinstance(value, float) else str(value) for value in row))
    console.print(table)


@app.command()
def simulate(
    config: Path | None = CONFIG_OPTION,
    seed: int | None = SEED_OPTION,
    scenario_file: Path | None = SCENARIO_OPTION,
    target: float | None = typer.Option(None, "--target", "-t", help="Constant EWT target (min)"),
    solver: str = SOLVER_OPTION,
    out: Path | None = OUT_OPTION,
    verbose: bool = VERBOSE_OPTION,
    quiet: bool = QUIET_OPTION,
    no_log: bool = NO_LOG_OPTION,
) -> None:
    """Regulate EWT around a constant target.

    Writes simulate_curves.csv (t, expected_ewt, baseline_ewt, target) and
    simulate_summary.json.
    """
    with _exit_codes():
        scenario, solver_config, output_dir = _prepare(
            config, seed, out, verbose, quiet, no_log, "simulate", scenario_file
        )
        run_config = _with_target(solver_config, target)
        result = run_experiment(scenario, run_config, parse_solver(solver))
        result.write(output_dir, "simulate")
        if not quiet:
            _print_result(result, f"Target {run_config.target.label()}")


@app.command("sweep-target")
def sweep_target(
    targets: str = typer.Option("4,5,6", "--target", "-t", help="Comma-separated targets (min)"),
    config: Path | None = CONFIG_OPTION,
    seed: int | None = SEED_OPTION,
    scenario_file: Path | None = SCENARIO_OPTION,
    solver: str = SOLVER_OPTION,
    out: Path | None = OUT_OPTION,
    verbose: bool = VERBOSE_OPTION,
    quiet: bool = QUIET_OPTION,
    no_log: bool = NO_LOG_OPTION,
) -> None:
    """Run one regulation per constant target.

    Writes target_<MIN>_curves.csv and target_<MIN>_summary.json per target, plus
    sweep_target.csv (target, mean_acceptance, deviation, baseline_deviation).
    """
    with _exit_codes():
        scenario, solver_config, output_dir = _prepare(
            config, seed, out, verbose, quiet, no_log, "sweep_target", scenario_file
        )
        target_list = parse_targets(targets)
        solver_spec = parse_solver(solver)
        results, table = sweep_targets(
            scenario, target_list, solver_config, solver_spec, progress=not quiet
        )
        for target, result in zip(target_list, results, strict=True):
            result.write(output_dir, f"target_{target:g}")
        write_csv(
            output_dir / "sweep_target.csv",
            table,
            run_metadata(scenario, solver_config, solver_spec.normalized(scenario.horizon)),
        )
        if not quiet:
            _print_frame(table, "Target sweep")


@app.command("time-varying")
def time_varying(
    target: float = typer.Option(4.0, "--target", "-t", help="Target before the switch (min)"),
    switch: str = typer.Option("20:6", "--switch", help="T:MIN, switch to MIN at time T"),
    config: Path | None = CONFIG_OPTION,
    seed: int | None = SEED_OPTION,
    scenario_file: Path | None = SCENARIO_OPTION,
    solver: str = SOLVER_OPTION,
    out: Path | None = OUT_OPTION,
    verbose: bool = VERBOSE_OPTION,
    quiet: bool = QUIET_OPTION,
    no_log: bool = NO_LOG_OPTION,
) -> None:
    """Regulate EWT around a target that switches once.

    Writes time_varying_curves.csv and time_varying_summary.json.
    """
    with _exit_codes():
        scenario, solver_config, output_dir = _prepare(
            config, seed, out, verbose, quiet, no_log, "time_varying", scenario_file
        )
        switch_time, final_target = parse_switch(switch)
        try:
            profile = TargetProfile.switched(target, switch_time, final_target)
        except ValidationError as err:
            raise ConfigError(str(err)) from err
        result = run_time_varying(scenario, profile, solver_config, parse_solver(solver))
        result.write(output_dir, "time_varying")
        if not quiet:
            _print_result(result, f"Target profile {profile.label()}")


@app.command("sweep-lookahead")
def sweep_lookahead_command(
    lookahead: str | None = typer.Option(
        None, "--lookahead", "-l", help="Range A..B of lookahead steps [default: 0..N]"
    ),
    target: float | None = typer.Option(None, "--target", "-t", help="Constant EWT target (min)"),
    config: Path | None = CONFIG_OPTION,
    seed: int | None = SEED_OPTION,
    scenario_file: Path | None = SCENARIO_OPTION,
    out: Path | None = OUT_OPTION,
    verbose: bool = VERBOSE_OPTION,
    quiet: bool = QUIET_OPTION,
    no_log: bool = NO_LOG_OPTION,
) -> None:
    """Average deviation of the receding-horizon solve per lookahead.

    Writes sweep_lookahead.csv (lookahead, deviation, wall_time); wall_time is not
    reproducible.
    """
    with _exit_codes():
        scenario, solver_config, output_dir = _prepare(
            config, seed, out, verbose, quiet, no_log, "sweep_lookahead", scenario_file
        )
        solver_config = _with_target(solver_config, target)
        lookaheads = parse_lookahead_range(
            lookahead if lookahead is not None else f"0..{scenario.horizon}", scenario.horizon
        )
        table = sweep_lookahead(scenario, lookaheads, solver_config, progress=not quiet)
        write_csv(
            output_dir / "sweep_lookahead.csv",
            table,
            run_metadata(scenario, solver_config, None),
        )
        if not quiet:
            _print_frame(table, "Lookahead sweep")


@app.command()
def replay(
    episodes: int = typer.Option(100_000, "--episodes", "-n", help="Sampled episodes", min=2),
    replay_seed: int = typer.Option(0, "--replay-seed", help="Seed of the decision sampler", min=0),
    target: float | None = typer.Option(None, "--target", "-t", help="Constant EWT target (min)"),
    config: Path | None = CONFIG_OPTION,
    seed: int | None = SEED_OPTION,
    scenario_file: Path | None = SCENARIO_OPTION,
    solver: str = SOLVER_OPTION,
    out: Path | None = OUT_OPTION,
    verbose: bool = VERBOSE_OPTION,
    quiet: bool = QUIET_OPTION,
    no_log: bool = NO_LOG_OPTION,
) -> None:
    """Check exact expectations against sampled accept/reject sequences.

    Writes replay.csv (t, expected_ewt, replay_mean, replay_stderr, z) and replay.json.
    """
    with _exit_codes():
        scenario, solver_config, output_dir = _prepare(
            config, seed, out, verbose, quiet, no_log, "replay", scenario_file
        )
        solver_config = _with_target(solver_config, target)
        curves, summary = run_replay(
            scenario, solver_config, parse_solver(solver), episodes, replay_seed
        )
        write_csv(output_dir / "replay.csv", curves, summary["metadata"])
        write_json(output_dir / "replay.json", summary)
        if not quiet:
            rows = pd.DataFrame(
                [
                    {"passenger": pid, **values}
                    for pid, values in summary["acceptance"].items()
                ]
            )
            _print_frame(rows, f"Replay of {episodes} episodes")
            console.print(f"Largest curve z-score: {summary['max_abs_curve_z']:.2f}")


@app.command()
def generate(
    config: Path | None = CONFIG_OPTION,
    seed: int | None = SEED_OPTION,
    out: Path | None = OUT_OPTION,
    verbose: bool = VERBOSE_OPTION,
    quiet: bool = QUIET_OPTION,
    no_log: bool = NO_LOG_OPTION,
) -> None:
    """Write the generated scenario to scenario.json for reuse with --scenario."""
    with _exit_codes():
        scenario, _, output_dir = _prepare(config, seed, out, verbose, quiet, no_log, "generate")
        output_dir.mkdir(parents=True, exist_ok=True)
        path = output_dir / "scenario.json"
        path.write_text(scenario.to_json() + "\n", encoding="utf-8", newline="\n")
        get_logger().info(f"Wrote {path}")
        if not quiet:
            console.print(
                f"{len(scenario.all_requests)} requests ({scenario.horizon} sequential) "
                f"written to {path}"
            )


def main() -> None:
    """Run the CLI application."""
    app(prog_name="ewt-reg")


if __name__ == "__main__":
    main()
