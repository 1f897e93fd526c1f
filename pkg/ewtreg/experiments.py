"""Experiment runners behind the ``ewt-reg`` commands.

Each runner solves one scenario and returns plain data; writing files is left to
:meth:`ExperimentResult.write` and the ``ewtreg.io`` writers so the library can be used without
the command line.
"""

import re
import time
from importlib.metadata import version
from pathlib import Path
from typing import Any, Literal

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field
from tqdm import tqdm

from .exceptions import ConfigError
from .io import RESULT_SCHEMA_VERSION, write_csv, write_json
from .mdp import TargetProfile
from .scenario import Scenario, SolverConfig
from .solver import (
    EpisodeTree,
    Policy,
    average_deviation,
    backward_induction,
    expected_acceptance_rates,
    expected_ewt_curve,
    h_dp,
    monte_carlo_replay,
    path_ewt_curve,
    traverse,
)
from .utils import get_logger

CURVE_COLUMNS = ["t", "expected_ewt", "baseline_ewt", "target"]


class SolverSpec(BaseModel):
    """Exact solve (``edp``) or receding-horizon solve with a lookahead (``hdp:K``)."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["edp", "hdp"] = "edp"
    lookahead: int | None = Field(None, ge=0)

    def label(self) -> str:
        return "edp" if self.kind == "edp" else f"hdp:{self.lookahead}"

    def normalized(self, horizon: int) -> "SolverSpec":
        """A lookahead covering the whole episode is the exact solve."""
        if self.kind == "hdp" and self.lookahead is not None and self.lookahead >= horizon:
            return SolverSpec(kind="edp")
        return self

    def solve(self, scenario: Scenario, tree: EpisodeTree, config: SolverConfig) -> Policy:
        if self.kind == "edp" or self.lookahead is None:
            policy, _ = backward_induction(tree)
            return policy
        return h_dp(scenario, self.lookahead, config)


def parse_solver(text: str) -> SolverSpec:
    """Parse ``edp`` or ``hdp:K``."""
    text = text.strip().lower()
    if text == "edp":
        return SolverSpec(kind="edp")
    match = re.fullmatch(r"hdp:(\d+)", text)
    if match is None:
        raise ConfigError(f"Invalid solver '{text}', expected 'edp' or 'hdp:K'")
    return SolverSpec(kind="hdp", lookahead=int(match.group(1)))


def parse_targets(text: str) -> list[float]:
    """Parse a comma-separated list of positive targets in minutes."""
    try:
        targets = [float(item) for item in text.split(",") if item.strip()]
    except ValueError as err:
        raise ConfigError(f"Invalid target list '{text}'") from err
    if not targets or any(not target > 0 for target in targets):
        raise ConfigError(f"Targets must be positive minutes, got '{text}'")
    return targets


def parse_switch(text: str) -> tuple[float, float]:
    """Parse ``T:MIN``: switch to target ``MIN`` at time ``T``."""
    try:
        switch_time, target = (float(item) for item in text.split(":"))
    except ValueError as err:
        raise ConfigError(f"Invalid switch '{text}', expected T:MIN") from err
    if not switch_time > 0 or not target > 0:
        raise ConfigError(f"Switch time and target must be positive, got '{text}'")
    return switch_time, target


def parse_lookahead_range(text: str, horizon: int) -> list[int]:
    """Parse ``A..B`` (inclusive) or a single ``K``, all within ``[0, horizon]``."""
    match = re.fullmatch(r"\s*(\d+)\s*(?:\.\.\s*(\d+)\s*)?", text)
    if match is None:
        raise ConfigError(f"Invalid lookahead range '{text}', expected A..B")
    start = int(match.group(1))
    stop = int(match.group(2)) if match.group(2) is not None else start
    if not 0 <= start <= stop <= horizon:
        raise ConfigError(f"Lookahead range {start}..{stop} outside [0, {horizon}]")
    return list(range(start, stop + 1))


def run_metadata(scenario: Scenario, config: SolverConfig, solver: SolverSpec | None) -> dict[str, Any]:
    """Everything needed to reproduce a run."""
    metadata: dict[str, Any] = {
        "schema_version": RESULT_SCHEMA_VERSION,
        "code_version": version("ewtreg"),
        "seed": scenario.config.seed,
        "scenario_config": scenario.config.model_dump(mode="json"),
        "solver_config": config.model_dump(mode="json"),
    }
    if solver is not None:
        metadata["solver"] = solver.label()
    return metadata


class ExperimentResult(BaseModel):
    """Regulation and baseline curves on one sample grid, plus episode statistics."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    curves: pd.DataFrame
    acceptance_rates: dict[str, float]
    mean_acceptance: float
    average_deviation: float
    baseline_deviation: float
    metadata: dict[str, Any]

    def summary(self) -> dict[str, Any]:
        return {
            "acceptance_rates": {
                "per_passenger": self.acceptance_rates,
                "mean": self.mean_acceptance,
            },
            "average_deviation": self.average_deviation,
            "baseline_deviation": self.baseline_deviation,
            "metadata": self.metadata,
        }

    def write(self, out_dir: Path, stem: str) -> tuple[Path, Path]:
        """Write ``<stem>_curves.csv`` and ``<stem>_summary.json``."""
        csv_path = write_csv(out_dir / f"{stem}_curves.csv", self.curves, self.metadata)
        json_path = write_json(out_dir / f"{stem}_summary.json", self.summary())
        get_logger().info(f"Wrote {csv_path} and {json_path}")
        return csv_path, json_path


def _curves(tree: EpisodeTree, policy: Policy, target: TargetProfile, step: float) -> pd.DataFrame:
    regulation = expected_ewt_curve(tree, policy, step)
    baseline = path_ewt_curve(tree, None, step)
    times = regulation.index.to_numpy()
    return pd.DataFrame(
        {
            "t": times,
            "expected_ewt": regulation.to_numpy(),
            "baseline_ewt": baseline.to_numpy(),
            "target": [target.at(t) for t in times],
        },
        columns=CURVE_COLUMNS,
    )


def run_experiment(
    scenario: Scenario,
    config: SolverConfig | None = None,
    solver: SolverSpec | None = None,
) -> ExperimentResult:
    """Solve the scenario against the configured target and compare with the all-accept run."""
    config = config or SolverConfig()
    solver = (solver or SolverSpec()).normalized(scenario.horizon)
    logger = get_logger()
    logger.info(f"Solving {solver.label()} against target {config.target.label()}")

    tree = traverse(scenario, config)
    policy = solver.solve(scenario, tree, config)
    acceptance = expected_acceptance_rates(tree, policy)
    result = ExperimentResult(
        curves=_curves(tree, policy, config.target, config.curve_step),
        acceptance_rates=dict(zip(acceptance.passenger_ids, acceptance.rates, strict=True)),
        mean_acceptance=acceptance.mean,
        average_deviation=average_deviation(tree, policy),
        baseline_deviation=average_deviation(tree, Policy.constant(tree, 1.0)),
        metadata=run_metadata(scenario, config, solver),
    )
    logger.info(
        f"Deviation {result.average_deviation:.4f} min "
        f"(baseline {result.baseline_deviation:.4f}), mean acceptance {result.mean_acceptance:.4f}"
    )
    return result


def run_time_varying(
    scenario: Scenario,
    profile: TargetProfile,
    config: SolverConfig | None = None,
    solver: SolverSpec | None = None,
) -> ExperimentResult:
    if len(profile.segments) < 2:
        raise ConfigError("A time-varying target needs at least two segments")
    base = config or SolverConfig()
    return run_experiment(scenario, base.model_copy(update={"target": profile}), solver)


def sweep_targets(
    scenario: Scenario,
    targets: list[float],
    config: SolverConfig | None = None,
    solver: SolverSpec | None = None,
    progress: bool = True,
) -> tuple[list[ExperimentResult], pd.DataFrame]:
    """One experiment per constant target, plus a table of (target, mean acceptance, deviation)."""
    if len(targets) < 2:
        raise ConfigError("A target sweep needs at least two targets")
    base = config or SolverConfig()
    results = []
    for target in tqdm(targets, desc="Targets", disable=not progress):
        run_config = base.model_copy(update={"target": TargetProfile.constant(target)})
        results.append(run_experiment(scenario, run_config, solver))
    table = pd.DataFrame(
        {
            "target": targets,
            "mean_acceptance": [result.mean_acceptance for result in results],
            "deviation": [result.average_deviation for result in results],
            "baseline_deviation": [result.baseline_deviation for result in results],
        }
    )
    return results, table


def sweep_lookahead(
    scenario: Scenario,
    lookaheads: list[int],
    config: SolverConfig | None = None,
    progress: bool = True,
) -> pd.DataFrame:
    """Deviation and wall time of the receding-horizon solve for each lookahead.

    Deviations are evaluated on one shared episode tree. Wall time is measured with a
    monotonic clock and varies between runs.
    """
    config = config or SolverConfig()
    tree = traverse(scenario, config)
    rows = []
    for lookahead in tqdm(lookaheads, desc="Lookahead", disable=not progress):
        start = time.perf_counter()
        policy = h_dp(scenario, lookahead, config)
        elapsed = time.perf_counter() - start
        rows.append(
            {
                "lookahead": lookahead,
                "deviation": average_deviation(tree, policy),
                "wall_time": elapsed,
            }
        )
        get_logger().info(f"H-DP({lookahead}): deviation {rows[-1]['deviation']:.4f} in {elapsed:.2f}s")
    return pd.DataFrame(rows, columns=["lookahead", "deviation", "wall_time"])


def run_replay(
    scenario: Scenario,
    config: SolverConfig | None = None,
    solver: SolverSpec | None = None,
    n_episodes: int = 100_000,
    replay_seed: int = 0,
) -> tuple[pd.DataFrame, dict[str, Any]]:
    """Compare exact expectations with a Monte-Carlo replay of sampled decisions.

    Returns the curve comparison (with z-scores) and a per-passenger acceptance comparison.
    """
    config = config or SolverConfig()
    solver = (solver or SolverSpec()).normalized(scenario.horizon)
    tree = traverse(scenario, config)
    policy = solver.solve(scenario, tree, config)
    expected = expected_ewt_curve(tree, policy, config.curve_step)
    acceptance = expected_acceptance_rates(tree, policy)
    replay = monte_carlo_replay(tree, policy, n_episodes, replay_seed, config.curve_step)

    with np.errstate(divide="ignore", invalid="ignore"):
        curve_z = np.where(
            replay.curve_stderr > 0,
            (replay.curve_mean - expected.to_numpy()) / replay.curve_stderr,
            0.0,
        )
    curves = pd.DataFrame(
        {
            "t": replay.times,
            "expected_ewt": expected.to_numpy(),
            "replay_mean": replay.curve_mean,
            "replay_stderr": replay.curve_stderr,
            "z": curve_z,
        }
    )
    summary = {
        "n_episodes": n_episodes,
        "replay_seed": replay_seed,
        "acceptance": {
            pid: {"expected": rate, "replay_mean": float(mean), "replay_stderr": float(stderr)}
            for pid, rate, mean, stderr in zip(
                acceptance.passenger_ids,
                acceptance.rates,
                replay.acceptance_mean,
                replay.acceptance_stderr,
                strict=True,
            )
        },
        "max_abs_curve_z": float(np.max(np.abs(curve_z))),
        "metadata": run_metadata(scenario, config, solver),
    }
    return curves, summary
