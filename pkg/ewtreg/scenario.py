"""Scenario synthesis and experiment configuration.

Scenarios are generated from a numpy ``Philox`` generator (Philox4x64-10, counter based) keyed
directly by the configured seed, so a seed identifies a scenario on every platform. Each
request consumes four uniform draws in order: origin x, origin y, destination x, destination y,
all scaled to the side of the service square. Trips shorter than ``MIN_TRIP_DISTANCE`` are
redrawn.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any, Literal, Self

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .exceptions import ConfigError
from .mdp import BoundsRule, TargetProfile, probe_requests
from .routing import Location, RideRequest, TravelModel

SCHEMA_VERSION = 1
CANONICAL_SEED = 20190814
MIN_TRIP_DISTANCE = 0.05
SPACING_TOLERANCE = 1e-9


class ScenarioConfig(BaseModel):
    """Size, geometry and seed of a generated scenario."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    n_initial: int = Field(4, ge=0)
    n_sequential: int = Field(8, ge=0)
    request_interval: float = Field(4.0, gt=0)
    square_side: float = Field(1.0, gt=0)
    capacity: int = Field(6, ge=1)
    speed: float = Field(0.25, gt=0)
    seed: int = Field(CANONICAL_SEED, ge=0, lt=2**64)
    reward_samples: int = Field(16, ge=1)

    @property
    def horizon_time(self) -> float:
        """Episode length: the first interval plus one interval per sequential request."""
        return (self.n_sequential + 1) * self.request_interval

    def travel_model(self) -> TravelModel:
        return TravelModel(speed=self.speed)

    def probes(self) -> tuple[RideRequest, ...]:
        return probe_requests(self.square_side)

    @classmethod
    def from_file(cls, path: Path | str) -> ScenarioConfig:
        return load_config(path)[0]


class SolverConfig(BaseModel):
    """Target profile and solver settings."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    target: TargetProfile = Field(default_factory=TargetProfile)
    discount: float = Field(1.0, ge=0, le=1)
    curve_step: float = Field(0.25, gt=0)
    bounds: BoundsRule = Field(default_factory=BoundsRule)

    @classmethod
    def from_file(cls, path: Path | str) -> SolverConfig:
        return load_config(path)[1]


def _read_mapping(path: Path) -> dict[str, Any]:
    if not path.exists():
        raise FileNotFoundError(f"Config file not found: {path}")

    if path.suffix.lower() in {".yml", ".yaml"}:
        data = yaml.safe_load(path.read_text())
    elif path.suffix.lower() == ".json":
        data = json.loads(path.read_text())
    else:
        raise ConfigError("Config file must be JSON or YAML")

    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError("Config must be a mapping")
    return data


def load_config(path: Path | str) -> tuple[ScenarioConfig, SolverConfig]:
    """Load a scenario config file, with an optional ``solver`` section.

    Top-level keys mirror :class:`ScenarioConfig`; the ``solver`` mapping mirrors
    :class:`SolverConfig`.
    """
    data = _read_mapping(Path(path))
    solver_data = data.pop("solver", None) or {}
    try:
        return ScenarioConfig.model_validate(data), SolverConfig.model_validate(solver_data)
    except ValidationError as err:
        raise ConfigError(f"Invalid config {path}: {err}") from err


class Scenario(BaseModel):
    """Initial requests at t=0 followed by ``N`` requests spaced by the request interval."""

    model_config = ConfigDict(frozen=True)

    schema_version: Literal[1] = SCHEMA_VERSION
    initial_requests: tuple[RideRequest, ...]
    sequential_requests: tuple[RideRequest, ...]
    config: ScenarioConfig

    @model_validator(mode="after")
    def _check_schedule(self) -> Self:
        if len(self.initial_requests) != self.config.n_initial:
            raise ValueError("Initial request count does not match config")
        if len(self.sequential_requests) != self.config.n_sequential:
            raise ValueError("Sequential request count does not match config")
        if any(req.issue_time != 0 for req in self.initial_requests):
            raise ValueError("Initial requests must be issued at t=0")
        for k, req in enumerate(self.sequential_requests, start=1):
            expected = k * self.config.request_interval
            if abs(req.issue_time - expected) > SPACING_TOLERANCE:
                raise ValueError(f"Request {req.passenger_id} issued at {req.issue_time}, not {expected}")
        ids = [req.passenger_id for req in self.all_requests]
        if len(set(ids)) != len(ids):
            raise ValueError("Passenger ids must be unique")
        return self

    @property
    def all_requests(self) -> tuple[RideRequest, ...]:
        return self.initial_requests + self.sequential_requests

    @property
    def horizon(self) -> int:
        return len(self.sequential_requests)

    def to_json(self) -> str:
        return self.model_dump_json(indent=2)

    @classmethod
    def from_file(cls, path: Path | str) -> Scenario:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Scenario file not found: {path}")
        try:
            return cls.model_validate_json(path.read_text())
        except ValidationError as err:
            raise ConfigError(f"Invalid scenario {path}: {err}") from err


def _draw_request(
    rng: np.random.Generator, passenger_id: str, issue_time: float, side: float
) -> RideRequest:
    while True:
        ox, oy, dx, dy = (float(v) for v in rng.random(4) * side)
        if math.hypot(dx - ox, dy - oy) >= MIN_TRIP_DISTANCE:
            return RideRequest(passenger_id, Location(ox, oy), Location(dx, dy), issue_time)


def generate_scenario(config: ScenarioConfig) -> Scenario:
    """Draw origins and destinations uniformly on the square, deterministically from the seed."""
    rng = np.random.Generator(np.random.Philox(key=config.seed))
    total = config.n_initial + config.n_sequential
    width = max(2, len(str(total)))
    issue_times = [0.0] * config.n_initial + [
        k * config.request_interval for k in range(1, config.n_sequential + 1)
    ]
    requests = [
        _draw_request(rng, f"p{index:0{width}d}", issue_time, config.square_side)
        for index, issue_time in enumerate(issue_times, start=1)
    ]
    return Scenario(
        initial_requests=tuple(requests[: config.n_initial]),
        sequential_requests=tuple(requests[config.n_initial :]),
        config=config,
    )


def canonical_scenario() -> Scenario:
    """Four initial and eight sequential requests, 4 minutes apart, capacity 6, unit square."""
    return generate_scenario(ScenarioConfig())
