"""Regulation of the estimated waiting time of a shared ride service"""

from importlib.metadata import version

from .exceptions import ConfigError, EwtRegError, RoutingError, SolverError, StateError
from .experiments import ExperimentResult, run_experiment, sweep_lookahead, sweep_targets
from .mdp import BoundsRule, SystemState, TargetProfile
from .routing import Location, RideRequest, Route, TravelModel
from .scenario import Scenario, ScenarioConfig, SolverConfig, canonical_scenario, generate_scenario
from .solver import EpisodeTree, Policy, average_deviation, e_dp, h_dp, traverse

__version__ = version("ewtreg")

__all__ = [
    "BoundsRule",
    "ConfigError",
    "EpisodeTree",
    "EwtRegError",
    "ExperimentResult",
    "Location",
    "Policy",
    "RideRequest",
    "Route",
    "RoutingError",
    "Scenario",
    "ScenarioConfig",
    "SolverConfig",
    "SolverError",
    "StateError",
    "SystemState",
    "TargetProfile",
    "TravelModel",
    "average_deviation",
    "canonical_scenario",
    "e_dp",
    "generate_scenario",
    "h_dp",
    "run_experiment",
    "sweep_lookahead",
    "sweep_targets",
    "traverse",
]
