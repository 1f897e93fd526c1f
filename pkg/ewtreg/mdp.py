"""States, transitions, rewards and action bounds of the EWT-regulation MDP.

The environment is a single shared vehicle. A :class:`SystemState` is a snapshot of the
vehicle route, the status of every passenger seen so far and, at request instants only, the
request awaiting a decision. The passenger accepts the ride offer with the desired probability
``a`` chosen by the platform, so each request splits the future into an accept branch (the
request is routed) and a reject branch (the route is left untouched).

The Estimated Waiting Time (EWT) of a settled state is approximated by probing: four
hypothetical requests from the corners of the service square to its center are inserted into
a copy of the route and their pickup times are averaged.
"""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, replace
from enum import StrEnum
from typing import Any, Self

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .exceptions import (
    IndexOutOfRangeError,
    NoPendingRequestError,
    RequestAlreadyPendingError,
    StateError,
    TimeMismatchError,
)
from .routing import (
    DEFAULT_TRAVEL_MODEL,
    Location,
    RideRequest,
    Route,
    TravelModel,
    advance,
    dropoff_time,
    insert_request,
    pickup_time,
    travel_time,
)

TIME_TOLERANCE = 1e-9
DEFAULT_REWARD_SAMPLES = 16


class PassengerStatus(StrEnum):
    WAITING = "waiting"
    ONBOARD = "onboard"
    COMPLETED = "completed"
    REJECTED = "rejected"


@dataclass(frozen=True, slots=True)
class SystemState:
    """Environment snapshot at ``time``.

    ``passenger_statuses`` is never mutated in place; transitions build a new mapping.
    """

    time: float
    route: Route
    passenger_statuses: Mapping[str, PassengerStatus] = field(default_factory=dict)
    pending_request: RideRequest | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "time": self.time,
            "route": self.route.to_dict(),
            "passenger_statuses": {
                pid: str(status) for pid, status in sorted(self.passenger_statuses.items())
            },
            "pending_request": (
                self.pending_request.to_dict() if self.pending_request is not None else None
            ),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> SystemState:
        pending = data.get("pending_request")
        return cls(
            time=float(data["time"]),
            route=Route.from_dict(data["route"]),
            passenger_statuses={
                pid: PassengerStatus(status) for pid, status in data["passenger_statuses"].items()
            },
            pending_request=(
                RideRequest(
                    passenger_id=pending["passenger_id"],
                    origin=Location(**pending["origin"]),
                    destination=Location(**pending["destination"]),
                    issue_time=float(pending["issue_time"]),
                )
                if pending is not None
                else None
            ),
        )


@dataclass(frozen=True, slots=True)
class ActionBounds:
    """Admissible interval for the desired probability of acceptance."""

    lower: float
    upper: float

    def __post_init__(self) -> None:
        if not 0 < self.lower < self.upper < 1:
            raise ValueError(
                f"Action bounds must satisfy 0 < lower < upper < 1, got ({self.lower}, {self.upper})"
            )

    def contains(self, action: float) -> bool:
        return self.lower <= action <= self.upper

    def to_dict(self) -> dict[str, float]:
        return {"lower": self.lower, "upper": self.upper}


class TargetProfile(BaseModel):
    """Piecewise-constant EWT target: ``segments`` are ``(start_time, target)`` pairs."""

    model_config = ConfigDict(frozen=True)

    segments: tuple[tuple[float, float], ...] = ((0.0, 5.0),)

    @model_validator(mode="after")
    def _check_segments(self) -> Self:
        if not self.segments:
            raise ValueError("Target profile needs at least one segment")
        if self.segments[0][0] != 0:
            raise ValueError("First target segment must start at t=0")
        starts = [start for start, _ in self.segments]
        if any(later <= earlier for earlier, later in zip(starts, starts[1:], strict=False)):
            raise ValueError(f"Segment start times must be strictly increasing: {starts}")
        if any(target <= 0 for _, target in self.segments):
            raise ValueError("Targets must be positive")
        return self

    @classmethod
    def constant(cls, target: float) -> TargetProfile:
        return cls(segments=((0.0, target),))

    @classmethod
    def switched(cls, initial: float, switch_time: float, target: float) -> TargetProfile:
        """Target ``initial`` until ``switch_time``, then ``target``."""
        return cls(segments=((0.0, initial), (switch_time, target)))

    def at(self, t: float) -> float:
        """Target in effect at absolute time ``t``."""
        for start, target in reversed(self.segments):
            if t >= start:
                return target
        return self.segments[0][1]

    def label(self) -> str:
        return ";".join(f"{start:g}:{target:g}" for start, target in self.segments)


class BoundsRule(BaseModel):
    """Rule choosing action bounds by comparing the shared ride with an exclusive alternative.

    The alternative is a non-shared ride whose wait is ``alternative_wait_factor`` times the
    current target and whose ride time is the direct trip time. If the shared total travel time
    does not exceed ``tolerance_ratio`` times the alternative, ``within`` applies, otherwise
    ``beyond``.
    """

    model_config = ConfigDict(frozen=True)

    tolerance_ratio: float = Field(1.5, gt=0)
    alternative_wait_factor: float = Field(2 / 3, ge=0)
    within: tuple[float, float] = (0.5, 0.9)
    beyond: tuple[float, float] = (0.2, 0.6)

    @model_validator(mode="after")
    def _check_pairs(self) -> Self:
        ActionBounds(*self.within)
        ActionBounds(*self.beyond)
        return self

    def bounds_for(self, smods_total: float, alternative_total: float) -> ActionBounds:
        if smods_total <= self.tolerance_ratio * alternative_total:
            return ActionBounds(*self.within)
        return ActionBounds(*self.beyond)


@dataclass(frozen=True, slots=True)
class ChoiceUtilities:
    utilities: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.utilities:
            raise ValueError("At least one alternative is required")
        if not all(math.isfinite(u) for u in self.utilities):
            raise ValueError(f"Utilities must be finite: {self.utilities}")


def choice_probabilities(u: ChoiceUtilities) -> np.ndarray:
    """Logit choice probabilities of every alternative."""
    utilities = np.asarray(u.utilities, dtype=float)
    # shift by the max so exp never overflows
    weights = np.exp(utilities - utilities.max())
    return weights / weights.sum()


def choice_probability(u: ChoiceUtilities, index: int) -> float:
    """Probability of choosing alternative ``index`` (0-based) under the logit model.

    Raises:
        IndexOutOfRangeError: If ``index`` does not name an alternative.
    """
    if not 0 <= index < len(u.utilities):
        raise IndexOutOfRangeError(
            f"Alternative {index} out of range for {len(u.utilities)} alternatives"
        )
    return float(choice_probabilities(u)[index])


def probe_requests(side: float = 1.0) -> tuple[RideRequest, ...]:
    """Hypothetical requests from the four corners of the service square to its center."""
    center = Location(side / 2, side / 2)
    corners = [(0.0, 0.0), (0.0, side), (side, 0.0), (side, side)]
    return tuple(
        RideRequest(f"__probe_{index}", Location(x, y), center)
        for index, (x, y) in enumerate(corners)
    )


DEFAULT_PROBES = probe_requests()


def initial_state(
    capacity: int = 6,
    position: Location | None = None,
    time: float = 0.0,
) -> SystemState:
    """Idle vehicle with no passengers (parked at the unit square center by default)."""
    return SystemState(
        time=time,
        route=Route(vehicle_position=position or Location(0.5, 0.5), capacity=capacity),
    )


def advance_state(
    s: SystemState, tau: float, model: TravelModel = DEFAULT_TRAVEL_MODEL
) -> SystemState:
    """Evolve a settled state by its internal dynamics for ``tau`` minutes."""
    if s.pending_request is not None:
        raise RequestAlreadyPendingError(
            f"Request {s.pending_request.passenger_id} must be decided before time advances"
        )
    route = advance(s.route, tau, model)
    statuses = dict(s.passenger_statuses)
    if route is not s.route:
        for pid, status in s.passenger_statuses.items():
            if status not in (PassengerStatus.WAITING, PassengerStatus.ONBOARD):
                continue
            if pid in route.onboard:
                statuses[pid] = PassengerStatus.ONBOARD
            elif route.has_pickup(pid):
                statuses[pid] = PassengerStatus.WAITING
            else:
                statuses[pid] = PassengerStatus.COMPLETED
    return SystemState(time=s.time + tau, route=route, passenger_statuses=statuses)


def receive_request(s: SystemState, req: RideRequest) -> SystemState:
    """Attach a newly issued request to the state; nothing else changes."""
    if s.pending_request is not None:
        raise RequestAlreadyPendingError(
            f"Request {s.pending_request.passenger_id} is still pending"
        )
    if abs(req.issue_time - s.time) > TIME_TOLERANCE:
        raise TimeMismatchError(s.time, req.issue_time)
    if req.passenger_id in s.passenger_statuses:
        raise StateError(f"Passenger {req.passenger_id} already made a request")
    return replace(s, pending_request=req)


def _pending(s: SystemState) -> RideRequest:
    if s.pending_request is None:
        raise NoPendingRequestError(f"No pending request at t={s.time}")
    return s.pending_request


def transition_accept(s: SystemState, model: TravelModel = DEFAULT_TRAVEL_MODEL) -> SystemState:
    """Accept branch: route the pending request and mark its passenger as waiting."""
    req = _pending(s)
    statuses = dict(s.passenger_statuses)
    statuses[req.passenger_id] = PassengerStatus.WAITING
    return SystemState(
        time=s.time,
        route=insert_request(s.route, req, model),
        passenger_statuses=statuses,
    )


def transition_reject(s: SystemState) -> SystemState:
    """Reject branch: drop the pending request and leave the route untouched."""
    req = _pending(s)
    statuses = dict(s.passenger_statuses)
    statuses[req.passenger_id] = PassengerStatus.REJECTED
    return SystemState(time=s.time, route=s.route, passenger_statuses=statuses)


def estimate_ewt(
    s: SystemState,
    model: TravelModel = DEFAULT_TRAVEL_MODEL,
    probes: Sequence[RideRequest] = DEFAULT_PROBES,
) -> float:
    """Mean pickup time of the probe requests, each hypothetically inserted into the route."""
    if s.pending_request is not None:
        raise RequestAlreadyPendingError("EWT is only defined on settled states")
    waits = [
        pickup_time(insert_request(s.route, probe, model), probe.passenger_id, model)
        for probe in probes
    ]
    return math.fsum(waits) / len(waits)


def branch_reward(
    s_after: SystemState,
    interval: float,
    target: TargetProfile,
    n_samples: int = DEFAULT_REWARD_SAMPLES,
    model: TravelModel = DEFAULT_TRAVEL_MODEL,
    probes: Sequence[RideRequest] = DEFAULT_PROBES,
) -> float:
    """Negative mean absolute EWT deviation over ``[t, t + interval]`` after a decision.

    The integral is evaluated with the midpoint rule on ``n_samples`` equal subintervals; the
    target is read at the absolute time of each sample.
    """
    if interval <= 0:
        raise ValueError(f"Interval must be positive, got {interval}")
    if n_samples < 1:
        raise ValueError(f"Need at least one sample, got {n_samples}")
    delta = interval / n_samples
    total = 0.0
    for i in range(n_samples):
        tau = (i + 0.5) * delta
        ewt = estimate_ewt(advance_state(s_after, tau, model), model, probes)
        total += abs(ewt - target.at(s_after.time + tau)) * delta
    return -total / interval


def action_bounds(
    s: SystemState,
    target_now: float,
    model: TravelModel = DEFAULT_TRAVEL_MODEL,
    rule: BoundsRule | None = None,
) -> ActionBounds:
    """Bounds on the desired acceptance probability of the pending request."""
    rule = rule or BoundsRule()
    req = _pending(s)
    accepted = transition_accept(s, model)
    # waiting plus in-vehicle time is the time until dropoff
    smods_total = dropoff_time(accepted.route, req.passenger_id, model)
    alternative_total = rule.alternative_wait_factor * target_now + travel_time(
        req.origin, req.destination, model
    )
    return rule.bounds_for(smods_total, alternative_total)
