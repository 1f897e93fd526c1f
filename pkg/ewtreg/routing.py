"""Travel model, vehicle routes and cheapest-insertion routing.

A single vehicle follows an ordered list of pickup and dropoff stops at constant speed on the
plane. Routes are immutable values: every operation returns a new :class:`Route`.

Units:
    Distances are in miles, times in minutes and speeds in miles per minute.

Routing:
    New requests are placed with cheapest insertion. Every pair of gaps ``(i, j)`` with
    ``i <= j`` is scored, where gap ``g`` means "before the existing stop ``g``" and
    ``g == len(stops)`` appends. The pair minimizing the route completion time among the
    capacity-feasible pairs wins, ties going to the lowest pickup gap and then the lowest
    dropoff gap. Previously committed stops are never reordered.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import StrEnum
from typing import Any

import numpy as np

from .exceptions import InfeasibleInsertionError, NotInRouteError, RoutingError

DEFAULT_SPEED = 0.25  # 15 mph


@dataclass(frozen=True, slots=True)
class Location:
    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"Location must be finite, got ({self.x}, {self.y})")

    def to_dict(self) -> dict[str, float]:
        return {"x": self.x, "y": self.y}


class StopKind(StrEnum):
    PICKUP = "pickup"
    DROPOFF = "dropoff"


@dataclass(frozen=True, slots=True)
class Stop:
    kind: StopKind
    passenger_id: str
    location: Location

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": str(self.kind),
            "passenger_id": self.passenger_id,
            "location": self.location.to_dict(),
        }


@dataclass(frozen=True, slots=True)
class TravelModel:
    speed: float = DEFAULT_SPEED

    def __post_init__(self) -> None:
        if not self.speed > 0:
            raise ValueError(f"Speed must be positive, got {self.speed}")


DEFAULT_TRAVEL_MODEL = TravelModel()


@dataclass(frozen=True, slots=True)
class RideRequest:
    """A single-passenger trip request issued at ``issue_time``."""

    passenger_id: str
    origin: Location
    destination: Location
    issue_time: float = 0.0

    def __post_init__(self) -> None:
        if self.origin == self.destination:
            raise ValueError(f"Request {self.passenger_id} has identical origin and destination")

    def to_dict(self) -> dict[str, Any]:
        return {
            "passenger_id": self.passenger_id,
            "origin": self.origin.to_dict(),
            "destination": self.destination.to_dict(),
            "issue_time": self.issue_time,
        }


@dataclass(frozen=True, slots=True)
class Route:
    """Pending stop sequence of one vehicle.

    Attributes:
        vehicle_position: Current (possibly mid-leg) position of the vehicle.
        stops: Stops still to be executed, in order.
        onboard: Passengers currently in the vehicle.
        capacity: Maximum number of passengers onboard at any time.
    """

    vehicle_position: Location
    stops: tuple[Stop, ...] = ()
    onboard: frozenset[str] = frozenset()
    capacity: int = 6

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise ValueError(f"Capacity must be at least 1, got {self.capacity}")

    def loads(self) -> list[int]:
        """Onboard count after executing each prefix of the stop list (index 0: now)."""
        load = len(self.onboard)
        loads = [load]
        for stop in self.stops:
            load += 1 if stop.kind is StopKind.PICKUP else -1
            loads.append(load)
        return loads

    def has_passenger(self, passenger_id: str) -> bool:
        return passenger_id in self.onboard or any(
            stop.passenger_id == passenger_id for stop in self.stops
        )

    def has_pickup(self, passenger_id: str) -> bool:
        return any(
            stop.kind is StopKind.PICKUP and stop.passenger_id == passenger_id
            for stop in self.stops
        )

    def validate(self) -> None:
        """Check ordering, onboard and capacity invariants.

        Raises:
            RoutingError: If any invariant is violated.
        """
        pickups: dict[str, int] = {}
        dropoffs: dict[str, int] = {}
        for index, stop in enumerate(self.stops):
            seen = pickups if stop.kind is StopKind.PICKUP else dropoffs
            if stop.passenger_id in seen:
                raise RoutingError(f"Duplicate {stop.kind} stop for {stop.passenger_id}")
            seen[stop.passenger_id] = index

        for pid, index in pickups.items():
            if pid in self.onboard:
                raise RoutingError(f"Passenger {pid} is onboard with a pending pickup")
            if dropoffs.get(pid, -1) < index:
                raise RoutingError(f"Dropoff of {pid} does not follow its pickup")
        for pid in dropoffs:
            if pid not in pickups and pid not in self.onboard:
                raise RoutingError(f"Dropoff of {pid} without pickup or onboard passenger")
        for pid in self.onboard:
            if pid not in dropoffs:
                raise RoutingError(f"Onboard passenger {pid} has no dropoff")

        loads = self.loads()
        if max(loads) > self.capacity or min(loads) < 0:
            raise RoutingError(f"Route loads {loads} violate capacity {self.capacity}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "vehicle_position": self.vehicle_position.to_dict(),
            "stops": [stop.to_dict() for stop in self.stops],
            "onboard": sorted(self.onboard),
            "capacity": self.capacity,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Route:
        return cls(
            vehicle_position=Location(**data["vehicle_position"]),
            stops=tuple(
                Stop(
                    kind=StopKind(stop["kind"]),
                    passenger_id=stop["passenger_id"],
                    location=Location(**stop["location"]),
                )
                for stop in data["stops"]
            ),
            onboard=frozenset(data["onboard"]),
            capacity=int(data["capacity"]),
        )


def travel_time(a: Location, b: Location, model: TravelModel = DEFAULT_TRAVEL_MODEL) -> float:
    """Travel time in minutes between two locations."""
    return math.hypot(b.x - a.x, b.y - a.y) / model.speed


def stop_times(route: Route, model: TravelModel = DEFAULT_TRAVEL_MODEL) -> list[float]:
    """Elapsed time from now until each pending stop is executed."""
    elapsed = 0.0
    position = route.vehicle_position
    times = []
    for stop in route.stops:
        elapsed += travel_time(position, stop.location, model)
        times.append(elapsed)
        position = stop.location
    return times


def completion_time(route: Route, model: TravelModel = DEFAULT_TRAVEL_MODEL) -> float:
    """Time until the last pending stop is executed (0 for an idle vehicle)."""
    times = stop_times(route, model)
    return times[-1] if times else 0.0


def _stop_index(route: Route, passenger_id: str, kind: StopKind) -> int:
    for index, stop in enumerate(route.stops):
        if stop.kind is kind and stop.passenger_id == passenger_id:
            return index
    raise NotInRouteError(passenger_id, str(kind))


def pickup_time(
    route: Route, passenger_id: str, model: TravelModel = DEFAULT_TRAVEL_MODEL
) -> float:
    """Time until the vehicle picks up ``passenger_id``, assuming no further route changes."""
    index = _stop_index(route, passenger_id, StopKind.PICKUP)
    return stop_times(route, model)[index]


def dropoff_time(
    route: Route, passenger_id: str, model: TravelModel = DEFAULT_TRAVEL_MODEL
) -> float:
    """Time until the vehicle drops off ``passenger_id``, assuming no further route changes."""
    index = _stop_index(route, passenger_id, StopKind.DROPOFF)
    return stop_times(route, model)[index]


def insertion_gaps(route: Route, origin: Location, destination: Location) -> tuple[int, int]:
    """Cheapest capacity-feasible ``(pickup_gap, dropoff_gap)`` pair for a new trip.

    Costs are detours in distance units; a constant speed does not change the ranking.

    Raises:
        InfeasibleInsertionError: If no pair keeps the onboard count within capacity.
    """
    n = len(route.stops)
    points = np.array(
        [(route.vehicle_position.x, route.vehicle_position.y)]
        + [(stop.location.x, stop.location.y) for stop in route.stops]
    )
    to_origin = np.hypot(points[:, 0] - origin.x, points[:, 1] - origin.y)
    to_destination = np.hypot(points[:, 0] - destination.x, points[:, 1] - destination.y)
    steps = np.diff(points, axis=0)
    legs = np.hypot(steps[:, 0], steps[:, 1])
    direct = math.hypot(destination.x - origin.x, destination.y - origin.y)

    # gap g sits between points[g] and points[g + 1]; the last gap has no successor
    pickup_detour = to_origin.copy()
    pickup_detour[:n] += to_origin[1:] - legs
    dropoff_detour = to_destination.copy()
    dropoff_detour[:n] += to_destination[1:] - legs
    paired_detour = to_origin + direct
    paired_detour[:n] += to_destination[1:] - legs

    cost = pickup_detour[:, None] + dropoff_detour[None, :]
    np.fill_diagonal(cost, paired_detour)

    loads = np.asarray(route.loads())
    gaps = np.arange(n + 1)
    ordered = gaps[:, None] <= gaps[None, :]
    window_max = np.maximum.accumulate(np.where(ordered, loads[None, :], -1), axis=1)
    feasible = ordered & (window_max < route.capacity)
    if not feasible.any():
        raise InfeasibleInsertionError("<new>", route.capacity)

    # row-major argmin: lowest pickup gap, then lowest dropoff gap
    best = np.argmin(np.where(feasible, cost, np.inf))
    pickup_gap, dropoff_gap = np.unravel_index(best, cost.shape)
    return int(pickup_gap), int(dropoff_gap)


def insert_request(
    route: Route, request: RideRequest, model: TravelModel = DEFAULT_TRAVEL_MODEL
) -> Route:
    """Insert a request's pickup and dropoff at the cheapest feasible positions.

    Args:
        route: Current route (not modified).
        request: Trip to insert; its passenger must not already be routed.
        model: Travel model. Kept for interface symmetry; constant speed does not change the
            chosen positions.

    Returns:
        New route with the existing stop order preserved.

    Raises:
        RoutingError: If the passenger is already part of the route.
        InfeasibleInsertionError: If no capacity-feasible position pair exists.
    """
    if route.has_passenger(request.passenger_id):
        raise RoutingError(f"Passenger {request.passenger_id} is already routed")
    try:
        pickup_gap, dropoff_gap = insertion_gaps(route, request.origin, request.destination)
    except InfeasibleInsertionError as err:
        raise InfeasibleInsertionError(request.passenger_id, route.capacity) from err

    stops = list(route.stops)
    stops.insert(dropoff_gap, Stop(StopKind.DROPOFF, request.passenger_id, request.destination))
    stops.insert(pickup_gap, Stop(StopKind.PICKUP, request.passenger_id, request.origin))
    return Route(
        vehicle_position=route.vehicle_position,
        stops=tuple(stops),
        onboard=route.onboard,
        capacity=route.capacity,
    )


def advance(route: Route, tau: float, model: TravelModel = DEFAULT_TRAVEL_MODEL) -> Route:
    """Move the vehicle along its route for ``tau`` minutes.

    Stops reached within ``tau`` (inclusive) are executed in order: pickups board their
    passenger, dropoffs remove them. The final position is interpolated exactly along the
    current leg. An idle vehicle stays where it is.
    """
    if tau < 0:
        raise ValueError(f"Cannot advance by negative time {tau}")
    if tau == 0 or not route.stops:
        return route

    position = route.vehicle_position
    onboard = set(route.onboard)
    remaining = tau
    executed = 0
    for stop in route.stops:
        leg = travel_time(position, stop.location, model)
        if leg > remaining:
            fraction = remaining / leg
            position = Location(
                position.x + (stop.location.x - position.x) * fraction,
                position.y + (stop.location.y - position.y) * fraction,
            )
            break
        remaining -= leg
        position = stop.location
        if stop.kind is StopKind.PICKUP:
            onboard.add(stop.passenger_id)
        else:
            onboard.discard(stop.passenger_id)
        executed += 1

    return Route(
        vehicle_position=position,
        stops=route.stops[executed:],
        onboard=frozenset(onboard),
        capacity=route.capacity,
    )
