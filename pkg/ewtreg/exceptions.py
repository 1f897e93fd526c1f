class EwtRegError(Exception):
    """Base exception for ewtreg errors"""

    pass


class ConfigError(EwtRegError):
    """Invalid scenario, solver or command-line configuration"""

    pass


class RoutingError(EwtRegError):
    """Route construction or query errors"""

    pass


class InfeasibleInsertionError(RoutingError):
    """No capacity-feasible pickup/dropoff position pair exists"""

    def __init__(self, passenger_id: str, capacity: int):
        self.passenger_id = passenger_id
        self.capacity = capacity
        super().__init__(f"No feasible insertion for {passenger_id} (capacity {capacity})")


class NotInRouteError(RoutingError):
    """Passenger has no pending stop of the requested kind"""

    def __init__(self, passenger_id: str, kind: str):
        self.passenger_id = passenger_id
        super().__init__(f"Passenger {passenger_id} has no pending {kind} stop")


class StateError(EwtRegError):
    """Invalid system state transition"""

    pass


class NoPendingRequestError(StateError):
    pass


class RequestAlreadyPendingError(StateError):
    pass


class TimeMismatchError(StateError):
    def __init__(self, state_time: float, issue_time: float):
        self.state_time = state_time
        self.issue_time = issue_time
        super().__init__(f"Request issued at t={issue_time} but state is at t={state_time}")


class IndexOutOfRangeError(EwtRegError, IndexError):
    """Choice index outside the list of alternatives"""

    pass


class SolverError(EwtRegError):
    """Dynamic programming solver errors"""

    pass


class LookaheadOutOfRangeError(SolverError):
    def __init__(self, lookahead: int, horizon: int):
        self.lookahead = lookahead
        self.horizon = horizon
        super().__init__(f"Lookahead {lookahead} outside [0, {horizon}]")


class HorizonTooLargeError(SolverError):
    def __init__(self, horizon: int, limit: int):
        self.horizon = horizon
        super().__init__(f"Horizon {horizon} too large for exhaustive enumeration (max {limit})")
