import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ewtreg.exceptions import (
    IndexOutOfRangeError,
    NoPendingRequestError,
    RequestAlreadyPendingError,
    StateError,
    TimeMismatchError,
)
from ewtreg.io import canonical_json
from ewtreg.mdp import (
    ActionBounds,
    BoundsRule,
    ChoiceUtilities,
    PassengerStatus,
    SystemState,
    TargetProfile,
    action_bounds,
    advance_state,
    branch_reward,
    choice_probabilities,
    choice_probability,
    estimate_ewt,
    initial_state,
    probe_requests,
    receive_request,
    transition_accept,
    transition_reject,
)
from ewtreg.routing import Location, RideRequest, insert_request, pickup_time

IDLE_CENTER_EWT = math.sqrt(0.5) / 0.25


def _random_state(rng: np.random.Generator, n_requests: int, time: float = 0.0) -> SystemState:
    """Settled state with ``n_requests`` accepted trips from uniform endpoints."""
    state = initial_state(position=Location(*rng.random(2)), time=time)
    for index in range(n_requests):
        ox, oy, dx, dy = rng.random(4)
        request = RideRequest(f"r{index}", Location(ox, oy), Location(dx, dy), time)
        state = transition_accept(receive_request(state, request))
    return state


# discrete choice


def test_choice_probability_examples():
    assert choice_probability(ChoiceUtilities((0.7, 0.7)), 0) == pytest.approx(0.5)
    assert choice_probability(ChoiceUtilities((math.log(3), 0.0)), 0) == pytest.approx(0.75)
    assert choice_probability(ChoiceUtilities((1000.0, 0.0)), 0) == pytest.approx(1.0, abs=1e-12)


def test_choice_probability_index_is_checked():
    utilities = ChoiceUtilities((0.0, 1.0))
    with pytest.raises(IndexOutOfRangeError):
        choice_probability(utilities, 2)
    with pytest.raises(IndexError):
        choice_probability(utilities, -1)


def test_choice_utilities_must_be_finite():
    with pytest.raises(ValueError):
        ChoiceUtilities(())
    with pytest.raises(ValueError):
        ChoiceUtilities((math.nan,))


@given(st.lists(st.floats(min_value=-700, max_value=700), min_size=1, max_size=8))
def test_choice_probabilities_form_a_distribution(values):
    probabilities = choice_probabilities(ChoiceUtilities(tuple(values)))
    assert np.all((probabilities >= 0) & (probabilities <= 1))
    assert probabilities.sum() == pytest.approx(1.0, abs=1e-12)


# request handling and branches


def test_receive_request_sets_only_the_pending_request():
    state = initial_state()
    request = RideRequest("p1", Location(0, 0), Location(1, 1))
    pending = receive_request(state, request)
    assert pending.pending_request == request
    assert pending.route is state.route
    assert pending.time == state.time


def test_receive_request_guards():
    state = initial_state()
    with pytest.raises(TimeMismatchError):
        receive_request(state, RideRequest("p1", Location(0, 0), Location(1, 1), issue_time=4.0))
    pending = receive_request(state, RideRequest("p1", Location(0, 0), Location(1, 1)))
    with pytest.raises(RequestAlreadyPendingError):
        receive_request(pending, RideRequest("p2", Location(0, 1), Location(1, 1)))
    rejected = transition_reject(pending)
    with pytest.raises(StateError):
        receive_request(rejected, RideRequest("p1", Location(0, 1), Location(1, 1)))


def test_branches_need_a_pending_request():
    with pytest.raises(NoPendingRequestError):
        transition_accept(initial_state())
    with pytest.raises(NoPendingRequestError):
        transition_reject(initial_state())
    with pytest.raises(NoPendingRequestError):
        action_bounds(initial_state(), 5.0)


def test_accept_routes_the_request():
    pending = receive_request(initial_state(), RideRequest("p1", Location(0, 0), Location(1, 1)))
    accepted = transition_accept(pending)
    assert [stop.passenger_id for stop in accepted.route.stops] == ["p1", "p1"]
    assert accepted.passenger_statuses["p1"] is PassengerStatus.WAITING
    assert accepted.pending_request is None


def test_reject_keeps_the_route():
    rng = np.random.Generator(np.random.Philox(key=3))
    state = _random_state(rng, 3)
    pending = receive_request(state, RideRequest("p9", Location(0, 0), Location(1, 0)))
    rejected = transition_reject(pending)
    assert rejected.route == state.route
    assert rejected.time == state.time
    assert rejected.passenger_statuses["p9"] is PassengerStatus.REJECTED
    later = advance_state(rejected, 30.0)
    assert not later.route.has_passenger("p9")


def test_advance_state_updates_statuses():
    pending = receive_request(initial_state(position=Location(0, 0)), RideRequest("p1", Location(0, 1), Location(1, 1)))
    state = transition_accept(pending)
    assert advance_state(state, 2.0).passenger_statuses["p1"] is PassengerStatus.WAITING
    assert advance_state(state, 5.0).passenger_statuses["p1"] is PassengerStatus.ONBOARD
    finished = advance_state(state, 8.0)
    assert finished.passenger_statuses["p1"] is PassengerStatus.COMPLETED
    assert finished.time == 8.0
    with pytest.raises(RequestAlreadyPendingError):
        advance_state(pending, 1.0)


def test_state_transitions_are_additive_in_time():
    rng = np.random.Generator(np.random.Philox(key=11))
    for _ in range(1000):
        state = _random_state(rng, int(rng.integers(1, 5)))
        first, second = rng.random(2) * 10
        split = advance_state(advance_state(state, first), second)
        joint = advance_state(state, first + second)
        assert split.passenger_statuses == joint.passenger_statuses
        assert split.time == pytest.approx(joint.time)
        assert [stop.passenger_id for stop in split.route.stops] == [
            stop.passenger_id for stop in joint.route.stops
        ]
        assert split.route.vehicle_position.x == pytest.approx(joint.route.vehicle_position.x, abs=1e-9)
        assert split.route.vehicle_position.y == pytest.approx(joint.route.vehicle_position.y, abs=1e-9)

        request = RideRequest("new", Location(*rng.random(2)), Location(*rng.random(2)), state.time)
        assert transition_reject(receive_request(state, request)).route == state.route


def test_successor_depends_only_on_the_serialized_state():
    rng = np.random.Generator(np.random.Philox(key=5))
    state = _random_state(rng, 3)
    request = RideRequest("p9", Location(0.1, 0.9), Location(0.8, 0.2), 4.0)

    def step(s: SystemState) -> SystemState:
        decided = transition_accept(receive_request(s, RideRequest("p8", Location(0.4, 0.4), Location(0.6, 0.9))))
        return receive_request(advance_state(decided, 4.0), request)

    copy = SystemState.from_dict(state.to_dict())
    assert canonical_json(step(copy).to_dict()) == canonical_json(step(state).to_dict())


# EWT and rewards


def test_ewt_of_idle_vehicle_at_center():
    assert estimate_ewt(initial_state()) == pytest.approx(IDLE_CENTER_EWT)
    assert IDLE_CENTER_EWT == pytest.approx(2.8284, abs=1e-4)


def test_ewt_matches_independent_probe_insertions():
    rng = np.random.Generator(np.random.Philox(key=8))
    state = _random_state(rng, 4)
    before = state.to_dict()
    waits = [
        pickup_time(insert_request(state.route, probe), probe.passenger_id)
        for probe in probe_requests()
    ]
    assert estimate_ewt(state) == pytest.approx(sum(waits) / 4)
    assert state.to_dict() == before


def test_ewt_needs_a_settled_state():
    pending = receive_request(initial_state(), RideRequest("p1", Location(0, 0), Location(1, 1)))
    with pytest.raises(RequestAlreadyPendingError):
        estimate_ewt(pending)


def test_branch_reward_of_constant_ewt():
    state = initial_state()
    assert branch_reward(state, 4.0, TargetProfile.constant(5.0)) == pytest.approx(
        -abs(IDLE_CENTER_EWT - 5.0)
    )
    assert branch_reward(state, 4.0, TargetProfile.constant(IDLE_CENTER_EWT)) == pytest.approx(0.0, abs=1e-12)


def test_branch_reward_reads_target_at_absolute_time():
    state = initial_state(time=18.0)
    # target switches halfway through [18, 22]
    profile = TargetProfile.switched(4.0, 20.0, 6.0)
    expected = -(abs(IDLE_CENTER_EWT - 4.0) + abs(IDLE_CENTER_EWT - 6.0)) / 2
    assert branch_reward(state, 4.0, profile) == pytest.approx(expected)


def test_branch_reward_is_never_positive():
    rng = np.random.Generator(np.random.Philox(key=2))
    for _ in range(20):
        state = _random_state(rng, 3)
        assert branch_reward(state, 4.0, TargetProfile.constant(float(rng.uniform(1, 8)))) <= 0


def test_branch_reward_refines():
    rng = np.random.Generator(np.random.Philox(key=17))
    target = TargetProfile.constant(5.0)
    for _ in range(100):
        state = _random_state(rng, int(rng.integers(1, 5)))
        coarse = branch_reward(state, 4.0, target, n_samples=16)
        fine = branch_reward(state, 4.0, target, n_samples=1024)
        assert coarse == pytest.approx(fine, abs=0.05)


def test_branch_reward_argument_checks():
    with pytest.raises(ValueError):
        branch_reward(initial_state(), 0.0, TargetProfile())
    with pytest.raises(ValueError):
        branch_reward(initial_state(), 4.0, TargetProfile(), n_samples=0)


# action bounds


def _bounds_state() -> SystemState:
    # pickup 2 min away, 1 min ride: shared total 3 min, direct trip 1 min
    request = RideRequest("p1", Location(0, 0.5), Location(0, 0.75))
    return receive_request(initial_state(position=Location(0, 0)), request)


@pytest.mark.parametrize(
    ("target", "expected"),
    [
        # alternative 2/3 * T + 1; ratio 3 / alternative
        (3 / 1.4 * 1.5 - 1.5, ActionBounds(0.5, 0.9)),
        (3 / 1.6 * 1.5 - 1.5, ActionBounds(0.2, 0.6)),
    ],
)
def test_action_bounds_by_ratio(target, expected):
    assert action_bounds(_bounds_state(), target) == expected


def test_action_bounds_ratio_limit_is_inclusive():
    rule = BoundsRule(alternative_wait_factor=0.5)
    # alternative 0.5 * 2 + 1 = 2, ratio exactly 1.5
    assert action_bounds(_bounds_state(), 2.0, rule=rule) == ActionBounds(0.5, 0.9)
    assert BoundsRule().bounds_for(3.0, 2.0) == ActionBounds(0.5, 0.9)
    assert BoundsRule().bounds_for(3.0 + 1e-9, 2.0) == ActionBounds(0.2, 0.6)


def test_action_bounds_are_strict():
    with pytest.raises(ValueError):
        ActionBounds(0.5, 0.5)
    with pytest.raises(ValueError):
        ActionBounds(0.0, 0.5)
    with pytest.raises(ValueError):
        BoundsRule(within=(0.9, 0.5))


# targets


def test_target_profile_lookup():
    profile = TargetProfile.switched(4.0, 20.0, 6.0)
    assert profile.at(0.0) == 4.0
    assert profile.at(19.999) == 4.0
    assert profile.at(20.0) == 6.0
    assert profile.label() == "0:4;20:6"


@pytest.mark.parametrize(
    "segments",
    [(), ((1.0, 5.0),), ((0.0, 5.0), (0.0, 6.0)), ((0.0, -1.0),)],
)
def test_target_profile_validation(segments):
    with pytest.raises(ValueError):
        TargetProfile(segments=segments)
