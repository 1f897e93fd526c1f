import numpy as np
import pytest

from ewtreg.exceptions import HorizonTooLargeError, LookaheadOutOfRangeError, SolverError
from ewtreg.mdp import (
    ActionBounds,
    TargetProfile,
    estimate_ewt,
    initial_state,
    receive_request,
    transition_accept,
    transition_reject,
)
from ewtreg.routing import Location, RideRequest, TravelModel
from ewtreg.scenario import ScenarioConfig, SolverConfig, generate_scenario
from ewtreg.solver import (
    DecisionHistory,
    Edge,
    EpisodeTree,
    Policy,
    Vertex,
    _greedy_action,
    average_deviation,
    backward_induction,
    e_dp,
    evaluate_policy,
    exhaustive_policy_oracle,
    expected_acceptance_rates,
    expected_ewt_curve,
    expected_rewards,
    h_dp,
    monte_carlo_replay,
    path_ewt_curve,
    path_probabilities,
    traverse,
)

BOUNDS = ActionBounds(0.5, 0.9)


def _hand_tree(rewards: list[list[float]], discount: float = 1.0) -> EpisodeTree:
    state = initial_state()
    return EpisodeTree(
        interval=4.0,
        discount=discount,
        target=TargetProfile(),
        vertices=[[Vertex(state, BOUNDS) for _ in range(2**depth)] for depth in range(len(rewards))],
        edges=[[Edge(state, reward) for reward in level] for level in rewards],
    )


# histories


def test_decision_history_bits():
    history = DecisionHistory((1, 0, 1))
    assert history.mask == 5
    assert history.depth == 3
    assert str(history) == "101"
    assert DecisionHistory.from_mask(3, 5) == history
    assert DecisionHistory.from_mask(4, 5).bits == (0, 1, 0, 1)
    with pytest.raises(ValueError):
        DecisionHistory((2,))


# backward induction on hand-built trees


def test_single_decision_prefers_better_branch():
    tree = _hand_tree([[-3.0, -1.0]])
    policy, value = backward_induction(tree)
    assert policy.actions == ((0.9,),)
    assert value == pytest.approx(-1.2)


def test_single_decision_takes_lower_bound_when_reject_is_better():
    tree = _hand_tree([[-1.0, -3.0]])
    policy, value = backward_induction(tree)
    assert policy.actions == ((0.5,),)
    assert value == pytest.approx(-2.0)


def test_ties_go_to_upper_bound():
    policy, value = backward_induction(_hand_tree([[-2.0, -2.0]]))
    assert policy.actions == ((0.9,),)
    assert value == pytest.approx(-2.0)


def test_two_level_tree_by_hand():
    tree = _hand_tree([[-1.0, -2.0], [-5.0, -1.0, -1.0, -4.0]])
    policy, value = backward_induction(tree)
    assert policy.actions == ((0.5,), (0.9, 0.5))
    assert tree.vertices[1][0].value == pytest.approx(-1.4)
    assert tree.vertices[1][1].value == pytest.approx(-2.5)
    assert value == pytest.approx(-3.45)
    assert evaluate_policy(tree, policy) == pytest.approx(-3.45)
    assert exhaustive_policy_oracle(tree) == pytest.approx(-3.45)
    assert list(expected_rewards(tree, policy)) == pytest.approx([-1.5, -1.95])


def test_discounted_backup():
    tree = _hand_tree([[-1.0, -2.0], [-5.0, -1.0, -1.0, -4.0]], discount=0.5)
    _, value = backward_induction(tree)
    assert value == pytest.approx(-2.475)
    assert evaluate_policy(tree, Policy.from_tree(tree)) == pytest.approx(-2.475)


def test_path_probabilities_normalize():
    tree = _hand_tree([[-1.0, -2.0], [-5.0, -1.0, -1.0, -4.0]])
    probabilities = path_probabilities(tree, Policy(((0.7,), (0.2, 0.6))))
    assert [level.sum() for level in probabilities] == pytest.approx([1.0, 1.0, 1.0])
    assert list(probabilities[2]) == pytest.approx([0.3 * 0.8, 0.3 * 0.2, 0.7 * 0.4, 0.7 * 0.6])


def test_policy_validation():
    tree = _hand_tree([[-1.0, -2.0]])
    Policy(((0.5,),)).validate(tree)
    with pytest.raises(SolverError):
        Policy(((1.0,),)).validate(tree)
    with pytest.raises(SolverError):
        Policy(((0.5,), (0.5, 0.5))).validate(tree)


# the exact solve on generated scenarios


@pytest.mark.parametrize("seed", range(10))
def test_exact_solve_matches_exhaustive_search(seed):
    scenario = generate_scenario(ScenarioConfig(n_sequential=3, seed=seed))
    policy, tree = e_dp(scenario)
    assert exhaustive_policy_oracle(tree) == pytest.approx(tree.root.value, abs=1e-9)
    assert evaluate_policy(tree, policy) == pytest.approx(tree.root.value, abs=1e-9)


@pytest.mark.parametrize("seed", range(10))
def test_interior_actions_never_improve(seed):
    scenario = generate_scenario(ScenarioConfig(n_sequential=3, seed=seed))
    policy, tree = e_dp(scenario)
    best = tree.root.value
    for depth, level in enumerate(tree.vertices):
        for mask, vertex in enumerate(level):
            for action in np.linspace(vertex.bounds.lower, vertex.bounds.upper, 7)[1:-1]:
                actions = [list(row) for row in policy.actions]
                actions[depth][mask] = float(action)
                perturbed = Policy(tuple(tuple(row) for row in actions))
                assert evaluate_policy(tree, perturbed) <= best + 1e-9


def test_exact_solve_dominates_endpoint_policies(small_solution):
    policy, tree = small_solution
    value = evaluate_policy(tree, policy)
    assert value >= evaluate_policy(tree, Policy.endpoints(tree, upper=True)) - 1e-9
    assert value >= evaluate_policy(tree, Policy.endpoints(tree, upper=False)) - 1e-9
    policy.validate(tree)


def test_oracle_refuses_large_trees():
    tree = traverse(generate_scenario(ScenarioConfig(n_sequential=5, seed=1)))
    with pytest.raises(HorizonTooLargeError):
        exhaustive_policy_oracle(tree)


def test_empty_scenario_cannot_be_solved():
    with pytest.raises(SolverError):
        traverse(generate_scenario(ScenarioConfig(n_sequential=0)))


def test_tree_layout(canonical_solution, canonical):
    _, tree = canonical_solution
    assert tree.horizon == 8
    assert sum(len(level) for level in tree.vertices) == 255
    assert sum(len(level) for level in tree.edges) == 510
    for depth, level in enumerate(tree.vertices):
        expected = canonical.sequential_requests[depth]
        assert all(vertex.state.pending_request == expected for vertex in level)
        assert all(vertex.state.time == pytest.approx(expected.issue_time) for vertex in level)
    # the reject-everything leaf never saw a sequential passenger in its route
    leaf = tree.edges[-1][0].post_state
    assert not any(leaf.route.has_passenger(req.passenger_id) for req in canonical.sequential_requests)
    first = canonical.sequential_requests[0].passenger_id
    assert tree.vertex(DecisionHistory((1,))).state.passenger_statuses[first] != "rejected"
    assert tree.vertex(DecisionHistory((0,))).state.passenger_statuses[first] == "rejected"


def test_tree_export(small_solution):
    policy, tree = small_solution
    exported = tree.to_dict()
    assert len(exported["vertices"]) == 7
    assert len(exported["edges"]) == 14
    assert set(policy.to_dict()) == set(exported["vertices"])
    assert exported["vertices"][""]["action"] == policy[DecisionHistory()]


# receding-horizon solve


def test_full_lookahead_equals_exact_solve(small_scenario, small_solution):
    policy, _ = small_solution
    assert h_dp(small_scenario, small_scenario.horizon).actions == policy.actions


def test_full_lookahead_equals_exact_solve_on_canonical(canonical, canonical_solution):
    policy, _ = canonical_solution
    assert h_dp(canonical, 8).actions == policy.actions


@pytest.mark.parametrize("lookahead", [1, 2])
def test_final_window_is_solved_exactly(small_scenario, small_solution, lookahead):
    policy, tree = small_solution
    heuristic = h_dp(small_scenario, lookahead)
    heuristic.validate(tree)
    for depth in range(tree.horizon - lookahead, tree.horizon):
        assert heuristic.actions[depth] == policy.actions[depth]


def test_zero_lookahead_compares_post_decision_ewt(small_scenario, small_solution):
    _, tree = small_solution
    heuristic = h_dp(small_scenario, 0)
    heuristic.validate(tree)
    for depth, level in enumerate(tree.vertices):
        for mask, vertex in enumerate(level):
            target = 5.0
            accept_gap = abs(estimate_ewt(transition_accept(vertex.state)) - target)
            reject_gap = abs(estimate_ewt(transition_reject(vertex.state)) - target)
            expected = vertex.bounds.upper if accept_gap < reject_gap else vertex.bounds.lower
            assert heuristic.action(depth, mask) == expected


class _BranchEwt:
    """Dynamics stand-in with a fixed EWT per branch."""

    model = TravelModel()
    target = TargetProfile.constant(5.0)

    def __init__(self, accept_ewt: float, reject_ewt: float):
        self.accept_ewt = accept_ewt
        self.reject_ewt = reject_ewt

    def ewt(self, state):
        return self.accept_ewt if state.route.stops else self.reject_ewt


@pytest.mark.parametrize(
    ("accept_ewt", "reject_ewt", "expected"),
    [
        (4.5, 6.0, BOUNDS.upper),
        (3.0, 5.5, BOUNDS.lower),
        # equally far from the target on both sides
        (4.0, 6.0, BOUNDS.lower),
        (5.5, 5.5, BOUNDS.lower),
    ],
)
def test_zero_lookahead_needs_a_strict_improvement(accept_ewt, reject_ewt, expected):
    pending = receive_request(initial_state(), RideRequest("p1", Location(0, 0), Location(1, 1)))
    assert _greedy_action(pending, BOUNDS, _BranchEwt(accept_ewt, reject_ewt)) == expected


def test_zero_lookahead_is_no_better_than_exact(canonical, canonical_solution):
    policy, tree = canonical_solution
    assert average_deviation(tree, h_dp(canonical, 0)) >= average_deviation(tree, policy) - 1e-12


@pytest.mark.parametrize("lookahead", [-1, 4])
def test_lookahead_out_of_range(small_scenario, lookahead):
    with pytest.raises(LookaheadOutOfRangeError):
        h_dp(small_scenario, lookahead)


# episode statistics


def test_average_deviation_includes_the_first_interval(small_solution):
    policy, tree = small_solution
    total = tree.prelude_reward + expected_rewards(tree, policy).sum()
    assert tree.end_time - tree.start_time == pytest.approx(16.0)
    assert average_deviation(tree, policy) == pytest.approx(-total * 4.0 / 16.0)
    assert average_deviation(tree, policy) >= 0


def test_average_deviation_ignores_discount(small_scenario):
    config = SolverConfig(discount=0.5)
    policy, tree = e_dp(small_scenario, config)
    total = tree.prelude_reward + expected_rewards(tree, policy).sum()
    assert average_deviation(tree, policy) == pytest.approx(-total / 4.0)


def test_statistics_need_a_full_tree():
    tree = _hand_tree([[-1.0, -2.0]])
    with pytest.raises(SolverError):
        average_deviation(tree, Policy(((0.5,),)))


def test_all_accept_expectation_is_the_baseline(small_solution):
    _, tree = small_solution
    baseline = path_ewt_curve(tree)
    expected = expected_ewt_curve(tree, Policy.constant(tree, 1.0))
    np.testing.assert_array_equal(expected.to_numpy(), baseline.to_numpy())
    assert len(baseline) == 65
    assert baseline.index[0] == 0.0
    assert baseline.index[-1] == 16.0
    assert baseline.iloc[0] == pytest.approx(estimate_ewt(tree.prelude_state))


def test_curve_is_probability_weighted(small_solution):
    policy, tree = small_solution
    curve = expected_ewt_curve(tree, policy)
    probabilities = path_probabilities(tree, policy)
    paths = [
        path_ewt_curve(tree, DecisionHistory.from_mask(tree.horizon, mask).bits)
        for mask in range(2**tree.horizon)
    ]
    # after the last decision every history is a full path
    last = curve.index >= tree.end_time - tree.interval
    mixed = sum(p * path[last] for p, path in zip(probabilities[-1], paths, strict=True))
    np.testing.assert_allclose(curve[last].to_numpy(), mixed.to_numpy(), rtol=1e-12)


def test_baseline_is_independent_of_the_target(small_scenario):
    curves = [
        path_ewt_curve(traverse(small_scenario, SolverConfig(target=TargetProfile.constant(target))))
        for target in (4.0, 5.0, 6.0)
    ]
    for curve in curves[1:]:
        np.testing.assert_array_equal(curve.to_numpy(), curves[0].to_numpy())


def test_acceptance_rates(small_solution):
    policy, tree = small_solution
    rates = expected_acceptance_rates(tree, policy)
    assert len(rates.rates) == 3
    assert rates.rates[0] == policy.actions[0][0]
    assert all(0 < rate < 1 for rate in rates.rates)
    all_accept = expected_acceptance_rates(tree, Policy.constant(tree, 1.0))
    assert all_accept.rates == (1.0, 1.0, 1.0)
    assert all_accept.mean == 1.0


def test_monte_carlo_replay_agrees_with_expectations(canonical_solution):
    policy, tree = canonical_solution
    replay = monte_carlo_replay(tree, policy, n_episodes=100_000, seed=1)
    curve = expected_ewt_curve(tree, policy).to_numpy()
    rates = np.array(expected_acceptance_rates(tree, policy).rates)

    np.testing.assert_array_equal(replay.times, expected_ewt_curve(tree, policy).index.to_numpy())
    # Single quantities are held to 3 standard errors (0.27% false alarms). Families are
    # Bonferroni-widened to stay under that rate: 8 passengers at 4 sigma (8 * 6.3e-5) and
    # 145 curve samples at 5 sigma (145 * 5.7e-7).
    assert np.all(np.abs(replay.acceptance_mean - rates) <= 4 * replay.acceptance_stderr)
    # the stderr of an average is at most the average stderr
    assert abs(replay.acceptance_mean.mean() - rates.mean()) <= 3 * replay.acceptance_stderr.mean()
    assert abs(replay.curve_mean.mean() - curve.mean()) <= 3 * replay.curve_stderr.mean() + 1e-9
    assert np.all(np.abs(replay.curve_mean - curve) <= 5 * replay.curve_stderr + 1e-9)


def test_replay_is_seeded(small_solution):
    policy, tree = small_solution
    first = monte_carlo_replay(tree, policy, n_episodes=1000, seed=3)
    second = monte_carlo_replay(tree, policy, n_episodes=1000, seed=3)
    np.testing.assert_array_equal(first.curve_mean, second.curve_mean)
    np.testing.assert_array_equal(first.acceptance_mean, second.acceptance_mean)
