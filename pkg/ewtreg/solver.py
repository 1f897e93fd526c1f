"""Episode-tree dynamic programming for the desired probability of acceptance.

In the offline setting every request of the episode is known in advance, so the reachable
states form a complete binary tree over accept/reject histories. Vertex ``(k, h)`` is the
decision on request ``k + 1`` after the history whose bits, first decision most significant,
spell ``h``. Its two child edges carry index ``2h`` (reject) and ``2h + 1`` (accept) at depth
``k`` and hold the post-decision state together with the reward of the following interval.

The tree is fully materialized: at ``N = 8`` it has 255 decision vertices and 510 edges.

Exact solves (:func:`e_dp`) traverse the tree once and back values up level by level, always
picking one endpoint of the action interval since the vertex value is linear in the action.
Heuristic solves (:func:`h_dp`) re-run the exact solve on a truncated subtree at every
vertex and commit only its root action.
"""

from __future__ import annotations

import itertools
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import pandas as pd

from .exceptions import HorizonTooLargeError, LookaheadOutOfRangeError, SolverError
from .mdp import (
    DEFAULT_PROBES,
    ActionBounds,
    BoundsRule,
    SystemState,
    TargetProfile,
    action_bounds,
    advance_state,
    branch_reward,
    estimate_ewt,
    initial_state,
    receive_request,
    transition_accept,
    transition_reject,
)
from .routing import DEFAULT_TRAVEL_MODEL, Location, RideRequest, TravelModel
from .scenario import Scenario, SolverConfig
from .utils import get_logger

ORACLE_MAX_HORIZON = 4
DEFAULT_CURVE_STEP = 0.25
DEFAULT_REPLAY_EPISODES = 100_000


@dataclass(frozen=True, slots=True)
class DecisionHistory:
    """Decisions ``d_1 .. d_k`` of the first ``k`` passengers (1 = accept)."""

    bits: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if any(bit not in (0, 1) for bit in self.bits):
            raise ValueError(f"Decision bits must be 0 or 1, got {self.bits}")

    @property
    def depth(self) -> int:
        return len(self.bits)

    @property
    def mask(self) -> int:
        mask = 0
        for bit in self.bits:
            mask = 2 * mask + bit
        return mask

    @classmethod
    def from_mask(cls, depth: int, mask: int) -> DecisionHistory:
        return cls(tuple((mask >> shift) & 1 for shift in reversed(range(depth))))

    def __str__(self) -> str:
        return "".join(str(bit) for bit in self.bits)


@dataclass(slots=True)
class Vertex:
    state: SystemState
    bounds: ActionBounds
    action: float = 0.0
    value: float = 0.0


@dataclass(frozen=True, slots=True)
class Edge:
    post_state: SystemState
    reward: float


@dataclass(slots=True)
class EpisodeTree:
    """Complete binary decision tree of one episode.

    Attributes:
        interval: Time between consecutive requests.
        discount: Discount applied per interval during backup.
        target: Target profile the rewards and bounds were computed against.
        vertices: ``vertices[k][h]`` decides request ``k + 1`` after history ``h``.
        edges: ``edges[k][2h + d]`` follows decision ``d`` at vertex ``(k, h)``.
        prelude_state: Settled state right after the initial commitments (full trees only).
        prelude_reward: Reward of the interval before the first decision.
    """

    interval: float
    discount: float
    target: TargetProfile
    vertices: list[list[Vertex]]
    edges: list[list[Edge]]
    model: TravelModel = DEFAULT_TRAVEL_MODEL
    probes: tuple[RideRequest, ...] = DEFAULT_PROBES
    prelude_state: SystemState | None = None
    prelude_reward: float = 0.0

    @property
    def horizon(self) -> int:
        return len(self.vertices)

    @property
    def root(self) -> Vertex:
        return self.vertices[0][0]

    @property
    def start_time(self) -> float:
        """Time of the episode start: the prelude if present, else the root decision."""
        if self.prelude_state is not None:
            return self.prelude_state.time
        return self.root.state.time

    @property
    def end_time(self) -> float:
        return self.root.state.time + self.horizon * self.interval

    def vertex(self, history: DecisionHistory) -> Vertex:
        return self.vertices[history.depth][history.mask]

    def edge(self, history: DecisionHistory) -> Edge:
        if history.depth == 0:
            raise ValueError("Edges are addressed by non-empty histories")
        return self.edges[history.depth - 1][history.mask]

    def to_dict(self) -> dict[str, Any]:
        return {
            "horizon": self.horizon,
            "interval": self.interval,
            "discount": self.discount,
            "target": [list(segment) for segment in self.target.segments],
            "prelude_reward": self.prelude_reward,
            "vertices": {
                str(DecisionHistory.from_mask(depth, mask)): {
                    "passenger_id": (
                        vertex.state.pending_request.passenger_id
                        if vertex.state.pending_request is not None
                        else None
                    ),
                    "time": vertex.state.time,
                    "bounds": vertex.bounds.to_dict(),
                    "action": vertex.action,
                    "value": vertex.value,
                }
                for depth, level in enumerate(self.vertices)
                for mask, vertex in enumerate(level)
            },
            "edges": {
                str(DecisionHistory.from_mask(depth + 1, index)): edge.reward
                for depth, level in enumerate(self.edges)
                for index, edge in enumerate(level)
            },
        }


@dataclass(frozen=True, slots=True)
class Policy:
    """Desired acceptance probability per decision vertex: ``actions[k][h]``."""

    actions: tuple[tuple[float, ...], ...]

    def __getitem__(self, history: DecisionHistory) -> float:
        return self.actions[history.depth][history.mask]

    def action(self, depth: int, mask: int) -> float:
        return self.actions[depth][mask]

    @classmethod
    def from_tree(cls, tree: EpisodeTree) -> Policy:
        return cls(tuple(tuple(vertex.action for vertex in level) for level in tree.vertices))

    @classmethod
    def constant(cls, tree: EpisodeTree, action: float) -> Policy:
        """Same action everywhere; not necessarily admissible (e.g. 1.0 for the baseline)."""
        return cls(tuple((action,) * len(level) for level in tree.vertices))

    @classmethod
    def endpoints(cls, tree: EpisodeTree, upper: bool) -> Policy:
        """Always the upper (or always the lower) bound of each vertex."""
        return cls(
            tuple(
                tuple(vertex.bounds.upper if upper else vertex.bounds.lower for vertex in level)
                for level in tree.vertices
            )
        )

    def validate(self, tree: EpisodeTree) -> None:
        """Check the policy covers every vertex with an admissible action."""
        if [len(level) for level in self.actions] != [len(level) for level in tree.vertices]:
            raise SolverError("Policy shape does not match the episode tree")
        for depth, level in enumerate(tree.vertices):
            for mask, vertex in enumerate(level):
                if not vertex.bounds.contains(self.actions[depth][mask]):
                    history = DecisionHistory.from_mask(depth, mask)
                    raise SolverError(f"Action at vertex '{history}' outside its bounds")

    def to_dict(self) -> dict[str, float]:
        return {
            str(DecisionHistory.from_mask(depth, mask)): action
            for depth, level in enumerate(self.actions)
            for mask, action in enumerate(level)
        }


@dataclass(frozen=True, slots=True)
class _Dynamics:
    model: TravelModel
    probes: tuple[RideRequest, ...]
    interval: float
    reward_samples: int
    target: TargetProfile
    rule: BoundsRule
    discount: float

    @classmethod
    def build(cls, scenario: Scenario, config: SolverConfig) -> _Dynamics:
        return cls(
            model=scenario.config.travel_model(),
            probes=scenario.config.probes(),
            interval=scenario.config.request_interval,
            reward_samples=scenario.config.reward_samples,
            target=config.target,
            rule=config.bounds,
            discount=config.discount,
        )

    def reward(self, post: SystemState) -> float:
        return branch_reward(
            post, self.interval, self.target, self.reward_samples, self.model, self.probes
        )

    def bounds(self, state: SystemState) -> ActionBounds:
        return action_bounds(state, self.target.at(state.time), self.model, self.rule)

    def ewt(self, state: SystemState) -> float:
        return estimate_ewt(state, self.model, self.probes)

    def successor(self, post: SystemState, request: RideRequest) -> SystemState:
        return receive_request(advance_state(post, self.interval, self.model), request)


def _prelude(scenario: Scenario, dynamics: _Dynamics) -> SystemState:
    """Commit the initial requests one by one, in request order."""
    side = scenario.config.square_side
    state = initial_state(scenario.config.capacity, Location(side / 2, side / 2))
    for request in scenario.initial_requests:
        state = transition_accept(receive_request(state, request), dynamics.model)
    return state


def _expand(
    root: SystemState,
    later_requests: Sequence[RideRequest],
    height: int,
    dynamics: _Dynamics,
) -> EpisodeTree:
    vertices = [[Vertex(root, dynamics.bounds(root))]]
    edges: list[list[Edge]] = []
    for depth in range(height):
        level: list[Edge] = []
        children: list[Vertex] = []
        for vertex in vertices[depth]:
            rejected = transition_reject(vertex.state)
            accepted = transition_accept(vertex.state, dynamics.model)
            for post in (rejected, accepted):
                level.append(Edge(post, dynamics.reward(post)))
                if depth + 1 < height:
                    child = dynamics.successor(post, later_requests[depth])
                    children.append(Vertex(child, dynamics.bounds(child)))
        edges.append(level)
        if children:
            vertices.append(children)
    return EpisodeTree(
        interval=dynamics.interval,
        discount=dynamics.discount,
        target=dynamics.target,
        vertices=vertices,
        edges=edges,
        model=dynamics.model,
        probes=dynamics.probes,
    )


def traverse(scenario: Scenario, config: SolverConfig | None = None) -> EpisodeTree:
    """Build the full episode tree with every edge reward filled in and values zeroed."""
    config = config or SolverConfig()
    if scenario.horizon == 0:
        raise SolverError("Scenario has no sequential requests to decide on")
    dynamics = _Dynamics.build(scenario, config)
    logger = get_logger()

    prelude = _prelude(scenario, dynamics)
    root = dynamics.successor(prelude, scenario.sequential_requests[0])
    tree = _expand(root, scenario.sequential_requests[1:], scenario.horizon, dynamics)
    tree.prelude_state = prelude
    tree.prelude_reward = dynamics.reward(prelude)
    logger.debug(
        f"Traversed tree: {scenario.horizon} requests, "
        f"{sum(len(level) for level in tree.edges)} edges"
    )
    return tree


def backward_induction(tree: EpisodeTree) -> tuple[Policy, float]:
    """Back values up from the leaves, storing the optimal action and value at each vertex.

    Ties go to the upper bound.
    """
    gamma = tree.discount
    next_values = [0.0] * (2**tree.horizon)
    for depth in reversed(range(tree.horizon)):
        edges = tree.edges[depth]
        values = []
        for h, vertex in enumerate(tree.vertices[depth]):
            reject = edges[2 * h].reward + gamma * next_values[2 * h]
            accept = edges[2 * h + 1].reward + gamma * next_values[2 * h + 1]
            action = vertex.bounds.upper if accept >= reject else vertex.bounds.lower
            vertex.action = action
            vertex.value = action * accept + (1 - action) * reject
            values.append(vertex.value)
        next_values = values
    return Policy.from_tree(tree), tree.root.value


def e_dp(scenario: Scenario, config: SolverConfig | None = None) -> tuple[Policy, EpisodeTree]:
    """Exact solve: traverse the whole tree, then back up."""
    tree = traverse(scenario, config)
    policy, root_value = backward_induction(tree)
    get_logger().debug(f"E-DP({tree.horizon}) root value {root_value:.6f}")
    return policy, tree


def _greedy_action(state: SystemState, bounds: ActionBounds, dynamics: _Dynamics) -> float:
    """Upper bound only if accepting lands strictly closer to the current target; ties reject."""
    target = dynamics.target.at(state.time)
    accept_gap = abs(dynamics.ewt(transition_accept(state, dynamics.model)) - target)
    reject_gap = abs(dynamics.ewt(transition_reject(state)) - target)
    return bounds.upper if accept_gap < reject_gap else bounds.lower


def h_dp(scenario: Scenario, lookahead: int, config: SolverConfig | None = None) -> Policy:
    """Receding-horizon solve looking ``lookahead`` requests ahead of every vertex.

    Vertices whose remaining horizon exceeds the lookahead solve a subtree of height
    ``lookahead`` and keep only its root action (with no lookahead the two post-decision EWTs
    are compared directly). Once at most ``lookahead`` requests remain, the whole remaining
    subtree is solved exactly and all of its actions are kept.

    Raises:
        LookaheadOutOfRangeError: If ``lookahead`` is outside ``[0, N]``.
    """
    config = config or SolverConfig()
    horizon = scenario.horizon
    if not 0 <= lookahead <= horizon:
        raise LookaheadOutOfRangeError(lookahead, horizon)
    if horizon == 0:
        raise SolverError("Scenario has no sequential requests to decide on")
    dynamics = _Dynamics.build(scenario, config)
    requests = scenario.sequential_requests
    logger = get_logger()

    actions = [[0.0] * (2**depth) for depth in range(horizon)]
    level_states = [dynamics.successor(_prelude(scenario, dynamics), requests[0])]
    for depth in range(horizon):
        remaining = horizon - depth
        if lookahead >= remaining:
            for h, state in enumerate(level_states):
                subtree = _expand(state, requests[depth + 1 :], remaining, dynamics)
                backward_induction(subtree)
                for offset, level in enumerate(subtree.vertices):
                    for mask, vertex in enumerate(level):
                        actions[depth + offset][(h << offset) | mask] = vertex.action
            logger.debug(f"H-DP({lookahead}): solved final window from request {depth + 1}")
            break

        next_states = []
        for h, state in enumerate(level_states):
            if lookahead == 0:
                action = _greedy_action(state, dynamics.bounds(state), dynamics)
            else:
                subtree = _expand(state, requests[depth + 1 : depth + lookahead], lookahead, dynamics)
                backward_induction(subtree)
                action = subtree.root.action
            actions[depth][h] = action
            if depth + 1 < horizon:
                for post in (transition_reject(state), transition_accept(state, dynamics.model)):
                    next_states.append(dynamics.successor(post, requests[depth + 1]))
        level_states = next_states

    return Policy(tuple(tuple(level) for level in actions))


def path_probabilities(tree: EpisodeTree, policy: Policy) -> list[np.ndarray]:
    """Probability of reaching each history: entry ``k`` has ``2**k`` values, ``k = 0..N``."""
    probabilities = [np.ones(1)]
    for depth in range(tree.horizon):
        reach = probabilities[-1]
        action = np.asarray(policy.actions[depth], dtype=float)
        children = np.empty(2 * len(reach))
        children[0::2] = reach * (1 - action)
        children[1::2] = reach * action
        probabilities.append(children)
    return probabilities


def expected_rewards(tree: EpisodeTree, policy: Policy) -> np.ndarray:
    """Expected reward of every interval after a decision, under the policy's path measure."""
    probabilities = path_probabilities(tree, policy)
    return np.array(
        [
            float(probabilities[depth + 1] @ np.array([edge.reward for edge in level]))
            for depth, level in enumerate(tree.edges)
        ]
    )


def evaluate_policy(tree: EpisodeTree, policy: Policy, discount: float | None = None) -> float:
    """Expected (discounted) total reward from the root decision onward."""
    gamma = tree.discount if discount is None else discount
    rewards = expected_rewards(tree, policy)
    return float(sum(gamma**depth * reward for depth, reward in enumerate(rewards)))


def exhaustive_policy_oracle(tree: EpisodeTree) -> float:
    """Best expected total reward over every bang-bang policy, by brute force.

    Raises:
        HorizonTooLargeError: Beyond ``ORACLE_MAX_HORIZON`` requests.
    """
    if tree.horizon > ORACLE_MAX_HORIZON:
        raise HorizonTooLargeError(tree.horizon, ORACLE_MAX_HORIZON)
    choices = [
        [(vertex.bounds.lower, vertex.bounds.upper) for vertex in level] for level in tree.vertices
    ]
    sizes = [len(level) for level in choices]
    best = -math.inf
    for picks in itertools.product((0, 1), repeat=sum(sizes)):
        actions = []
        offset = 0
        for level, size in zip(choices, sizes, strict=True):
            actions.append(
                tuple(pair[pick] for pair, pick in zip(level, picks[offset : offset + size], strict=True))
            )
            offset += size
        best = max(best, evaluate_policy(tree, Policy(tuple(actions))))
    return best


def _require_prelude(tree: EpisodeTree) -> SystemState:
    if tree.prelude_state is None:
        raise SolverError("Episode statistics need a full tree built by traverse()")
    return tree.prelude_state


def _sample_times(tree: EpisodeTree, step: float) -> np.ndarray:
    span = tree.end_time - tree.start_time
    count = round(span / step)
    return np.round(tree.start_time + np.arange(count + 1) * step, 9)


def _interval_slots(tree: EpisodeTree, times: np.ndarray) -> np.ndarray:
    """Interval index of each sample: 0 before the first decision, ``k`` after decision ``k``."""
    slots = np.floor((times - tree.start_time) / tree.interval).astype(int)
    return np.clip(slots, 0, tree.horizon)


def _ewt_after(tree: EpisodeTree, state: SystemState, times: Iterable[float]) -> list[float]:
    return [
        estimate_ewt(advance_state(state, max(t - state.time, 0.0), tree.model), tree.model, tree.probes)
        for t in times
    ]


def _ewt_table(tree: EpisodeTree, times: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per interval: sample indices and the EWT of every history (rows) at those samples."""
    prelude = _require_prelude(tree)
    slots = _interval_slots(tree, times)
    table = []
    for slot in range(tree.horizon + 1):
        selected = np.flatnonzero(slots == slot)
        states = [prelude] if slot == 0 else [edge.post_state for edge in tree.edges[slot - 1]]
        values = np.array([_ewt_after(tree, state, times[selected]) for state in states])
        table.append((selected, values.reshape(len(states), len(selected))))
    return table


def expected_ewt_curve(
    tree: EpisodeTree, policy: Policy, sample_step: float = DEFAULT_CURVE_STEP
) -> pd.Series:
    """Expected EWT over the episode, averaged over all histories with the policy's weights."""
    times = _sample_times(tree, sample_step)
    probabilities = path_probabilities(tree, policy)
    values = np.empty(len(times))
    for slot, (selected, ewt) in enumerate(_ewt_table(tree, times)):
        values[selected] = probabilities[slot] @ ewt
    return pd.Series(values, index=pd.Index(times, name="t"), name="expected_ewt")


def path_ewt_curve(
    tree: EpisodeTree,
    bits: Sequence[int] | None = None,
    sample_step: float = DEFAULT_CURVE_STEP,
) -> pd.Series:
    """EWT along a single history (all-accept by default, i.e. the baseline)."""
    prelude = _require_prelude(tree)
    history = DecisionHistory(tuple(bits) if bits is not None else (1,) * tree.horizon)
    if history.depth != tree.horizon:
        raise ValueError(f"History needs {tree.horizon} decisions, got {history.depth}")
    times = _sample_times(tree, sample_step)
    slots = _interval_slots(tree, times)
    values = np.empty(len(times))
    for slot in range(tree.horizon + 1):
        selected = np.flatnonzero(slots == slot)
        state = (
            prelude
            if slot == 0
            else tree.edge(DecisionHistory(history.bits[:slot])).post_state
        )
        values[selected] = _ewt_after(tree, state, times[selected])
    return pd.Series(values, index=pd.Index(times, name="t"), name="path_ewt")


@dataclass(frozen=True, slots=True)
class AcceptanceRates:
    passenger_ids: tuple[str, ...]
    rates: tuple[float, ...]

    @property
    def mean(self) -> float:
        return math.fsum(self.rates) / len(self.rates)

    def to_dict(self) -> dict[str, Any]:
        return {"per_passenger": dict(zip(self.passenger_ids, self.rates, strict=True)), "mean": self.mean}


def expected_acceptance_rates(tree: EpisodeTree, policy: Policy) -> AcceptanceRates:
    """Expected acceptance probability of each sequential passenger."""
    probabilities = path_probabilities(tree, policy)
    rates = tuple(
        float(probabilities[depth] @ np.asarray(policy.actions[depth], dtype=float))
        for depth in range(tree.horizon)
    )
    ids = tuple(
        level[0].state.pending_request.passenger_id if level[0].state.pending_request else f"#{k + 1}"
        for k, level in enumerate(tree.vertices)
    )
    return AcceptanceRates(ids, rates)


def average_deviation(tree: EpisodeTree, policy: Policy) -> float:
    """Expected time-average of ``|EWT(t) - EWT*(t)|`` over the whole episode, in minutes.

    The interval before the first decision is included; it is the same for every policy.
    """
    _require_prelude(tree)
    span = tree.end_time - tree.start_time
    total = tree.prelude_reward + float(np.sum(expected_rewards(tree, policy)))
    return -total * tree.interval / span


@dataclass(frozen=True)
class ReplaySummary:
    """Monte-Carlo estimates from sampled decision sequences, with standard errors."""

    times: np.ndarray
    curve_mean: np.ndarray
    curve_stderr: np.ndarray
    acceptance_mean: np.ndarray
    acceptance_stderr: np.ndarray
    n_episodes: int
    seed: int = field(default=0)


def monte_carlo_replay(
    tree: EpisodeTree,
    policy: Policy,
    n_episodes: int = DEFAULT_REPLAY_EPISODES,
    seed: int = 0,
    sample_step: float = DEFAULT_CURVE_STEP,
) -> ReplaySummary:
    """Sample each passenger decision from Bernoulli(action) and average the outcomes."""
    if n_episodes < 2:
        raise ValueError("Replay needs at least two episodes")
    rng = np.random.Generator(np.random.Philox(key=seed))
    masks = np.zeros(n_episodes, dtype=np.int64)
    history_masks = [masks]
    decisions = np.empty((n_episodes, tree.horizon))
    for depth in range(tree.horizon):
        actions = np.asarray(policy.actions[depth], dtype=float)[masks]
        accepted = (rng.random(n_episodes) < actions).astype(np.int64)
        decisions[:, depth] = accepted
        masks = 2 * masks + accepted
        history_masks.append(masks)

    times = _sample_times(tree, sample_step)
    curve_mean = np.empty(len(times))
    curve_stderr = np.empty(len(times))
    root_n = math.sqrt(n_episodes)
    for slot, (selected, ewt) in enumerate(_ewt_table(tree, times)):
        samples = ewt[history_masks[slot]]
        curve_mean[selected] = samples.mean(axis=0)
        curve_stderr[selected] = samples.std(axis=0, ddof=1) / root_n

    return ReplaySummary(
        times=times,
        curve_mean=curve_mean,
        curve_stderr=curve_stderr,
        acceptance_mean=decisions.mean(axis=0),
        acceptance_stderr=decisions.std(axis=0, ddof=1) / root_n,
        n_episodes=n_episodes,
        seed=seed,
    )
