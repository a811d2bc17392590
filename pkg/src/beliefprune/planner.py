"""Exact and bound-based planners over a prebuilt belief tree.

Both planners score a tree the same way. Every non-root node carries the
reward of the belief it holds, ``-E[||x - goal||_1] - H(b | parent, a, z)``,
and a node's value is its reward plus the best action's mean child value.
The root has no reward of its own.

The simplified planner bounds each entropy term on particle subsets, prunes
actions whose upper bound is below a sibling's lower bound, and refines only
where bounds still overlap. Once a subset reaches the full belief its bounds
are the exact reward, computed with the same arithmetic as the exact
planner, so both planners return the same root action.
"""

from __future__ import annotations

import math
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .belief import (SimplificationSchedule, SimplifiedView, effective_sample_size, propagate,
                     reweight, refine, simplify, systematic_resample, LIKELIHOOD_FLOOR, ParticleBelief)
from .entropy import BoundPair, EntropyBoundCache, boers_entropy
from .models import BeaconWorldConfig, DensityCounter, Models, expected_distance_to_goal
from .tree import BeliefTree, BeliefTreeNode, build_tree


def node_reward(distance: float, entropy: float) -> float:
    return -distance - entropy


def _mean(values) -> float:
    values = list(values)
    return math.fsum(values) / len(values)


def _argmax(q: Mapping[int, float]) -> int:
    best = max(q.values())
    return min(a for a, v in q.items() if v == best)


def prune_children(bounds: Mapping[int, BoundPair]) -> set[int]:
    """Actions whose upper bound is strictly below the best lower bound.

    The action holding the best lower bound is never pruned, even when
    rounding leaves its upper bound a few ulps under its lower bound.
    """
    if len(bounds) < 2:
        return set()
    lb_star = max(b.lower for b in bounds.values())
    holder = min(a for a, b in bounds.items() if b.lower == lb_star)
    return {a for a, b in bounds.items() if b.upper < lb_star and a != holder}


@dataclass
class PolicyTree:
    """Chosen action at each internal node reachable under the policy."""

    actions: dict[int, int]
    root_action: int


def _policy(tree: BeliefTree, choose: Mapping[int, int]) -> PolicyTree:
    out, stack = {}, [tree.root]
    while stack:
        node = stack.pop()
        if node.is_leaf:
            continue
        a = choose[node.node_id]
        out[node.node_id] = a
        stack.extend(node.children[a])
    return PolicyTree(out, choose[tree.root.node_id])


@dataclass
class ExactSolution:
    value: float
    policy: PolicyTree
    node_values: dict[int, float]
    q_values: dict[int, dict[int, float]]
    rewards: dict[int, float]
    counter: DensityCounter
    wall_time: float

    @property
    def action(self) -> int:
        return self.policy.root_action


def exact_objective(tree: BeliefTree, models: Models, goal, counter: DensityCounter | None = None) -> ExactSolution:
    """Bottom-up Bellman evaluation with the exact entropy estimate at every node."""
    t0 = time.perf_counter()
    counter = DensityCounter() if counter is None else counter
    goal = np.asarray(goal, dtype=float)
    rewards = {}
    for node in tree.nodes:
        if node.is_root:
            continue
        h = boers_entropy(node.parent.belief, node.belief, tree.actions[node.action], node.observation,
                          models, counter)
        rewards[node.node_id] = node_reward(expected_distance_to_goal(node.belief, goal), h)
    values: dict[int, float] = {}
    q_values: dict[int, dict[int, float]] = {}
    choose: dict[int, int] = {}
    levels = tree.by_depth()
    for depth in sorted(levels, reverse=True):
        for node in levels[depth]:
            nid = node.node_id
            if node.is_leaf:
                values[nid] = rewards[nid]
                continue
            q = {a: _mean(values[c.node_id] for c in node.children[a]) for a in sorted(node.children)}
            best = _argmax(q)
            q_values[nid], choose[nid] = q, best
            values[nid] = q[best] if node.is_root else rewards[nid] + q[best]
    return ExactSolution(values[tree.root.node_id], _policy(tree, choose), values, q_values, rewards, counter,
                         time.perf_counter() - t0)


@dataclass(eq=False)
class NodeState:
    """Per-node bookkeeping of one simplified-planning session."""

    distance: float
    views: list[SimplifiedView] = field(default_factory=list)
    added: list[np.ndarray] = field(default_factory=list)
    cache: EntropyBoundCache | None = None
    counter: DensityCounter = field(default_factory=DensityCounter)
    reward: BoundPair | None = None
    live: list[int] | None = None
    action_bounds: dict[int, BoundPair] = field(default_factory=dict)
    best: int | None = None
    bounds: BoundPair | None = None
    adapt_calls: int = 0

    @property
    def level(self) -> int:
        return -1 if self.bounds is None else self.bounds.level


@dataclass(frozen=True)
class PruneRecord:
    node_id: int
    action: int
    bounds: BoundPair
    best_lower: float


@dataclass
class PlannerStats:
    adapt_calls: int = 0
    skipped: int = 0
    escalations: int = 0
    reward_refinements: int = 0


@dataclass
class PlanResult:
    action: int
    bounds: BoundPair
    policy: PolicyTree
    histogram: dict[int, list[int]]
    counter: DensityCounter
    wall_time: float
    stats: PlannerStats
    pruned: list[PruneRecord]
    node_levels: dict[int, int]
    tree: BeliefTree | None = None
    exact: ExactSolution | None = None


class SimplifiedPlanner:
    """Branch-and-bound over a fixed belief tree with adaptive subset sizes.

    Parameters
    ----------
    tree : BeliefTree
    models : Models
    goal : array_like
    schedule : SimplificationSchedule
    seed : int
        Subset draws at node ``k`` come from a stream keyed by ``(seed, k)``,
        so results do not depend on visiting order.
    """

    def __init__(self, tree: BeliefTree, models: Models, goal, schedule: SimplificationSchedule | None = None,
                 seed: int = 0):
        self.tree = tree
        self.models = models
        self.goal = np.asarray(goal, dtype=float)
        self.schedule = SimplificationSchedule() if schedule is None else schedule
        self.finest = self.schedule.finest
        self.seed = int(seed)
        self.states: dict[int, NodeState] = {}
        self.stats = PlannerStats()
        self.pruned: list[PruneRecord] = []

    # bookkeeping

    def state(self, node: BeliefTreeNode) -> NodeState:
        st = self.states.get(node.node_id)
        if st is None:
            st = NodeState(expected_distance_to_goal(node.belief, self.goal))
            self.states[node.node_id] = st
        return st

    @property
    def counter(self) -> DensityCounter:
        total = DensityCounter()
        for st in self.states.values():
            total.transition += st.counter.transition
            total.observation += st.counter.observation
        return total

    def view(self, node: BeliefTreeNode, level: int) -> SimplifiedView:
        st = self.state(node)
        if not st.views:
            rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(node.node_id,)))
            st.views.append(simplify(node.belief, self.schedule, 0, rng))
            st.added.append(st.views[0].indices)
        while len(st.views) <= level:
            v, b = refine(st.views[-1], node.belief, self.schedule)
            st.views.append(v)
            st.added.append(b)
        return st.views[level]

    def added(self, node: BeliefTreeNode, level: int) -> np.ndarray:
        self.view(node, level)
        return self.state(node).added[level]

    def level_of(self, node: BeliefTreeNode) -> int:
        return self.state(node).level

    # bounds

    def refine_reward(self, node: BeliefTreeNode, level: int) -> BoundPair:
        """Bring the node's immediate-reward bounds to at least ``level``."""
        st = self.state(node)
        parent = node.parent
        if st.cache is None:
            st.cache = EntropyBoundCache.build(
                self.view(parent, level), self.view(node, level), parent.belief, node.belief,
                self.tree.actions[node.action], node.observation, self.models, st.counter)
            h = st.cache.bounds()
        elif st.cache.level >= level:
            return st.reward
        else:
            while st.cache.level < level:
                t = st.cache.level + 1
                h = st.cache.extend(self.added(parent, t), self.added(node, t), level=t)
                self.stats.reward_refinements += 1
        st.reward = BoundPair(node_reward(st.distance, h.upper), node_reward(st.distance, h.lower), h.level)
        return st.reward

    def action_bounds(self, node: BeliefTreeNode, action: int) -> BoundPair:
        kids = [self.state(c).bounds for c in node.children[action]]
        return BoundPair(_mean(b.lower for b in kids), _mean(b.upper for b in kids), min(b.level for b in kids))

    def adapt(self, node: BeliefTreeNode, level: int) -> BoundPair:
        """Bound the subtree at ``node`` starting from ``level`` and resolve its action."""
        st = self.state(node)
        st.adapt_calls += 1
        self.stats.adapt_calls += 1
        if not node.is_root:
            self.refine_reward(node, level)
        if node.is_leaf:
            st.bounds = st.reward
            return st.bounds
        if st.live is None:
            for a in sorted(node.children):
                for c in node.children[a]:
                    self.adapt(c, level)
            st.live = sorted(node.children)
        else:
            self._raise_children(node, st.live, level)
        self._resolve(node)
        return st.bounds

    def _raise_children(self, node, actions, level):
        for a in actions:
            for c in node.children[a]:
                if self.level_of(c) < level:
                    self.adapt(c, level)
                else:
                    self.stats.skipped += 1

    def _prune(self, node, st, ab):
        for a in sorted(prune_children({a: ab[a] for a in st.live})):
            lb_star = max(ab[b].lower for b in st.live)
            self.pruned.append(PruneRecord(node.node_id, a, ab[a], lb_star))
            st.live.remove(a)

    def _resolve(self, node):
        st = self.state(node)
        ab = {a: self.action_bounds(node, a) for a in st.live}
        self._prune(node, st, ab)
        while len(st.live) > 1:
            open_ = [a for a in st.live if ab[a].level < self.finest]
            if not open_:
                break  # exact and tied: lowest index wins below
            a = min(open_, key=lambda k: (ab[k].level, -ab[k].width, k))
            self.stats.escalations += 1
            self._raise_children(node, [a], ab[a].level + 1)
            ab[a] = self.action_bounds(node, a)
            self._prune(node, st, ab)
        st.action_bounds = ab
        st.best = max(st.live, key=lambda k: (ab[k].lower, -k))
        branch = ab[st.best]
        st.bounds = branch if node.is_root else st.reward + branch

    def solve(self) -> PlanResult:
        t0 = time.perf_counter()
        root = self.tree.root
        bounds = self.adapt(root, 0)
        wall = time.perf_counter() - t0
        choose = {nid: st.best for nid, st in self.states.items() if st.best is not None}
        return PlanResult(
            action=self.states[root.node_id].best,
            bounds=bounds,
            policy=_policy(self.tree, choose),
            histogram=level_histogram(self.tree, self.node_levels(), self.finest),
            counter=self.counter,
            wall_time=wall,
            stats=self.stats,
            pruned=list(self.pruned),
            node_levels=self.node_levels(),
            tree=self.tree,
        )

    def node_levels(self) -> dict[int, int]:
        return {nid: st.level for nid, st in self.states.items()}


def level_histogram(tree: BeliefTree, node_levels: Mapping[int, int], finest: int) -> dict[int, list[int]]:
    """Per depth, how many nodes ended at each simplification level."""
    out = {}
    for depth, nodes in tree.by_depth().items():
        counts = Counter(node_levels[n.node_id] for n in nodes if n.node_id in node_levels)
        out[depth] = [counts.get(s, 0) for s in range(finest + 1)]
    return out


def _tree_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))


def plan(root_belief: ParticleBelief, builder: str, world: BeaconWorldConfig,
         schedule: SimplificationSchedule | None = None, seed: int = 0, horizon: int | None = None,
         compare_exact: bool = False, **builder_kwargs) -> PlanResult:
    """Build a tree of the given shape around ``root_belief`` and plan on it."""
    models = world.models()
    horizon = world.horizon if horizon is None else horizon
    if builder == "despot":
        builder_kwargs.setdefault("n_obs", world.n_obs)
    tree = build_tree(builder, root_belief, world.action_vectors(), horizon, models, _tree_rng(seed),
                      **builder_kwargs)
    result = SimplifiedPlanner(tree, models, world.goal, schedule, seed).solve()
    if compare_exact:
        result.exact = exact_objective(tree, models, world.goal)
    return result


@dataclass
class StepRecord:
    step: int
    action: int
    exact_action: int | None
    true_state: np.ndarray
    belief_mean: np.ndarray
    ess: float
    resampled: bool
    bounds: BoundPair
    counter: DensityCounter
    exact_counter: DensityCounter | None
    wall_time: float
    exact_wall_time: float | None
    histogram: dict[int, list[int]]
    particles: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)


@dataclass
class RecedingTrace:
    steps: list[StepRecord]
    initial_state: np.ndarray
    final_state: np.ndarray
    reached_goal: bool


def receding_horizon_run(world: BeaconWorldConfig, builder: str, schedule: SimplificationSchedule | None = None,
                         steps: int = 15, seed: int = 0, compare_exact: bool = True,
                         goal_radius: float = 1.0, stop_at_goal: bool = True, horizon: int | None = None,
                         **builder_kwargs) -> RecedingTrace:
    """Plan, execute the first action, observe, filter, repeat.

    The simulated true state and observations use their own stream. The
    belief is resampled systematically when its effective sample size drops
    below ``N / 2``. ``reached_goal`` is set once the true state comes within
    ``goal_radius`` (Euclidean) of the goal.
    """
    models = world.models()
    acts = world.action_vectors()
    goal = np.asarray(world.goal)
    world_ss, filter_ss = np.random.SeedSequence(seed, spawn_key=(2,)).spawn(2)
    world_rng, filter_rng = np.random.default_rng(world_ss), np.random.default_rng(filter_ss)
    x = np.asarray(world.start) + world.prior_sigma * world_rng.standard_normal(2)
    x0 = x.copy()
    belief = world.prior(filter_rng)
    records = []
    reached = bool(np.linalg.norm(x - goal) <= goal_radius)
    for k in range(steps):
        if reached and stop_at_goal:
            break
        res = plan(belief, builder, world, schedule, seed=seed * 1_000_003 + k, horizon=horizon,
                   compare_exact=compare_exact, **builder_kwargs)
        a = res.action
        x = models.transition.sample(x, acts[a], world_rng)
        z = models.sensor.sample(x, world_rng)
        pred = propagate(belief, acts[a], models.transition, filter_rng)
        belief = reweight(pred, belief.weights, z, models.sensor, floor=LIKELIHOOD_FLOOR)
        ess = effective_sample_size(belief)
        resampled = ess < belief.n / 2
        snapshot = belief
        if resampled:
            belief = systematic_resample(belief, filter_rng)
        records.append(StepRecord(
            step=k, action=a, exact_action=None if res.exact is None else res.exact.action,
            true_state=x.copy(), belief_mean=snapshot.mean(), ess=ess, resampled=resampled,
            bounds=res.bounds, counter=res.counter,
            exact_counter=None if res.exact is None else res.exact.counter,
            wall_time=res.wall_time, exact_wall_time=None if res.exact is None else res.exact.wall_time,
            histogram=res.histogram, particles=snapshot.particles, weights=snapshot.weights))
        reached = reached or bool(np.linalg.norm(x - goal) <= goal_radius)
    return RecedingTrace(records, x0, x, reached)
