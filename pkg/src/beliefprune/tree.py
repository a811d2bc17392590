"""Belief trees and the three tree shapes used for benchmarking.

Trees are built completely before planning; planners only read them. Every
edge stores the action index and the sampled observation, so a child belief
can be replayed from its parent.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .belief import LIKELIHOOD_FLOOR, ParticleBelief, propagate, reweight
from .models import Models

BUILDERS = ("despot", "powss", "pomcp")


@dataclass(eq=False)
class BeliefTreeNode:
    node_id: int
    belief: ParticleBelief
    depth: int
    parent: "BeliefTreeNode | None" = None
    action: int | None = None
    observation: np.ndarray | None = None
    children: dict[int, list["BeliefTreeNode"]] = field(default_factory=dict)

    @property
    def is_leaf(self) -> bool:
        return not self.children

    @property
    def is_root(self) -> bool:
        return self.parent is None

    def __repr__(self):
        return f"BeliefTreeNode(id={self.node_id}, depth={self.depth}, action={self.action}, children={ {a: len(c) for a, c in self.children.items()} })"


@dataclass(eq=False)
class BeliefTree:
    root: BeliefTreeNode
    actions: np.ndarray
    horizon: int
    builder: str = "custom"
    nodes: list[BeliefTreeNode] = field(default_factory=list)

    def __post_init__(self):
        if not self.nodes:
            self.nodes = [self.root]

    def __len__(self) -> int:
        return len(self.nodes)

    def by_depth(self) -> dict[int, list[BeliefTreeNode]]:
        out: dict[int, list[BeliefTreeNode]] = defaultdict(list)
        for node in self.nodes:
            out[node.depth].append(node)
        return dict(sorted(out.items()))

    def leaves(self) -> list[BeliefTreeNode]:
        return [n for n in self.nodes if n.is_leaf]

    def add_child(self, parent: BeliefTreeNode, action: int, belief: ParticleBelief, z) -> BeliefTreeNode:
        child = BeliefTreeNode(len(self.nodes), belief, parent.depth + 1, parent, action,
                               np.asarray(z, dtype=float))
        parent.children.setdefault(action, []).append(child)
        self.nodes.append(child)
        return child


def new_tree(root_belief: ParticleBelief, actions, horizon: int, builder: str = "custom") -> BeliefTree:
    actions = np.asarray(actions, dtype=float)
    if actions.ndim != 2 or actions.shape[0] == 0:
        raise ValueError("actions must be a non-empty (A, d) array")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    return BeliefTree(BeliefTreeNode(0, root_belief, 0), actions, horizon, builder)


def expand(tree: BeliefTree, node: BeliefTreeNode, action: int, models: Models,
           rng: np.random.Generator, n_obs: int = 1) -> list[BeliefTreeNode]:
    """Propagate once for ``action`` and hang ``n_obs`` observation children.

    Each observation is generated from a predicted particle drawn by weight.
    The children share the propagated particles and differ only in weights.
    """
    belief = node.belief
    pred = propagate(belief, tree.actions[action], models.transition, rng)
    src = rng.choice(belief.n, size=n_obs, p=belief.weights)
    zs = models.sensor.sample(pred[src], rng)
    return [tree.add_child(node, action, reweight(pred, belief.weights, z, models.sensor, floor=LIKELIHOOD_FLOOR), z)
            for z in zs]


def _expand_per_particle(tree, node, action, models, rng):
    belief = node.belief
    pred = propagate(belief, tree.actions[action], models.transition, rng)
    zs = models.sensor.sample(pred, rng)
    lik = models.sensor.density(zs[:, None, :], pred[None, :, :])  # (n_z, N)
    lik = np.maximum(lik, LIKELIHOOD_FLOOR)
    kids = []
    for z, row in zip(zs, lik):
        kids.append(tree.add_child(node, action, ParticleBelief(pred, belief.weights * row), z))
    return kids


def build_despot_like(root_belief: ParticleBelief, actions, horizon: int, models: Models,
                      rng: np.random.Generator, n_obs: int = 1) -> BeliefTree:
    """Every action at every node, ``n_obs`` sampled observations per action (one by default)."""
    if n_obs < 1:
        raise ValueError("n_obs must be >= 1")
    tree = new_tree(root_belief, actions, horizon, "despot")
    frontier = [tree.root]
    for _ in range(horizon):
        nxt = []
        for node in frontier:
            for a in range(len(tree.actions)):
                nxt.extend(expand(tree, node, a, models, rng, n_obs=n_obs))
        frontier = nxt
    return tree


def build_powss_like(root_belief: ParticleBelief, actions, horizon: int, models: Models,
                     rng: np.random.Generator) -> BeliefTree:
    """Every action at every node and one observation per particle (``n_z = N``)."""
    tree = new_tree(root_belief, actions, horizon, "powss")
    frontier = [tree.root]
    for _ in range(horizon):
        nxt = []
        for node in frontier:
            for a in range(len(tree.actions)):
                nxt.extend(_expand_per_particle(tree, node, a, models, rng))
        frontier = nxt
    return tree


def build_pomcp_like(root_belief: ParticleBelief, actions, horizon: int, models: Models,
                     rng: np.random.Generator, rollouts: int = 5) -> BeliefTree:
    """Sparse, deep tree from ``rollouts`` root-to-depth-``horizon`` descents.

    At each node a rollout flips a fair coin between trying an action not yet
    taken there and descending into an existing child; when only one option
    exists it takes that one.
    """
    if rollouts < 1:
        raise ValueError("rollouts must be >= 1")
    tree = new_tree(root_belief, actions, horizon, "pomcp")
    n_actions = len(tree.actions)
    for _ in range(rollouts):
        node = tree.root
        for _ in range(horizon):
            untried = [a for a in range(n_actions) if a not in node.children]
            existing = [c for a in sorted(node.children) for c in node.children[a]]
            if untried and (not existing or rng.random() < 0.5):
                a = untried[int(rng.integers(len(untried)))]
                node = expand(tree, node, a, models, rng, n_obs=1)[0]
            else:
                node = existing[int(rng.integers(len(existing)))]
    return tree


def build_tree(builder: str, root_belief: ParticleBelief, actions, horizon: int, models: Models,
               rng: np.random.Generator, **kwargs) -> BeliefTree:
    if builder == "despot":
        return build_despot_like(root_belief, actions, horizon, models, rng, **kwargs)
    if builder == "powss":
        return build_powss_like(root_belief, actions, horizon, models, rng)
    if builder == "pomcp":
        return build_pomcp_like(root_belief, actions, horizon, models, rng, **kwargs)
    raise ValueError(f"unknown builder {builder!r}; expected one of {BUILDERS}")


def predicted_size(builder: str, n_actions: int, n_particles: int, horizon: int, rollouts: int = 5,
                   n_obs: int = 1) -> int:
    """Node count of a tree before building it (an upper bound for ``pomcp``)."""
    if builder == "despot":
        return sum((n_actions * n_obs) ** d for d in range(horizon + 1))
    if builder == "powss":
        return sum((n_actions * n_particles) ** d for d in range(horizon + 1))
    if builder == "pomcp":
        return rollouts * horizon + 1
    raise ValueError(f"unknown builder {builder!r}")
