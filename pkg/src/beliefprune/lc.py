"""Reward bounds for Lipschitz-continuous rewards under particle-subset simplification.

If ``|r(b1, a) - r(b2, a)| <= K d(b1, b2)`` then evaluating the reward on the
simplified belief and widening by ``K d(b, b^s)`` brackets the true reward.
Bounds propagate through the tree like the rewards themselves.

Differential entropy is not Lipschitz, so it goes through :mod:`.entropy`
instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .belief import ParticleBelief, SimplifiedView
from .entropy import BoundPair
from .models import expected_distance_to_goal
from .tree import BeliefTree, BeliefTreeNode


@dataclass(frozen=True)
class LipschitzReward:
    """A reward ``evaluate(belief, action)`` with constant ``lipschitz`` under ``metric``."""

    evaluate: Callable[[ParticleBelief, int | None], float]
    lipschitz: float
    metric: str = "l1"

    def __post_init__(self):
        if not (self.lipschitz >= 0.0) or not math.isfinite(self.lipschitz):
            raise ValueError(f"Lipschitz constant must be finite and >= 0, got {self.lipschitz}")
        if self.metric != "l1":
            raise ValueError(f"unsupported belief metric {self.metric!r}")


def distance_reward(goal, lipschitz: float) -> LipschitzReward:
    """Negative expected L1 distance to ``goal``.

    With particles confined to a workspace of L1 diameter ``D``, ``D`` is a
    valid constant (``D / 2`` already suffices).
    """
    goal = np.asarray(goal, dtype=float)
    return LipschitzReward(lambda b, a=None: -expected_distance_to_goal(b, goal), lipschitz)


def belief_distance_l1(belief: ParticleBelief, view: SimplifiedView) -> float:
    """``sum_{i in A} |w_i - w~_i| + sum_{i not in A} w_i`` with ``w~`` renormalised on ``A``."""
    w = belief.weights
    if view.is_full(belief.n):
        return 0.0
    inside = w[view.indices]
    total = inside.sum()
    if total <= 0:
        # the view carries no mass; its renormalised weights are uniform
        tilde = np.full(view.size, 1.0 / view.size)
    else:
        tilde = inside / total
    outside = 1.0 - total
    return float(np.abs(inside - tilde).sum() + max(outside, 0.0))


def lc_reward_bounds(reward: LipschitzReward, belief: ParticleBelief, view: SimplifiedView,
                     action: int | None = None) -> BoundPair:
    if reward.lipschitz < 0:
        raise ValueError("negative Lipschitz constant")
    if view.is_full(belief.n):
        r = float(reward.evaluate(belief, action))
        return BoundPair(r, r, view.level)
    r = float(reward.evaluate(view.as_belief(belief), action))
    slack = reward.lipschitz * belief_distance_l1(belief, view)
    return BoundPair(r - slack, r + slack, view.level)


def _full_level(views, node_id):
    return views[node_id].level if node_id in views else -1


def lc_node_bounds(tree: BeliefTree, reward: LipschitzReward, views: Mapping[int, SimplifiedView],
                   policy: Mapping[int, int] | None = None, terminal: bool = True) -> dict[int, BoundPair]:
    """Objective bounds at every node.

    A node's value is ``r(b, a) + mean_l V(child_l)`` maximised over ``a``
    (or with ``a = policy[node]`` when a policy is given). Leaves contribute
    ``r(b, None)`` when ``terminal`` is true and zero otherwise. Nodes missing
    from ``views`` are evaluated exactly.
    """
    out: dict[int, BoundPair] = {}
    for depth in sorted(tree.by_depth(), reverse=True):
        for node in tree.by_depth()[depth]:
            out[node.node_id] = _node_bound(node, reward, views, policy, terminal, out)
    return out


def _reward_bound(node: BeliefTreeNode, reward, views, action):
    view = views.get(node.node_id)
    if view is None:
        r = float(reward.evaluate(node.belief, action))
        return BoundPair(r, r, -1)
    return lc_reward_bounds(reward, node.belief, view, action)


def _node_bound(node, reward, views, policy, terminal, done):
    if node.is_leaf:
        if terminal:
            return _reward_bound(node, reward, views, None)
        return BoundPair(0.0, 0.0, _full_level(views, node.node_id))
    actions = sorted(node.children) if policy is None else [policy[node.node_id]]
    lo, hi = -math.inf, -math.inf
    level = None
    for a in actions:
        kids = node.children[a]
        rb = _reward_bound(node, reward, views, a)
        k_lo = math.fsum(done[c.node_id].lower for c in kids) / len(kids)
        k_hi = math.fsum(done[c.node_id].upper for c in kids) / len(kids)
        lo = max(lo, rb.lower + k_lo)
        hi = max(hi, rb.upper + k_hi)
        lv = min([rb.level] + [done[c.node_id].level for c in kids])
        level = lv if level is None else min(level, lv)
    return BoundPair(lo, hi, level)


def lc_objective_bounds(tree: BeliefTree, reward: LipschitzReward, views: Mapping[int, SimplifiedView],
                        policy: Mapping[int, int] | None = None, terminal: bool = True) -> BoundPair:
    """Bounds on the root objective; see :func:`lc_node_bounds`."""
    return lc_node_bounds(tree, reward, views, policy, terminal)[tree.root.node_id]


def lc_exact_values(tree: BeliefTree, reward: LipschitzReward, policy: Mapping[int, int] | None = None,
                    terminal: bool = True) -> dict[int, float]:
    """Exact node values under the same recursion, for checking the bounds."""
    return {k: b.lower for k, b in lc_node_bounds(tree, reward, {}, policy, terminal).items()}
