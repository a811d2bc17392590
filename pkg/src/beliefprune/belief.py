"""Weighted particle beliefs and the subset-of-particles simplification.

A :class:`ParticleBelief` is immutable. Every operation that changes a
belief returns a new one, with weights renormalised to sum to one.

Simplification keeps the original particle indices: a
:class:`SimplifiedView` is an index subset of a belief plus the schedule
level that produced it. Views over the same belief are nested, so the
indices added when moving one level up are exactly what the incremental
entropy-bound updater consumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

#: Floor applied to likelihoods and to arguments of ``log``.
LIKELIHOOD_FLOOR = 1e-300


class DegenerateBeliefError(ValueError):
    """Raised when an observation is incompatible with every particle."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ParticleBelief:
    """Weighted particle set ``{(x^i, w^i)}``.

    Parameters
    ----------
    particles : array_like, shape (N, d)
    weights : array_like, shape (N,), optional
        Non-negative. Normalised on construction. Uniform when omitted.
    """

    particles: np.ndarray
    weights: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        x = np.array(self.particles, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError(f"particles must have shape (N, d) with N >= 1, got {x.shape}")
        n = x.shape[0]
        if self.weights is None:
            w = np.full(n, 1.0 / n)
        else:
            w = np.array(self.weights, dtype=float).reshape(-1)
            if w.shape[0] != n:
                raise ValueError(f"{w.shape[0]} weights for {n} particles")
            if np.any(w < 0) or not np.all(np.isfinite(w)):
                raise ValueError("weights must be finite and non-negative")
            total = w.sum()
            if total <= 0:
                raise DegenerateBeliefError("weights sum to zero")
            w = w / total
        object.__setattr__(self, "particles", _frozen(x))
        object.__setattr__(self, "weights", _frozen(w))

    @property
    def n(self) -> int:
        return self.particles.shape[0]

    @property
    def dim(self) -> int:
        return self.particles.shape[1]

    def mean(self) -> np.ndarray:
        return self.weights @ self.particles

    def covariance(self) -> np.ndarray:
        d = self.particles - self.mean()
        return (self.weights[:, None] * d).T @ d

    def __len__(self) -> int:
        return self.n


def propagate(belief: ParticleBelief, action, transition, rng: np.random.Generator) -> np.ndarray:
    """Sample ``x'^i ~ T(. | x^i, a)`` for every particle."""
    return transition.sample(belief.particles, np.asarray(action, dtype=float), rng)


def reweight(predicted: np.ndarray, prior_weights: np.ndarray, observation, sensor,
             floor: float | None = None) -> ParticleBelief:
    """Importance-weight predicted particles by ``p(z | x'^i)``.

    With ``floor`` set, likelihoods are clamped from below so that a far-field
    observation degrades to the prior weights instead of raising.
    """
    lik = sensor.density(np.asarray(observation, dtype=float), predicted)
    if floor is not None:
        lik = np.maximum(lik, floor)
    w = prior_weights * lik
    if not np.any(w > 0):
        raise DegenerateBeliefError("observation has zero likelihood under every particle")
    return ParticleBelief(predicted, w)


def propagate_and_reweight(belief: ParticleBelief, action, observation, transition, sensor,
                           rng: np.random.Generator, floor: float | None = None) -> ParticleBelief:
    """One particle-filter step. Particle ``i`` of the result descends from particle ``i``."""
    predicted = propagate(belief, action, transition, rng)
    return reweight(predicted, belief.weights, observation, sensor, floor=floor)


def systematic_resample(belief: ParticleBelief, rng: np.random.Generator) -> ParticleBelief:
    n = belief.n
    positions = (rng.random() + np.arange(n)) / n
    cumulative = np.cumsum(belief.weights)
    cumulative[-1] = 1.0
    idx = np.searchsorted(cumulative, positions, side="right")
    return ParticleBelief(belief.particles[idx].copy())


def effective_sample_size(belief: ParticleBelief) -> float:
    return float(1.0 / np.sum(belief.weights ** 2))


@dataclass(frozen=True)
class SimplificationSchedule:
    """Ascending particle fractions, one per level; the last level keeps everything."""

    fractions: tuple[float, ...] = (0.1, 0.2, 0.4, 0.8, 1.0)

    def __post_init__(self):
        f = tuple(float(v) for v in self.fractions)
        if not f:
            raise ValueError("schedule needs at least one level")
        if any(v <= 0.0 or v > 1.0 for v in f):
            raise ValueError(f"fractions must lie in (0, 1]: {f}")
        if any(b <= a for a, b in zip(f, f[1:])):
            raise ValueError(f"fractions must be strictly increasing: {f}")
        if f[-1] != 1.0:
            raise ValueError(f"last fraction must be exactly 1.0: {f}")
        object.__setattr__(self, "fractions", f)

    @property
    def finest(self) -> int:
        """Index ``n`` of the finest level."""
        return len(self.fractions) - 1

    def size(self, level: int, n_particles: int) -> int:
        self._check(level)
        if level == self.finest:
            return n_particles
        # guard against 0.1 * 30 == 3.0000000000000004
        k = math.ceil(self.fractions[level] * n_particles - 1e-9)
        return min(max(k, 1), n_particles)

    def _check(self, level: int):
        if not 0 <= level <= self.finest:
            raise ValueError(f"level {level} outside [0, {self.finest}]")


def priority_order(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Weighted sampling without replacement, as a full ranking.

    Uses exponential keys ``log(u) / w``; any prefix of the ranking is a
    weighted sample without replacement. Zero-weight particles rank last,
    in index order. Subnormal weights whose keys underflow to ``-inf`` still
    rank ahead of zero weights.
    """
    u = 1.0 - rng.random(weights.shape[0])  # in (0, 1]
    positive = weights > 0
    with np.errstate(divide="ignore", over="ignore"):
        keys = np.where(positive, np.log(u) / np.where(positive, weights, 1.0), -np.inf)
    return np.lexsort((-keys, ~positive))


@dataclass(frozen=True, eq=False)
class SimplifiedView:
    """Index subset ``A^s`` of a belief at one schedule level.

    ``indices`` are sorted. ``ranking`` is the full priority order the
    subset was cut from; refinement takes a longer prefix of it.
    Weights are never renormalised here, see :meth:`raw_weights`.
    """

    indices: np.ndarray
    level: int
    fraction: float
    ranking: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return self.indices.shape[0]

    def mask(self, n: int) -> np.ndarray:
        m = np.zeros(n, dtype=bool)
        m[self.indices] = True
        return m

    def is_full(self, n: int) -> bool:
        return self.size == n

    def raw_weights(self, belief: ParticleBelief) -> np.ndarray:
        return belief.weights[self.indices]

    def as_belief(self, belief: ParticleBelief) -> ParticleBelief:
        """The subset as a stand-alone, renormalised belief (for generic rewards)."""
        w = belief.weights[self.indices]
        if w.sum() <= 0:
            w = None
        return ParticleBelief(belief.particles[self.indices], w)


def _view(ranking: np.ndarray, level: int, schedule: SimplificationSchedule, n: int) -> SimplifiedView:
    k = schedule.size(level, n)
    idx = np.sort(ranking[:k])
    return SimplifiedView(_frozen(idx), level, schedule.fractions[level], ranking)


def simplify(belief: ParticleBelief, schedule: SimplificationSchedule, level: int,
             rng: np.random.Generator) -> SimplifiedView:
    """Draw ``A^s`` of size ``ceil(f_level * N)`` by weighted sampling without replacement.

    Always consumes exactly ``N`` uniforms from ``rng``, so views at different
    levels drawn from identically seeded streams are nested.
    """
    schedule._check(level)
    ranking = _frozen(priority_order(belief.weights, rng))
    return _view(ranking, level, schedule, belief.n)


def refine(view: SimplifiedView, belief: ParticleBelief,
           schedule: SimplificationSchedule) -> tuple[SimplifiedView, np.ndarray]:
    """Move one level finer. Returns the new view and the added indices ``B``."""
    if view.level >= schedule.finest:
        raise ValueError("view is already at the finest level")
    nxt = _view(view.ranking, view.level + 1, schedule, belief.n)
    # views are prefixes of one ranking, so the new indices are a slice of it
    added = np.sort(view.ranking[view.size:nxt.size])
    return nxt, added


def nested_views(belief: ParticleBelief, schedule: SimplificationSchedule,
                 rng: np.random.Generator) -> list[SimplifiedView]:
    """All levels at once, coarsest first."""
    first = simplify(belief, schedule, 0, rng)
    views = [first]
    for _ in range(schedule.finest):
        views.append(refine(views[-1], belief, schedule)[0])
    return views

