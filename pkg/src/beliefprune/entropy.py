"""Differential entropy of particle beliefs and its simplification bounds.

The estimator works on two consecutive beliefs ``b_k -> b_{k+1}`` linked by
action ``a`` and observation ``z``::

    H = log sum_i p(z|x'_i) w_i                                   (term a)
        - sum_i w'_i log[ p(z|x'_i) sum_j p(x'_i|x_j, a) w_j ]    (term b)

Particle ``i`` of ``b_{k+1}`` descends from particle ``i`` of ``b_k``, so the
weights in term (a) are the predecessor's weights aligned by index.

Restricting the sums to index subsets of the two beliefs gives analytical
lower and upper bounds at ``O(N * N^s)`` cost, and the bounds tighten to the
estimate itself when the subsets are complete. :class:`EntropyBoundCache`
keeps the partial sums so that moving to a finer subset only evaluates the
densities of the newly added particles.

Every ``log`` argument is clamped at :data:`~beliefprune.belief.LIKELIHOOD_FLOOR`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .belief import LIKELIHOOD_FLOOR, ParticleBelief, SimplifiedView
from .models import DensityCounter, Models

TAU = LIKELIHOOD_FLOOR
BOUND_SLACK = 1e-9


@dataclass(frozen=True)
class BoundPair:
    lower: float
    upper: float
    level: int = -1

    def __post_init__(self):
        if self.lower > self.upper + BOUND_SLACK:
            raise ValueError(f"lower bound {self.lower} exceeds upper bound {self.upper}")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, value: float, slack: float = 0.0) -> bool:
        return self.lower - slack <= value <= self.upper + slack

    def __add__(self, other: "BoundPair") -> "BoundPair":
        return BoundPair(self.lower + other.lower, self.upper + other.upper, min(self.level, other.level))

    def negated(self) -> "BoundPair":
        return BoundPair(-self.upper, -self.lower, self.level)


def _log(x):
    return np.log(np.maximum(x, TAU))


def _count(counter: DensityCounter | None, transition: int = 0, observation: int = 0):
    if counter is not None:
        counter.transition += int(transition)
        counter.observation += int(observation)


def observation_likelihoods(nxt: ParticleBelief, z, models: Models, counter=None, idx=None) -> np.ndarray:
    x = nxt.particles if idx is None else nxt.particles[idx]
    _count(counter, observation=x.shape[0])
    return models.sensor.density(np.asarray(z, dtype=float), x)


def transition_block(x_next: np.ndarray, x_prev: np.ndarray, action, models: Models, counter=None) -> np.ndarray:
    """``P[i, j] = p(x_next[i] | x_prev[j], a)``."""
    _count(counter, transition=x_next.shape[0] * x_prev.shape[0])
    return models.transition.density(x_next[:, None, :], x_prev[None, :, :], np.asarray(action, dtype=float))


def _check_pair(prev: ParticleBelief, nxt: ParticleBelief):
    if prev.n != nxt.n:
        raise ValueError(f"consecutive beliefs must have equal N, got {prev.n} and {nxt.n}")


def _row_sums(block: np.ndarray, w: np.ndarray) -> np.ndarray:
    # per-row pairwise sums: a row's result does not depend on which other rows are present
    return (block * w).sum(axis=1)


def entropy_from_matrix(pz: np.ndarray, trans: np.ndarray, w_prev: np.ndarray, w_next: np.ndarray) -> tuple[float, float]:
    """Terms (a) and (b) from precomputed likelihoods and the full transition matrix."""
    inner = _row_sums(trans, w_prev)
    term_a = float(_log(np.sum(pz * w_prev)))
    term_b = float(-np.sum(w_next * _log(pz * inner)))
    return term_a, term_b


def boers_terms(prev: ParticleBelief, nxt: ParticleBelief, action, z, models: Models,
                counter: DensityCounter | None = None) -> tuple[float, float]:
    _check_pair(prev, nxt)
    pz = observation_likelihoods(nxt, z, models, counter)
    trans = transition_block(nxt.particles, prev.particles, action, models, counter)
    return entropy_from_matrix(pz, trans, prev.weights, nxt.weights)


def boers_entropy(prev: ParticleBelief, nxt: ParticleBelief, action, z, models: Models,
                  counter: DensityCounter | None = None) -> float:
    """Sample-based differential entropy of ``nxt`` (nats); ``O(N^2)`` transition densities."""
    a, b = boers_terms(prev, nxt, action, z, models, counter)
    return a + b


def _term_a(pz_rows, rows, w_prev, n_peak):
    # full-length masked sum: same reduction order as the exact term
    contrib = np.zeros_like(w_prev)
    contrib[rows] = pz_rows * w_prev[rows]
    partial = np.sum(contrib)
    excluded = np.ones(w_prev.shape[0], dtype=bool)
    excluded[rows] = False
    mass = float(np.sum(w_prev[excluded]))
    return float(_log(partial)), float(_log(partial + n_peak * mass))


def term_a_bounds(view_next: SimplifiedView, prev: ParticleBelief, nxt: ParticleBelief, z,
                  models: Models, n_peak: float | None = None, counter=None) -> BoundPair:
    """Bounds on term (a) from the particles of ``nxt`` in ``view_next``."""
    _check_pair(prev, nxt)
    n_peak = models.sensor.peak if n_peak is None else n_peak
    rows = view_next.indices
    pz_rows = observation_likelihoods(nxt, z, models, counter, idx=rows)
    lo, hi = _term_a(pz_rows, rows, prev.weights, n_peak)
    return BoundPair(lo, hi, view_next.level)


def _term_b(pz, trans_rows, trans_cols, rows, cols, w_prev, w_next, m_peak):
    """``trans_rows`` is P[rows, :], ``trans_cols`` is P[:, cols]."""
    inner_full = _row_sums(trans_rows, w_prev)
    c = _log(m_peak * pz)
    c[rows] = _log(pz[rows] * inner_full)
    lower = float(-np.sum(w_next * c))
    # zero-padded to full rows so rounding cannot lift it above the full inner sum
    padded = np.zeros((pz.shape[0], w_prev.shape[0]))
    padded[:, cols] = trans_cols
    inner_partial = _row_sums(padded, w_prev)
    upper = float(-np.sum(w_next * _log(pz * inner_partial)))
    return lower, upper


def _blocks(prev, nxt, rows, cols, action, models, counter):
    """P[rows, :] and P[:, cols], evaluating each needed entry once."""
    n = nxt.n
    trans_rows = transition_block(nxt.particles[rows], prev.particles, action, models, counter)
    trans_cols = np.empty((n, cols.shape[0]))
    trans_cols[rows] = trans_rows[:, cols]
    rest = np.ones(n, dtype=bool)
    rest[rows] = False
    if rest.any():
        trans_cols[rest] = transition_block(nxt.particles[rest], prev.particles[cols], action, models, counter)
    return trans_rows, trans_cols


def term_b_bounds(view_prev: SimplifiedView, view_next: SimplifiedView, prev: ParticleBelief,
                  nxt: ParticleBelief, action, z, models: Models, m_peak: float | None = None,
                  counter=None) -> BoundPair:
    """Bounds on term (b).

    The lower bound keeps the full inner sum for rows in ``view_next`` and
    replaces it by the transition peak elsewhere; the upper bound keeps every
    row but truncates the inner sum to ``view_prev``.
    """
    _check_pair(prev, nxt)
    m_peak = models.transition.peak if m_peak is None else m_peak
    rows, cols = view_next.indices, view_prev.indices
    pz = observation_likelihoods(nxt, z, models, counter)
    trans_rows, trans_cols = _blocks(prev, nxt, rows, cols, action, models, counter)
    lo, hi = _term_b(pz, trans_rows, trans_cols, rows, cols, prev.weights, nxt.weights, m_peak)
    return BoundPair(lo, hi, min(view_prev.level, view_next.level))


def entropy_term_bounds(view_prev: SimplifiedView, view_next: SimplifiedView, prev: ParticleBelief,
                        nxt: ParticleBelief, action, z, models: Models,
                        counter=None) -> tuple[BoundPair, BoundPair]:
    """Term (a) and term (b) bounds sharing one set of density evaluations."""
    _check_pair(prev, nxt)
    m_peak, n_peak = models.peaks
    rows, cols = view_next.indices, view_prev.indices
    pz = observation_likelihoods(nxt, z, models, counter)
    trans_rows, trans_cols = _blocks(prev, nxt, rows, cols, action, models, counter)
    a = _term_a(pz[rows], rows, prev.weights, n_peak)
    b = _term_b(pz, trans_rows, trans_cols, rows, cols, prev.weights, nxt.weights, m_peak)
    level = min(view_prev.level, view_next.level)
    return BoundPair(*a, level), BoundPair(*b, level)


def entropy_bounds(view_prev: SimplifiedView, view_next: SimplifiedView, prev: ParticleBelief,
                   nxt: ParticleBelief, action, z, models: Models, counter=None) -> BoundPair:
    """Lower/upper bounds on :func:`boers_entropy`, computed from scratch."""
    a, b = entropy_term_bounds(view_prev, view_next, prev, nxt, action, z, models, counter)
    return a + b


def _has_duplicates(idx: np.ndarray, n: int) -> bool:
    if idx.size < 2:
        return False
    seen = np.zeros(n, dtype=bool)
    seen[idx] = True
    return int(np.count_nonzero(seen)) != idx.size


class EntropyBoundCache:
    """Partial sums behind the entropy bounds of one transition ``b_k -> b_{k+1}``.

    Grows monotonically: :meth:`extend` adds particle indices to the
    predecessor subset (``A_k``) and the successor subset (``A_{k+1}``),
    evaluating only transition densities not seen before. Each entry of the
    ``N x N`` transition matrix is evaluated at most once over the cache's
    lifetime, so refining all the way to the full sets costs about one exact
    evaluation.
    """

    def __init__(self, prev: ParticleBelief, nxt: ParticleBelief, action, z, models: Models,
                 counter: DensityCounter | None = None):
        _check_pair(prev, nxt)
        self.prev, self.nxt = prev, nxt
        self.action = np.asarray(action, dtype=float)
        self.z = np.asarray(z, dtype=float)
        self.models = models
        self.counter = counter
        self.m_peak, self.n_peak = models.peaks
        n = nxt.n
        self.level = -1
        self.rows = np.zeros(n, dtype=bool)  # A_{k+1}
        self.cols = np.zeros(n, dtype=bool)  # A_k
        self.pz: np.ndarray | None = None
        self.term_a_partial = 0.0
        self.term_a_excluded_mass = 1.0
        self.term_b_inner = np.zeros(n)  # sum_{j in A_k} P[i, j] w_j, every i
        self.term_b_lower_partial = 0.0  # sum_{i in A_{k+1}} w'_i log(p(z|x'_i) * full inner sum)
        self._trans = np.full((n, n), np.nan)
        self._row_done = np.zeros(n, dtype=bool)
        self._col_done = np.zeros(n, dtype=bool)
        self._exact: float | None = None

    @classmethod
    def build(cls, view_prev: SimplifiedView, view_next: SimplifiedView, prev, nxt, action, z,
              models, counter=None) -> "EntropyBoundCache":
        cache = cls(prev, nxt, action, z, models, counter)
        cache.extend(view_prev.indices, view_next.indices, level=min(view_prev.level, view_next.level))
        return cache

    @property
    def full(self) -> bool:
        return bool(self.rows.all() and self.cols.all())

    def _ensure_rows(self, idx):
        need = ~self._col_done
        if idx.size and need.any():
            block = transition_block(self.nxt.particles[idx], self.prev.particles[need], self.action,
                                     self.models, self.counter)
            self._trans[np.ix_(idx, np.flatnonzero(need))] = block
        self._row_done[idx] = True

    def _ensure_cols(self, idx):
        need = ~self._row_done
        if idx.size and need.any():
            block = transition_block(self.nxt.particles[need], self.prev.particles[idx], self.action,
                                     self.models, self.counter)
            self._trans[np.ix_(np.flatnonzero(need), idx)] = block
        self._col_done[idx] = True

    def extend(self, added_prev, added_next, level: int | None = None) -> BoundPair:
        """Add ``B_k`` to ``A_k`` and ``B_{k+1}`` to ``A_{k+1}``; return the new bounds."""
        added_prev = np.asarray(added_prev, dtype=int).reshape(-1)
        added_next = np.asarray(added_next, dtype=int).reshape(-1)
        if self.cols[added_prev].any() or self.rows[added_next].any():
            raise ValueError("added indices overlap the cached subsets")
        if _has_duplicates(added_prev, self.cols.size) or _has_duplicates(added_next, self.rows.size):
            raise ValueError("added indices must be unique")
        w_prev, w_next = self.prev.weights, self.nxt.weights
        if self.pz is None:
            self.pz = observation_likelihoods(self.nxt, self.z, self.models, self.counter)
        pz = self.pz

        if added_next.size:
            self._ensure_rows(added_next)
            inner_full = _row_sums(self._trans[added_next], w_prev)
            self.term_a_partial += float((pz[added_next] * w_prev[added_next]).sum())
            self.term_b_lower_partial += float((w_next[added_next] * _log(pz[added_next] * inner_full)).sum())
            self.rows[added_next] = True
            self.term_a_excluded_mass = float(w_prev[~self.rows].sum())
        if added_prev.size:
            self._ensure_cols(added_prev)
            self.term_b_inner += _row_sums(self._trans[:, added_prev], w_prev[added_prev])
            self.cols[added_prev] = True
        if level is not None:
            self.level = level
        if self.full and self._exact is None:
            a, b = entropy_from_matrix(pz, self._trans, w_prev, w_next)
            self._exact = a + b
            self._trans = None  # no longer needed
        return self.bounds()

    def term_bounds(self) -> tuple[BoundPair, BoundPair]:
        pz, w_next = self.pz, self.nxt.weights
        a_lo = float(_log(self.term_a_partial))
        a_hi = float(_log(self.term_a_partial + self.n_peak * self.term_a_excluded_mass))
        out = ~self.rows
        b_lo = -self.term_b_lower_partial - float((w_next[out] * _log(self.m_peak * pz[out])).sum())
        b_hi = -float((w_next * _log(pz * self.term_b_inner)).sum())
        return BoundPair(a_lo, a_hi, self.level), BoundPair(b_lo, b_hi, self.level)

    def bounds(self) -> BoundPair:
        if self._exact is not None:
            return BoundPair(self._exact, self._exact, self.level)
        a, b = self.term_bounds()
        return a + b


def refine_entropy_bounds(cache: EntropyBoundCache, added_prev, added_next,
                          level: int | None = None) -> tuple[BoundPair, EntropyBoundCache]:
    """Advance ``cache`` by the index sets added at the next level (in place)."""
    bounds = cache.extend(added_prev, added_next, level=cache.level + 1 if level is None else level)
    return bounds, cache


def naive_weight_entropy(belief: ParticleBelief) -> float:
    """Discrete entropy of the weights, ``-sum w log w``."""
    w = belief.weights[belief.weights > 0]
    return float(-np.sum(w * np.log(w)))


def silverman_bandwidth(belief: ParticleBelief, floor: float = 1e-6) -> np.ndarray:
    """Per-dimension ``sigma_j (4 / ((d + 2) N))^(1 / (d + 4))`` with weighted sigma."""
    n, d = belief.particles.shape
    mu = belief.mean()
    sd = np.sqrt(belief.weights @ (belief.particles - mu) ** 2)
    h = sd * (4.0 / ((d + 2) * n)) ** (1.0 / (d + 4))
    return np.maximum(h, floor)


def kde_entropy(belief: ParticleBelief, bandwidth_floor: float = 1e-6, chunk: int = 1024) -> float:
    """Resubstitution entropy of a Gaussian product-kernel density estimate."""
    if belief.n < 2:
        raise ValueError("KDE entropy needs at least two particles")
    x, w = belief.particles, belief.weights
    h = silverman_bandwidth(belief, bandwidth_floor)
    log_norm = -np.sum(np.log(np.sqrt(2.0 * np.pi) * h))
    xs = x / h
    dens = np.empty(belief.n)
    for start in range(0, belief.n, chunk):
        diff = xs[start:start + chunk, None, :] - xs[None, :, :]
        k = np.exp(-0.5 * np.sum(diff * diff, axis=-1))
        dens[start:start + chunk] = k @ w
    return float(-np.sum(w * (np.log(np.maximum(dens, TAU)) + log_norm)))
