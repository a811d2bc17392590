import math

import numpy as np
import pytest
from hypothesis import example, given, settings
from hypothesis import strategies as st

from beliefprune.belief import (DegenerateBeliefError, ParticleBelief, SimplificationSchedule,
                                effective_sample_size, nested_views, propagate_and_reweight, refine,
                                reweight, simplify, systematic_resample)
from beliefprune.models import (BeaconObservationModel, GaussianState, GaussianTransitionModel, Models,
                                kalman_step)


class _Shift:
    """Deterministic transition x' = x + a."""

    def sample(self, x, a, rng):
        return np.asarray(x) + a


class _FixedLikelihood:
    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)

    def density(self, z, x):
        return self.values


def weight_vectors(min_n=1, max_n=40):
    return st.integers(min_n, max_n).flatmap(
        lambda n: st.lists(st.floats(0.0, 1.0), min_size=n, max_size=n).filter(lambda w: sum(w) > 1e-6))


# ParticleBelief

def test_weights_normalised_and_read_only():
    b = ParticleBelief(np.zeros((3, 2)), [1.0, 1.0, 2.0])
    np.testing.assert_allclose(b.weights, [0.25, 0.25, 0.5])
    with pytest.raises(ValueError):
        b.weights[0] = 1.0
    with pytest.raises(ValueError):
        b.particles[0, 0] = 1.0


def test_default_weights_uniform():
    b = ParticleBelief(np.arange(8.0).reshape(4, 2))
    assert b.n == 4 and b.dim == 2
    np.testing.assert_allclose(b.weights, 0.25)


@pytest.mark.parametrize("particles,weights", [
    (np.zeros((0, 2)), None),
    (np.zeros((2, 2)), [1.0]),
    (np.zeros((2, 2)), [1.0, -0.5]),
    (np.zeros((2, 2)), [1.0, np.nan]),
])
def test_invalid_beliefs_rejected(particles, weights):
    with pytest.raises(ValueError):
        ParticleBelief(particles, weights)


def test_zero_weights_are_degenerate():
    with pytest.raises(DegenerateBeliefError):
        ParticleBelief(np.zeros((2, 2)), [0.0, 0.0])


# filter update

def test_single_particle_deterministic_transition():
    b = ParticleBelief([[1.0, 2.0]])
    out = propagate_and_reweight(b, np.array([0.5, -1.0]), None, _Shift(), _FixedLikelihood([0.2]),
                                 np.random.default_rng(0))
    np.testing.assert_allclose(out.particles, [[1.5, 1.0]])
    np.testing.assert_allclose(out.weights, [1.0])


def test_reweight_two_particles():
    out = reweight(np.zeros((2, 2)), np.array([0.5, 0.5]), None, _FixedLikelihood([0.3, 0.1]))
    np.testing.assert_allclose(out.weights, [0.75, 0.25])


def test_reweight_all_zero_raises_unless_floored():
    lik = _FixedLikelihood([0.0, 0.0])
    with pytest.raises(DegenerateBeliefError):
        reweight(np.zeros((2, 2)), np.array([0.5, 0.5]), None, lik)
    out = reweight(np.zeros((2, 2)), np.array([0.25, 0.75]), None, lik, floor=1e-300)
    np.testing.assert_allclose(out.weights, [0.25, 0.75])


def test_particle_lineage_preserved():
    rng = np.random.default_rng(1)
    b = ParticleBelief(rng.normal(size=(6, 2)))
    out = propagate_and_reweight(b, np.zeros(2), None, _Shift(), _FixedLikelihood(np.ones(6)), rng)
    np.testing.assert_array_equal(out.particles, b.particles)


def test_filter_mean_matches_kalman_on_linear_model():
    # constant sensor noise (r_min beyond every range) makes the model linear-Gaussian
    models = Models(GaussianTransitionModel(0.3), BeaconObservationModel(np.array([[0.0, 0.0]]), 0.05, 50.0))
    prior = GaussianState(np.array([1.0, 1.0]), 0.25 * np.eye(2))
    a, z = np.array([0.5, 0.0]), np.array([1.7, 0.9])
    kf = kalman_step(prior, a, z, models)
    n = 500
    se = np.sqrt(np.diag(kf.covariance)) / math.sqrt(n)
    scores = []
    for seed in range(200):
        rng = np.random.default_rng(seed)
        b = ParticleBelief(rng.multivariate_normal(prior.mean, prior.covariance, size=n))
        post = propagate_and_reweight(b, a, z, models.transition, models.sensor, rng)
        scores.append((post.mean() - kf.mean) / se)
    scores = np.array(scores)
    # a single run is within 3 sigma except for rare draws; check the whole distribution instead
    assert np.mean(np.all(np.abs(scores) <= 3.0, axis=1)) >= 0.97
    assert np.all(np.abs(scores.mean(axis=0)) <= 0.3)


@given(weight_vectors(), st.integers(0, 2**31))
@settings(max_examples=60, deadline=None)
def test_update_keeps_normalisation(w, seed):
    n = len(w)
    rng = np.random.default_rng(seed)
    b = ParticleBelief(rng.normal(size=(n, 2)), w)
    lik = _FixedLikelihood(rng.uniform(0.01, 1.0, size=n))
    out = propagate_and_reweight(b, np.ones(2), None, _Shift(), lik, rng)
    assert abs(out.weights.sum() - 1.0) <= 1e-9
    assert out.n == n


# resampling and ESS

def test_resample_uniform_keeps_multiset():
    x = np.arange(10.0).reshape(5, 2)
    out = systematic_resample(ParticleBelief(x), np.random.default_rng(3))
    assert sorted(map(tuple, out.particles)) == sorted(map(tuple, x))
    np.testing.assert_allclose(out.weights, 0.2)


def test_resample_point_mass():
    x = np.arange(6.0).reshape(3, 2)
    out = systematic_resample(ParticleBelief(x, [1.0, 0.0, 0.0]), np.random.default_rng(0))
    np.testing.assert_array_equal(out.particles, np.repeat(x[:1], 3, axis=0))


class _FixedUniform:
    def __init__(self, u):
        self.u = u

    def random(self):
        return self.u


@pytest.mark.parametrize("u", np.linspace(0.0, 1.0, 41, endpoint=False))
def test_resample_two_halves_enumerated_offsets(u):
    x = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    out = systematic_resample(ParticleBelief(x, [0.5, 0.0, 0.5, 0.0]), _FixedUniform(u))
    counts = {tuple(p): 0 for p in x}
    for p in out.particles:
        counts[tuple(p)] += 1
    assert counts[(0.0, 0.0)] == 2 and counts[(2.0, 2.0)] == 2


@given(weight_vectors(2, 30), st.integers(0, 2**31))
@settings(max_examples=60, deadline=None)
def test_resample_multiplicity_within_one_of_expectation(w, seed):
    n = len(w)
    b = ParticleBelief(np.arange(2.0 * n).reshape(n, 2), w)
    out = systematic_resample(b, np.random.default_rng(seed))
    counts = np.bincount((out.particles[:, 0] / 2).astype(int), minlength=n)
    assert np.all(np.abs(counts - n * b.weights) < 1.0 + 1e-9)


def test_resample_deterministic():
    b = ParticleBelief(np.random.default_rng(0).normal(size=(20, 2)), np.arange(1.0, 21.0))
    a = systematic_resample(b, np.random.default_rng(5))
    c = systematic_resample(b, np.random.default_rng(5))
    np.testing.assert_array_equal(a.particles, c.particles)


@pytest.mark.parametrize("weights,expected", [
    (np.ones(10), 10.0),
    ([1.0, 0.0, 0.0], 1.0),
    ([0.5, 0.25, 0.25], 1.0 / 0.375),
])
def test_effective_sample_size(weights, expected):
    b = ParticleBelief(np.zeros((len(weights), 2)), weights)
    assert effective_sample_size(b) == pytest.approx(expected)


@given(weight_vectors())
def test_ess_range(w):
    b = ParticleBelief(np.zeros((len(w), 2)), w)
    assert 1.0 - 1e-9 <= effective_sample_size(b) <= b.n + 1e-9


# schedule

@pytest.mark.parametrize("fractions", [(), (0.5, 0.2, 1.0), (0.1, 0.1, 1.0), (0.1, 0.9), (0.0, 1.0), (0.5, 1.2)])
def test_bad_schedules(fractions):
    with pytest.raises(ValueError):
        SimplificationSchedule(fractions)


def test_default_schedule_sizes():
    s = SimplificationSchedule()
    assert s.fractions == (0.1, 0.2, 0.4, 0.8, 1.0)
    assert [s.size(k, 100) for k in range(5)] == [10, 20, 40, 80, 100]
    assert s.size(0, 10) == 1
    assert s.size(0, 30) == 3  # 0.1 * 30 is a hair above 3 in floating point
    with pytest.raises(ValueError):
        s.size(5, 10)


# simplification

def _belief(n, seed=0):
    rng = np.random.default_rng(seed)
    return ParticleBelief(rng.normal(size=(n, 2)), rng.uniform(0.1, 1.0, size=n))


def test_finest_level_is_everything_in_order():
    s = SimplificationSchedule()
    v = simplify(_belief(17), s, s.finest, np.random.default_rng(0))
    np.testing.assert_array_equal(v.indices, np.arange(17))
    assert v.is_full(17)


def test_tenth_of_ten_is_one_index():
    v = simplify(_belief(10), SimplificationSchedule(), 0, np.random.default_rng(0))
    assert v.size == 1


def test_point_mass_always_selected():
    w = np.zeros(20)
    w[13] = 1.0
    b = ParticleBelief(np.zeros((20, 2)), w)
    for seed in range(20):
        v = simplify(b, SimplificationSchedule(), 0, np.random.default_rng(seed))
        assert 13 in v.indices


def test_view_weights_are_raw():
    b = _belief(20)
    v = simplify(b, SimplificationSchedule(), 1, np.random.default_rng(0))
    np.testing.assert_array_equal(v.raw_weights(b), b.weights[v.indices])
    assert v.as_belief(b).weights.sum() == pytest.approx(1.0)


def test_level_out_of_range():
    with pytest.raises(ValueError):
        simplify(_belief(5), SimplificationSchedule(), 7, np.random.default_rng(0))


def test_refine_adds_ten_of_hundred():
    b = _belief(100)
    s = SimplificationSchedule()
    v0 = simplify(b, s, 0, np.random.default_rng(0))
    v1, added = refine(v0, b, s)
    assert added.size == 10
    assert not np.intersect1d(added, v0.indices).size
    np.testing.assert_array_equal(np.union1d(v0.indices, added), v1.indices)


def test_refine_last_level_adds_complement():
    b = _belief(30)
    s = SimplificationSchedule()
    views = nested_views(b, s, np.random.default_rng(4))
    full, added = refine(views[-2], b, s)
    np.testing.assert_array_equal(added, np.setdiff1d(np.arange(30), views[-2].indices))
    assert full.is_full(30)
    with pytest.raises(ValueError):
        refine(full, b, s)


def test_refine_twice_matches_direct_simplify():
    b = _belief(50, seed=3)
    s = SimplificationSchedule()
    v0 = simplify(b, s, 0, np.random.default_rng(11))
    v2 = refine(refine(v0, b, s)[0], b, s)[0]
    direct = simplify(b, s, 2, np.random.default_rng(11))
    np.testing.assert_array_equal(v2.indices, direct.indices)


@given(weight_vectors(1, 60), st.integers(0, 2**31))
@example([0.0, 1.0, 2.225073858507e-311], 0)
@settings(max_examples=80, deadline=None)
def test_views_nested_and_sized(w, seed):
    n = len(w)
    b = ParticleBelief(np.zeros((n, 2)), w)
    s = SimplificationSchedule()
    views = nested_views(b, s, np.random.default_rng(seed))
    for k, v in enumerate(views):
        assert v.size == s.size(k, n)
        assert np.unique(v.indices).size == v.size
        assert np.all((v.indices >= 0) & (v.indices < n))
    for lo, hi in zip(views, views[1:]):
        assert set(lo.indices) <= set(hi.indices)
        if hi.size > lo.size:
            assert set(lo.indices) < set(hi.indices)
    np.testing.assert_array_equal(views[-1].indices, np.arange(n))
    # positive-weight particles are drawn before zero-weight ones
    positive = int(np.count_nonzero(b.weights > 0))
    for v in views:
        assert np.count_nonzero(b.weights[v.indices] > 0) == min(v.size, positive)


def test_simplify_deterministic():
    b = _belief(40)
    s = SimplificationSchedule()
    a = nested_views(b, s, np.random.default_rng(9))
    c = nested_views(b, s, np.random.default_rng(9))
    for x, y in zip(a, c):
        np.testing.assert_array_equal(x.indices, y.indices)
