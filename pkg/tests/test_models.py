import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from beliefprune.belief import ParticleBelief
from beliefprune.models import (BeaconObservationModel, GaussianState,
                                GaussianTransitionModel, Models, expected_distance_to_goal, gaussian_entropy,
                                kalman_predict, kalman_step, model_peak_constants)

from conftest import make_world

coords = st.floats(-20.0, 20.0, allow_nan=False)


# transition

def test_transition_peak_at_mean():
    t = GaussianTransitionModel(0.3)
    x, a = np.array([1.0, 2.0]), np.array([0.5, -0.5])
    assert t.density(x + a, x, a) == pytest.approx(1.0 / (2 * math.pi * 0.09))


def test_unit_transition_peak():
    t = GaussianTransitionModel(1.0)
    assert t.density(np.zeros(2), np.zeros(2), np.zeros(2)) == pytest.approx(0.15915494309189535)


def test_transition_sample_mean():
    t = GaussianTransitionModel(0.5)
    x, a = np.array([1.0, -1.0]), np.array([2.0, 0.0])
    s = t.sample(np.tile(x, (100_000, 1)), a, np.random.default_rng(0))
    assert np.all(np.abs(s.mean(axis=0) - (x + a)) <= 4 * 0.5 / math.sqrt(1e5))


def test_transition_density_integrates_to_one():
    t = GaussianTransitionModel(0.4)
    g = np.linspace(-3, 3, 301)
    xx, yy = np.meshgrid(g, g, indexing="ij")
    pts = np.stack([xx, yy], axis=-1)
    dens = t.density(pts, np.zeros(2), np.zeros(2))
    assert dens.sum() * (g[1] - g[0]) ** 2 == pytest.approx(1.0, abs=1e-6)


def test_transition_rejects_bad_sigma():
    with pytest.raises(ValueError):
        GaussianTransitionModel(0.0)


# observation

def test_noise_scale_floors_at_r_min():
    s = BeaconObservationModel(np.array([[0.0, 0.0], [10.0, 0.0]]), 0.1, 1.0)
    assert s.noise_scale(np.array([0.0, 0.0])) == pytest.approx(0.1)
    assert s.noise_scale(np.array([3.0, 4.0])) == pytest.approx(0.5)


def test_observation_peak_at_exact_relative_position():
    s = BeaconObservationModel(np.array([[0.0, 0.0], [10.0, 0.0]]), 0.1, 1.0)
    x = np.array([7.0, 0.0])  # nearest beacon is (10, 0), range 3
    z = x - np.array([10.0, 0.0])
    assert s.density(z, x) == pytest.approx(1.0 / (2 * math.pi * 0.3 ** 2))


def test_observation_density_decreases_with_range():
    s = BeaconObservationModel(np.array([[0.0, 0.0]]), 0.2, 1.0)
    innovation = np.array([0.1, -0.05])
    vals = [s.density(np.array([r, 0.0]) + innovation, np.array([r, 0.0])) for r in (1.0, 2.0, 4.0)]
    assert vals[0] > vals[1] > vals[2]


def test_nearest_ties_go_to_lowest_index():
    s = BeaconObservationModel(np.array([[-1.0, 0.0], [1.0, 0.0]]), 0.1, 1.0)
    idx, r = s.nearest(np.array([0.0, 0.0]))
    assert int(idx) == 0 and r == pytest.approx(1.0)


def test_observation_continuous_along_ray_inside_cell():
    s = BeaconObservationModel(np.array([[0.0, 0.0], [20.0, 0.0]]), 0.1, 0.5)
    z = np.array([2.0, 1.0])
    t = np.linspace(0.5, 5.0, 2001)
    x = np.stack([t, 0.3 * t], axis=1)
    d = s.density(z, x)
    assert np.max(np.abs(np.diff(d))) < 1e-2


def test_observation_sample_mean():
    s = BeaconObservationModel(np.array([[0.0, 0.0]]), 0.1, 1.0)
    x = np.array([3.0, 4.0])
    zs = s.sample(np.tile(x, (100_000, 1)), np.random.default_rng(1))
    assert np.all(np.abs(zs.mean(axis=0) - x) <= 4 * 0.5 / math.sqrt(1e5))


def test_sensor_validation():
    with pytest.raises(ValueError):
        BeaconObservationModel(np.zeros((0, 2)), 0.1, 1.0)
    with pytest.raises(ValueError):
        BeaconObservationModel(np.zeros((1, 2)), 0.1, 0.0)


# peaks

def test_peak_constants():
    m, n = model_peak_constants(GaussianTransitionModel(1.0), BeaconObservationModel(np.zeros((1, 2)), 0.1, 1.0))
    assert m == pytest.approx(1.0 / (2 * math.pi))
    assert n == pytest.approx(1.0 / (2 * math.pi * 0.01))


def test_peaks_dominate_grid_maximum():
    t = GaussianTransitionModel(0.2)
    s = BeaconObservationModel(np.array([[0.0, 0.0], [3.0, 1.0]]), 0.15, 0.7)
    g = np.linspace(-2, 5, 281)
    xx, yy = np.meshgrid(g, g, indexing="ij")
    pts = np.stack([xx, yy], axis=-1)
    assert t.density(pts, np.zeros(2), np.zeros(2)).max() <= t.peak + 1e-12
    # observation density is largest for z = x - beacon; scan states
    beacon_idx, _ = s.nearest(pts)
    z_star = pts - s.beacons[beacon_idx]
    assert s.density(z_star, pts).max() <= s.peak + 1e-12


@given(coords, coords, coords, coords)
@settings(max_examples=200)
def test_densities_bounded_by_peaks(zx, zy, xx, xy):
    world = make_world()
    models = world.models()
    m, n = models.peaks
    z, x = np.array([zx, zy]), np.array([xx, xy])
    assert models.sensor.density(z, x) <= n + 1e-12
    assert models.transition.density(z, x, np.array([1.0, 0.0])) <= m + 1e-12


# distance reward

def test_distance_point_mass_at_goal():
    assert expected_distance_to_goal(ParticleBelief([[3.0, 4.0]]), (3.0, 4.0)) == 0.0


def test_distance_two_particles():
    b = ParticleBelief([[2.0, 0.0], [0.0, 4.0]], [0.5, 0.5])
    assert expected_distance_to_goal(b, (0.0, 0.0)) == pytest.approx(3.0)


def test_distance_matches_loop():
    rng = np.random.default_rng(2)
    for _ in range(50):
        n = int(rng.integers(1, 30))
        b = ParticleBelief(rng.normal(size=(n, 2)) * 5, rng.uniform(size=n) + 1e-3)
        goal = rng.normal(size=2)
        slow = sum(w * (abs(x[0] - goal[0]) + abs(x[1] - goal[1])) for x, w in zip(b.particles, b.weights))
        assert expected_distance_to_goal(b, goal) == pytest.approx(slow, abs=1e-12)


# world config

def test_world_validation():
    with pytest.raises(ValueError):
        make_world(actions=())
    with pytest.raises(ValueError):
        make_world(actions=("left", "sideways"))
    with pytest.raises(ValueError):
        make_world(horizon=0)
    with pytest.raises(ValueError):
        make_world(n_particles=0)
    with pytest.raises(ValueError):
        make_world(transition_sigma=-1.0)


def test_world_action_vectors_and_prior():
    w = make_world(actions=("left", "right", "up", "down"), step=2.0)
    np.testing.assert_allclose(w.action_vectors(), [[-2, 0], [2, 0], [0, 2], [0, -2]])
    prior = w.prior(np.random.default_rng(0), 4000)
    assert np.allclose(prior.mean(), w.start, atol=0.05)
    assert np.allclose(np.sqrt(np.diag(prior.covariance())), w.prior_sigma, atol=0.03)


# Kalman filter

def test_kalman_predict_adds_process_noise():
    p = kalman_predict(GaussianState(np.zeros(2), np.eye(2)), np.array([1.0, 0.0]), GaussianTransitionModel(1.0))
    np.testing.assert_allclose(p.covariance, 2 * np.eye(2))
    np.testing.assert_allclose(p.mean, [1.0, 0.0])


def test_kalman_collapses_on_precise_measurement():
    models = Models(GaussianTransitionModel(1e-6), BeaconObservationModel(np.array([[0.0, 0.0]]), 1e-6, 1.0))
    z = np.array([2.0, -1.0])
    post = kalman_step(GaussianState(np.array([1.5, -0.5]), np.eye(2)), np.zeros(2), z, models)
    np.testing.assert_allclose(post.mean, z, atol=1e-9)
    assert np.all(np.linalg.eigvalsh(post.covariance) > 0)


def test_kalman_rejects_asymmetric_covariance():
    with pytest.raises(np.linalg.LinAlgError):
        GaussianState(np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_kalman_tracks_linear_truth():
    # constant sensor noise: the linear-Gaussian case where the filter is exact
    models = Models(GaussianTransitionModel(0.2), BeaconObservationModel(np.array([[5.0, 5.0]]), 0.02, 30.0))
    a = np.array([0.5, 0.5])
    inside = 0
    runs = 500
    for seed in range(runs):
        rng = np.random.default_rng(seed)
        state = GaussianState(np.zeros(2), 0.25 * np.eye(2))
        x = rng.multivariate_normal(state.mean, state.covariance)
        ok = True
        for _ in range(10):
            x = models.transition.sample(x, a, rng)
            z = models.sensor.sample(x, rng)
            state = kalman_step(state, a, z, models)
            err = x - state.mean
            if err @ np.linalg.solve(state.covariance, err) > 11.83:  # chi2(2) 0.9973
                ok = False
        inside += ok
    assert inside / runs >= 0.95


def test_kalman_matches_large_particle_filter():
    from beliefprune.belief import propagate_and_reweight
    models = Models(GaussianTransitionModel(0.3), BeaconObservationModel(np.array([[0.0, 0.0]]), 0.05, 40.0))
    prior = GaussianState(np.array([1.0, 2.0]), np.array([[0.3, 0.1], [0.1, 0.2]]))
    a, z = np.array([0.5, 0.5]), np.array([1.2, 2.9])
    kf = kalman_step(prior, a, z, models)
    rng = np.random.default_rng(0)
    b = ParticleBelief(rng.multivariate_normal(prior.mean, prior.covariance, size=200_000))
    pf = propagate_and_reweight(b, a, z, models.transition, models.sensor, rng)
    np.testing.assert_allclose(pf.mean(), kf.mean, atol=0.01)
    np.testing.assert_allclose(pf.covariance(), kf.covariance, atol=0.01)


# Gaussian entropy

def test_gaussian_entropy_identity():
    assert gaussian_entropy(GaussianState(np.zeros(2), np.eye(2))) == pytest.approx(2.83787706640935)


def test_gaussian_entropy_scaling():
    cov = np.array([[0.5, 0.1], [0.1, 0.3]])
    h1 = gaussian_entropy(GaussianState(np.zeros(2), cov))
    h4 = gaussian_entropy(GaussianState(np.zeros(2), 4 * cov))
    assert h4 - h1 == pytest.approx(math.log(4))


def test_gaussian_entropy_quadrature():
    cov = np.array([[0.4, 0.15], [0.15, 0.25]])
    g = np.linspace(-5, 5, 801)
    xx, yy = np.meshgrid(g, g, indexing="ij")
    pts = np.stack([xx, yy], axis=-1)
    inv = np.linalg.inv(cov)
    quad = np.einsum("...i,ij,...j->...", pts, inv, pts)
    p = np.exp(-0.5 * quad) / (2 * math.pi * math.sqrt(np.linalg.det(cov)))
    numeric = -np.sum(p * np.log(np.maximum(p, 1e-300))) * (g[1] - g[0]) ** 2
    assert gaussian_entropy(GaussianState(np.zeros(2), cov)) == pytest.approx(numeric, abs=1e-3)


def test_gaussian_entropy_rejects_non_spd():
    with pytest.raises(np.linalg.LinAlgError):
        gaussian_entropy(GaussianState(np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]])))
