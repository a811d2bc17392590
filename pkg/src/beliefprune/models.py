"""Beacon-localisation world: motion and sensor models, rewards, Kalman baseline."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .belief import ParticleBelief

ACTION_DIRECTIONS = {
    "left": (-1.0, 0.0),
    "right": (1.0, 0.0),
    "up": (0.0, 1.0),
    "down": (0.0, -1.0),
}


@dataclass
class DensityCounter:
    """Tallies model-density evaluations; the planners' work metric."""

    transition: int = 0
    observation: int = 0

    @property
    def total(self) -> int:
        return self.transition + self.observation

    def as_dict(self) -> dict:
        return {"transition": self.transition, "observation": self.observation, "total": self.total}


def _gauss_peak(sigma: float, dim: int) -> float:
    return (2.0 * math.pi * sigma * sigma) ** (-dim / 2.0)


@dataclass(frozen=True)
class GaussianTransitionModel:
    """``x' ~ N(x + a, sigma^2 I)``."""

    sigma: float
    dim: int = 2

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("transition sigma must be positive")

    @property
    def peak(self) -> float:
        return _gauss_peak(self.sigma, self.dim)

    def sample(self, x: np.ndarray, action: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x + action + self.sigma * rng.standard_normal(x.shape)

    def density(self, x_next, x, action) -> np.ndarray:
        """Broadcasts over leading axes of ``x_next`` and ``x``."""
        diff = np.asarray(x_next) - (np.asarray(x) + action)
        sq = np.sum(diff * diff, axis=-1)
        return self.peak * np.exp(-0.5 * sq / (self.sigma * self.sigma))


@dataclass(frozen=True)
class BeaconObservationModel:
    """Relative position to the nearest beacon, ``z ~ N(x - x_b, (sigma * max(r, r_min))^2 I)``.

    Nearest-beacon ties go to the lowest beacon index.
    """

    beacons: np.ndarray
    sigma: float
    r_min: float

    def __post_init__(self):
        b = np.array(self.beacons, dtype=float).reshape(-1, 2)
        if b.shape[0] == 0:
            raise ValueError("at least one beacon is required")
        if self.sigma <= 0 or self.r_min <= 0:
            raise ValueError("sigma and r_min must be positive")
        b.setflags(write=False)
        object.__setattr__(self, "beacons", b)

    @property
    def dim(self) -> int:
        return 2

    @property
    def peak(self) -> float:
        return _gauss_peak(self.sigma * self.r_min, self.dim)

    def nearest(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Index of and distance to the nearest beacon, per state."""
        x = np.asarray(x, dtype=float)
        d = np.linalg.norm(x[..., None, :] - self.beacons, axis=-1)
        idx = np.argmin(d, axis=-1)
        return idx, np.take_along_axis(d, idx[..., None], axis=-1)[..., 0]

    def noise_scale(self, x) -> np.ndarray:
        _, r = self.nearest(x)
        return self.sigma * np.maximum(r, self.r_min)

    def sample(self, x, rng: np.random.Generator) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        idx, r = self.nearest(x)
        scale = self.sigma * np.maximum(r, self.r_min)
        return x - self.beacons[idx] + scale[..., None] * rng.standard_normal(x.shape)

    def density(self, z, x) -> np.ndarray:
        """``p(z | x)`` for each state in ``x`` (shape (..., 2))."""
        x = np.asarray(x, dtype=float)
        idx, r = self.nearest(x)
        scale = self.sigma * np.maximum(r, self.r_min)
        diff = z - (x - self.beacons[idx])
        sq = np.sum(diff * diff, axis=-1)
        return (2.0 * np.pi * scale * scale) ** -1.0 * np.exp(-0.5 * sq / (scale * scale))


@dataclass(frozen=True)
class Models:
    transition: GaussianTransitionModel
    sensor: BeaconObservationModel

    @property
    def peaks(self) -> tuple[float, float]:
        return model_peak_constants(self.transition, self.sensor)


def model_peak_constants(transition: GaussianTransitionModel, sensor: BeaconObservationModel) -> tuple[float, float]:
    """Suprema ``(m, n)`` of the transition and observation densities."""
    return transition.peak, sensor.peak


def expected_distance_to_goal(belief: ParticleBelief, goal) -> float:
    """``sum_i w^i ||x^i - goal||_1``."""
    goal = np.asarray(goal, dtype=float)
    return float(belief.weights @ np.abs(belief.particles - goal).sum(axis=1))


@dataclass(frozen=True)
class BeaconWorldConfig:
    """Everything that defines one planning or filtering scenario.

    ``actions`` are names from :data:`ACTION_DIRECTIONS` scaled by ``step``.
    Noise scales, ``r_min`` and the geometry have no library defaults; they
    come from the experiment configs.
    """

    start: tuple[float, float]
    goal: tuple[float, float]
    beacons: tuple[tuple[float, float], ...]
    step: float
    prior_sigma: float
    transition_sigma: float
    observation_sigma: float
    r_min: float
    actions: tuple[str, ...] = ("left", "right")
    horizon: int = 2
    n_particles: int = 50
    n_obs: int = 1
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "start", tuple(float(v) for v in self.start))
        object.__setattr__(self, "goal", tuple(float(v) for v in self.goal))
        object.__setattr__(self, "beacons", tuple(tuple(float(v) for v in b) for b in self.beacons))
        object.__setattr__(self, "actions", tuple(self.actions))
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.n_particles < 1:
            raise ValueError("n_particles must be >= 1")
        if self.n_obs < 1:
            raise ValueError("n_obs must be >= 1")
        if not self.actions:
            raise ValueError("action set is empty")
        unknown = [a for a in self.actions if a not in ACTION_DIRECTIONS]
        if unknown:
            raise ValueError(f"unknown actions {unknown}; choose from {sorted(ACTION_DIRECTIONS)}")
        if len(set(self.actions)) != len(self.actions):
            raise ValueError("duplicate actions")
        if not self.beacons:
            raise ValueError("at least one beacon is required")
        for key in ("step", "transition_sigma", "observation_sigma", "r_min"):
            if not getattr(self, key) > 0:
                raise ValueError(f"{key} must be positive")
        if self.prior_sigma < 0:
            raise ValueError("prior_sigma must be non-negative")

    def action_vectors(self) -> np.ndarray:
        return self.step * np.array([ACTION_DIRECTIONS[a] for a in self.actions])

    def models(self) -> Models:
        return Models(
            GaussianTransitionModel(self.transition_sigma),
            BeaconObservationModel(np.array(self.beacons), self.observation_sigma, self.r_min),
        )

    def prior(self, rng: np.random.Generator, n: int | None = None) -> ParticleBelief:
        n = self.n_particles if n is None else n
        x = np.asarray(self.start) + self.prior_sigma * rng.standard_normal((n, 2))
        return ParticleBelief(x)

    def prior_gaussian(self) -> GaussianState:
        return GaussianState(np.asarray(self.start), self.prior_sigma ** 2 * np.eye(2))


@dataclass(frozen=True, eq=False)
class GaussianState:
    mean: np.ndarray
    covariance: np.ndarray = field(repr=False)

    def __post_init__(self):
        mu = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.array(self.covariance, dtype=float)
        if cov.shape != (mu.size, mu.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean of size {mu.size}")
        if np.max(np.abs(cov - cov.T), initial=0.0) > 1e-12:
            raise np.linalg.LinAlgError("covariance is not symmetric")
        object.__setattr__(self, "mean", mu)
        object.__setattr__(self, "covariance", cov)


def _symmetrise(p: np.ndarray) -> np.ndarray:
    return 0.5 * (p + p.T)


def kalman_predict(state: GaussianState, action, transition: GaussianTransitionModel) -> GaussianState:
    mu = state.mean + np.asarray(action, dtype=float)
    cov = state.covariance + transition.sigma ** 2 * np.eye(mu.size)
    return GaussianState(mu, cov)


def kalman_step(state: GaussianState, action, z, models: Models) -> GaussianState:
    """Predict with the motion model, then update on the beacon measurement.

    The measurement noise is frozen at the range of the predicted mean, which
    keeps the posterior exactly Gaussian.
    """
    pred = kalman_predict(state, action, models.transition)
    sensor = models.sensor
    idx, r = sensor.nearest(pred.mean)
    scale = sensor.sigma * max(float(r), sensor.r_min)
    d = pred.mean.size
    noise = scale ** 2 * np.eye(d)
    y = np.asarray(z, dtype=float) + sensor.beacons[int(idx)]
    s = pred.covariance + noise
    gain = np.linalg.solve(s, pred.covariance).T  # P S^-1, both symmetric
    mu = pred.mean + gain @ (y - pred.mean)
    # Joseph form keeps the covariance SPD
    ikh = np.eye(d) - gain
    cov = _symmetrise(ikh @ pred.covariance @ ikh.T + gain @ noise @ gain.T)
    np.linalg.cholesky(cov)
    return GaussianState(mu, cov)


def gaussian_entropy(state: GaussianState) -> float:
    """Differential entropy ``0.5 ln((2 pi e)^d det S)`` in nats."""
    chol = np.linalg.cholesky(state.covariance)  # raises on non-SPD
    d = state.mean.size
    return 0.5 * d * math.log(2.0 * math.pi * math.e) + float(np.sum(np.log(np.diag(chol))))
