"""
Feynman-Kac Models

A model defines the smoothing target

    pi(x_{0:T-1})  propto  M_0(x_0) G_0(x_0) prod_{t>=1} M_t(x_{t-1}, x_t) G_t(x_t)

through an initial law, Markov transitions and nonnegative potentials. Every
density and potential is returned in log space. Time indices are 0-based:
``t = 0`` is the initial step and transitions are indexed by the time they
move *into*.

All methods are vectorised over numpy arrays of scalar states and every draw
goes through a caller-supplied ``numpy.random.Generator``. Models are plain
immutable objects so they can be pickled into worker processes.
"""
from typing import Optional, Sequence

import numpy as np

from src.models.data_models import SVParams

LOG_2PI = np.log(2.0 * np.pi)


def _normal_logpdf(x, mean, var):
    return -0.5 * (LOG_2PI + np.log(var)) - 0.5 * (x - mean) ** 2 / var


def torus_distance(x, y):
    """Distance on the unit circle [0, 1) with 0 and 1 identified."""
    d = np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))
    return np.where(d <= 0.5, d, 1.0 - d)


class FeynmanKacModel:
    """
    Base class of the (M_0, M_t, G_t) contract.

    Subclasses implement the five primitive maps. ``log_pairwise_potential``
    defaults to the unary potential of the current state, so every model can
    also be run through the marginal CBPF; models with genuine pairwise
    potentials override it and set ``has_pairwise = True``.
    """
    has_pairwise = False

    def __init__(self, horizon: int):
        if int(horizon) < 1:
            raise ValueError(f"horizon must be a positive integer, got {horizon}")
        self.horizon = int(horizon)

    def sample_initial(self, rng: np.random.Generator, size=None):
        raise NotImplementedError

    def sample_transition(self, t: int, x_prev, rng: np.random.Generator):
        """One draw from M_t(x_prev, .) per entry of ``x_prev``."""
        raise NotImplementedError

    def log_initial_density(self, x):
        raise NotImplementedError

    def log_transition_density(self, t: int, x_prev, x):
        """log M_t(x_prev, x), broadcasting ``x_prev`` against ``x``."""
        raise NotImplementedError

    def log_potential(self, t: int, x):
        raise NotImplementedError

    def log_pairwise_potential(self, t: int, x_prev, x):
        """log G_t(x_prev, x) for t >= 1 (the unary potential unless overridden)."""
        x_prev, x = np.broadcast_arrays(np.asarray(x_prev, dtype=float), np.asarray(x, dtype=float))
        return np.asarray(self.log_potential(t, x), dtype=float) + np.zeros_like(x_prev)

    def check_path(self, path) -> np.ndarray:
        path = np.asarray(path, dtype=float)
        if path.shape != (self.horizon,):
            raise ValueError(f"path must have length {self.horizon}, got shape {path.shape}")
        return path


class BarriersModel(FeynmanKacModel):
    """Mixture of a uniform jump and a local torus walk, with striped potentials."""

    def __init__(self, a: float, w: float, b: float, horizon: int):
        super().__init__(horizon)
        for name, value in (("a", a), ("w", w), ("b", b)):
            if not 0.0 < value < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {value}")
        self.a, self.w, self.b = float(a), float(w), float(b)
        self._log_near = np.log(self.a + (1.0 - self.a) / self.w)
        self._log_far = np.log(self.a)

    def sample_initial(self, rng, size=None):
        return rng.random(size)

    def sample_transition(self, t, x_prev, rng):
        x_prev = np.asarray(x_prev, dtype=float)
        jump = rng.random(x_prev.shape) < self.a
        uniform = rng.random(x_prev.shape)
        walk = np.mod(x_prev + rng.uniform(-self.w / 2.0, self.w / 2.0, x_prev.shape), 1.0)
        return np.where(jump, uniform, walk)

    def log_initial_density(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def log_transition_density(self, t, x_prev, x):
        near = torus_distance(x_prev, x) <= self.w / 2.0
        return np.where(near, self._log_near, self._log_far)

    def log_potential(self, t, x):
        x = np.asarray(x, dtype=float)
        # [0, 1/4] and (1/2, 3/4] carry weight b
        low = ((x >= 0.0) & (x <= 0.25)) | ((x > 0.5) & (x <= 0.75))
        return np.where(low, np.log(self.b), np.log1p(-self.b))


class LinearGaussianModel(FeynmanKacModel):
    """Stationary AR(1) latent process observed in Gaussian noise."""

    def __init__(self, rho: float, sigma_x: float, sigma_y: float, horizon: int,
                 y: Optional[Sequence[float]] = None):
        super().__init__(horizon)
        if not -1.0 < rho < 1.0:
            raise ValueError(f"rho must lie in (-1, 1), got {rho}")
        if sigma_x <= 0.0 or sigma_y <= 0.0:
            raise ValueError("sigma_x and sigma_y must be positive")
        self.rho, self.sigma_x, self.sigma_y = float(rho), float(sigma_x), float(sigma_y)
        self.y = np.zeros(self.horizon) if y is None else np.asarray(y, dtype=float)
        if self.y.shape != (self.horizon,) or not np.all(np.isfinite(self.y)):
            raise ValueError("observations must be finite with one entry per time step")
        self.initial_variance = self.sigma_x ** 2 / (1.0 - self.rho ** 2)

    def sample_initial(self, rng, size=None):
        return rng.normal(0.0, np.sqrt(self.initial_variance), size)

    def sample_transition(self, t, x_prev, rng):
        x_prev = np.asarray(x_prev, dtype=float)
        return self.rho * x_prev + self.sigma_x * rng.standard_normal(x_prev.shape)

    def log_initial_density(self, x):
        return _normal_logpdf(np.asarray(x, dtype=float), 0.0, self.initial_variance)

    def log_transition_density(self, t, x_prev, x):
        return _normal_logpdf(np.asarray(x, dtype=float), self.rho * np.asarray(x_prev, dtype=float),
                              self.sigma_x ** 2)

    def log_potential(self, t, x):
        return _normal_logpdf(self.y[t], np.asarray(x, dtype=float), self.sigma_y ** 2)


class StochasticVolatilityModel(FeynmanKacModel):
    """
    Stochastic volatility with leverage.

    The initial variance is sigma^2 / (1 - rho^2) by default ("printed"); pass
    ``stationary_variance="phi"`` for the AR stationary variance sigma^2 / (1 - phi^2).
    """

    def __init__(self, theta: SVParams, y: Sequence[float], stationary_variance: str = "printed"):
        y = np.asarray(y, dtype=float)
        if y.ndim != 1 or y.size == 0:
            raise ValueError("sv_model needs a non-empty observation sequence")
        if not np.all(np.isfinite(y)):
            raise ValueError("observations must be finite")
        super().__init__(y.size)
        if stationary_variance not in ("printed", "phi"):
            raise ValueError(f"unknown stationary_variance {stationary_variance!r}")
        self.theta = theta
        self.y = y
        self.stationary_variance = stationary_variance
        corr = theta.rho if stationary_variance == "printed" else theta.phi
        self.initial_variance = theta.sigma ** 2 / (1.0 - corr ** 2)
        self.transition_variance = (1.0 - theta.rho ** 2) * theta.sigma ** 2

    def transition_mean(self, t, x_prev):
        th = self.theta
        x_prev = np.asarray(x_prev, dtype=float)
        return th.mu + th.phi * (x_prev - th.mu) + th.rho * th.sigma * np.exp(-x_prev / 2.0) * self.y[t - 1]

    def sample_initial(self, rng, size=None):
        return rng.normal(self.theta.mu, np.sqrt(self.initial_variance), size)

    def sample_transition(self, t, x_prev, rng):
        mean = self.transition_mean(t, x_prev)
        return mean + np.sqrt(self.transition_variance) * rng.standard_normal(np.shape(mean))

    def log_initial_density(self, x):
        return _normal_logpdf(np.asarray(x, dtype=float), self.theta.mu, self.initial_variance)

    def log_transition_density(self, t, x_prev, x):
        return _normal_logpdf(np.asarray(x, dtype=float), self.transition_mean(t, x_prev),
                              self.transition_variance)

    def log_potential(self, t, x):
        x = np.asarray(x, dtype=float)
        return -0.5 * (LOG_2PI + x) - 0.5 * self.y[t] ** 2 * np.exp(-x)


class UniformModel(FeynmanKacModel):
    """Uniform initial law and transitions on [0, 1] with unit potentials."""

    def sample_initial(self, rng, size=None):
        return rng.random(size)

    def sample_transition(self, t, x_prev, rng):
        return rng.random(np.shape(x_prev))

    def log_initial_density(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def log_transition_density(self, t, x_prev, x):
        return np.zeros(np.broadcast(np.asarray(x_prev), np.asarray(x)).shape)

    def log_potential(self, t, x):
        return np.zeros_like(np.asarray(x, dtype=float))


class DiscreteHMM(FeynmanKacModel):
    """
    Finite-state model with states coded as floats 0.0, 1.0, ..., K-1.

    Args:
        initial: initial probabilities, shape (K,)
        transition: transition matrix, shape (K, K), rows summing to one
        log_potentials: unary log-potentials, shape (T, K)
        log_pairwise: optional extra pairwise log-potentials, shape (T, K, K);
            entry [t, i, j] is added to the unary term of state j at t >= 1
    """

    def __init__(self, initial, transition, log_potentials, log_pairwise=None):
        log_potentials = np.asarray(log_potentials, dtype=float)
        super().__init__(log_potentials.shape[0])
        self.initial = np.asarray(initial, dtype=float)
        self.transition = np.asarray(transition, dtype=float)
        self.log_potentials = log_potentials
        K = self.initial.size
        if self.transition.shape != (K, K) or log_potentials.shape[1] != K:
            raise ValueError("initial, transition and log_potentials disagree on the number of states")
        if not np.allclose(self.transition.sum(axis=1), 1.0) or not np.isclose(self.initial.sum(), 1.0):
            raise ValueError("initial and transition rows must be probability vectors")
        self.log_pairwise = None if log_pairwise is None else np.asarray(log_pairwise, dtype=float)
        if self.log_pairwise is not None and self.log_pairwise.shape != (self.horizon, K, K):
            raise ValueError("log_pairwise must have shape (T, K, K)")
        self.has_pairwise = self.log_pairwise is not None
        with np.errstate(divide="ignore"):
            self._log_initial = np.log(self.initial)
            self._log_transition = np.log(self.transition)
        self._initial_cdf = np.cumsum(self.initial)
        self._transition_cdf = np.cumsum(self.transition, axis=1)

    @property
    def n_states(self) -> int:
        return self.initial.size

    def sample_initial(self, rng, size=None):
        u = rng.random(size)
        idx = np.searchsorted(self._initial_cdf, u * self._initial_cdf[-1], side="right")
        return np.minimum(idx, self.n_states - 1).astype(float)

    def sample_transition(self, t, x_prev, rng):
        x_prev = np.asarray(x_prev, dtype=float)
        cdf = self._transition_cdf[x_prev.astype(int)]
        u = rng.random(x_prev.shape)[..., None] * cdf[..., -1:]
        idx = (u >= cdf).sum(axis=-1)
        return np.minimum(idx, self.n_states - 1).astype(float)

    def log_initial_density(self, x):
        return self._log_initial[np.asarray(x).astype(int)]

    def log_transition_density(self, t, x_prev, x):
        return self._log_transition[np.asarray(x_prev).astype(int), np.asarray(x).astype(int)]

    def log_potential(self, t, x):
        return self.log_potentials[t, np.asarray(x).astype(int)]

    def log_pairwise_potential(self, t, x_prev, x):
        if self.log_pairwise is None:
            return super().log_pairwise_potential(t, x_prev, x)
        i, j = np.asarray(x_prev).astype(int), np.asarray(x).astype(int)
        return self.log_potentials[t, j] + self.log_pairwise[t, i, j]

    def pairwise_matrices(self) -> np.ndarray:
        """Full log G_t(i, j) tensor, shape (T, K, K); row t = 0 is unused."""
        unary = self.log_potentials[:, None, :] + np.zeros((1, self.n_states, 1))
        return unary if self.log_pairwise is None else unary + self.log_pairwise


def barriers_model(a: float, w: float, b: float, T: int) -> BarriersModel:
    return BarriersModel(a, w, b, T)


def linear_gaussian_model(rho: float, sigma_x: float, sigma_y: float, T: int, y=None) -> LinearGaussianModel:
    return LinearGaussianModel(rho, sigma_x, sigma_y, T, y=y)


def sv_model(theta: SVParams, y, stationary_variance: str = "printed") -> StochasticVolatilityModel:
    return StochasticVolatilityModel(theta, y, stationary_variance=stationary_variance)


def uniform_model(T: int) -> UniformModel:
    return UniformModel(T)


DEMO_INITIAL = np.array([0.5, 0.3, 0.2])
DEMO_TRANSITION = np.array([
    [0.80, 0.10, 0.10],
    [0.20, 0.60, 0.20],
    [0.15, 0.15, 0.70],
])
DEMO_EMISSION = np.array([
    [0.7, 0.2, 0.1],
    [0.2, 0.6, 0.2],
    [0.1, 0.3, 0.6],
])
DEMO_OBSERVATIONS = (0, 2, 1, 2, 0, 1, 1, 2, 0, 0, 2, 1)
DEMO_PAIRWISE = np.log(np.array([
    [1.0, 0.5, 0.3],
    [0.5, 1.0, 0.5],
    [0.3, 0.5, 1.0],
]))


def discrete_demo_model(T: int, pairwise: bool = False) -> DiscreteHMM:
    """Fixed 3-state HMM used by the invariance checks (T <= 12)."""
    if not 1 <= T <= len(DEMO_OBSERVATIONS):
        raise ValueError(f"discrete demo model supports 1 <= T <= {len(DEMO_OBSERVATIONS)}")
    obs = np.array(DEMO_OBSERVATIONS[:T])
    log_potentials = np.log(DEMO_EMISSION[:, obs].T)
    log_pairwise = np.broadcast_to(DEMO_PAIRWISE, (T, 3, 3)).copy() if pairwise else None
    return DiscreteHMM(DEMO_INITIAL, DEMO_TRANSITION, log_potentials, log_pairwise)


def simulate_sv_data(theta: SVParams, T: int, rng: np.random.Generator,
                     stationary_variance: str = "printed"):
    """Latent log-volatilities and returns (x, y) drawn from the SV model."""
    corr = theta.rho if stationary_variance == "printed" else theta.phi
    x = np.empty(T)
    y = np.empty(T)
    x[0] = rng.normal(theta.mu, theta.sigma / np.sqrt(1.0 - corr ** 2))
    for t in range(T):
        eps = rng.standard_normal()
        y[t] = np.exp(x[t] / 2.0) * eps
        if t + 1 < T:
            eta = theta.rho * eps + np.sqrt(1.0 - theta.rho ** 2) * rng.standard_normal()
            x[t + 1] = theta.mu + theta.phi * (x[t] - theta.mu) + theta.sigma * eta
    return x, y


def simulate_lg_data(rho: float, sigma_x: float, sigma_y: float, T: int, rng: np.random.Generator):
    """Latent AR(1) states and noisy observations (x, y)."""
    x = np.empty(T)
    x[0] = rng.normal(0.0, sigma_x / np.sqrt(1.0 - rho ** 2))
    for t in range(1, T):
        x[t] = rho * x[t - 1] + sigma_x * rng.standard_normal()
    y = x + sigma_y * rng.standard_normal(T)
    return x, y
