"""
Exact Oracles

Reference answers the Monte Carlo code is checked against:

- scalar Kalman filter and Rauch-Tung-Striebel smoother for the linear-Gaussian
  model, with the exact log-likelihood, its gradient and maximiser
- dense multivariate-normal conditioning (brute force cross-check of the smoother)
- sum-product marginals of finite-state models, with optional pairwise
  potentials, and brute-force enumeration of the joint
- the closed-form meeting-time law of the uniform model
"""
import itertools
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize
from scipy.special import logsumexp

from src.models.feynman_kac import DiscreteHMM
from src.utils.transforms import to_constrained, to_raw

MAX_DISCRETE_STATES = 16
MAX_DISCRETE_HORIZON = 12
MAX_ENUMERATION_SIZE = 20
LG_TRANSFORMS = ("logit", "log", "log")


class SmootherResult(NamedTuple):
    means: np.ndarray
    variances: np.ndarray
    log_likelihood: float


class DiscreteResult(NamedTuple):
    marginals: np.ndarray  # (T, K)
    log_normalizer: float


def _observations(y, T):
    return np.zeros(T) if y is None else np.asarray(y, dtype=float)


def kalman_smoother(rho: float, sigma_x: float, sigma_y: float, T: int, y=None) -> SmootherResult:
    """Smoothing means and variances of x_t given y_{0:T-1}, and log p(y_{0:T-1})."""
    y = _observations(y, T)
    q = sigma_x ** 2
    r = sigma_y ** 2
    m_pred = np.zeros(T)
    p_pred = np.zeros(T)
    m_filt = np.zeros(T)
    p_filt = np.zeros(T)
    loglik = 0.0

    # Forward filter
    for t in range(T):
        if t == 0:
            m_pred[t], p_pred[t] = 0.0, q / (1.0 - rho ** 2)
        else:
            m_pred[t] = rho * m_filt[t - 1]
            p_pred[t] = rho ** 2 * p_filt[t - 1] + q
        s = p_pred[t] + r
        gain = p_pred[t] / s
        innovation = y[t] - m_pred[t]
        m_filt[t] = m_pred[t] + gain * innovation
        p_filt[t] = (1.0 - gain) * p_pred[t]
        loglik += -0.5 * (np.log(2.0 * np.pi * s) + innovation ** 2 / s)

    # Backward (RTS) pass
    means = m_filt.copy()
    variances = p_filt.copy()
    for t in range(T - 2, -1, -1):
        c = p_filt[t] * rho / p_pred[t + 1]
        means[t] = m_filt[t] + c * (means[t + 1] - m_pred[t + 1])
        variances[t] = p_filt[t] + c ** 2 * (variances[t + 1] - p_pred[t + 1])
    return SmootherResult(means, variances, float(loglik))


def dense_gaussian_smoother(rho: float, sigma_x: float, sigma_y: float, T: int, y=None) -> SmootherResult:
    """The same quantities by conditioning the joint Gaussian of (x, y) directly."""
    y = _observations(y, T)
    v0 = sigma_x ** 2 / (1.0 - rho ** 2)
    lags = np.abs(np.subtract.outer(np.arange(T), np.arange(T)))
    prior = v0 * rho ** lags
    precision = np.linalg.inv(prior) + np.eye(T) / sigma_y ** 2
    posterior = np.linalg.inv(precision)
    means = posterior @ y / sigma_y ** 2

    marginal_cov = prior + sigma_y ** 2 * np.eye(T)
    factor = cho_factor(marginal_cov)
    logdet = 2.0 * np.sum(np.log(np.diag(factor[0])))
    loglik = -0.5 * (T * np.log(2.0 * np.pi) + logdet + y @ cho_solve(factor, y))
    return SmootherResult(means, np.diag(posterior).copy(), float(loglik))


def kalman_log_likelihood(rho: float, sigma_x: float, sigma_y: float, y) -> float:
    y = np.asarray(y, dtype=float)
    return kalman_smoother(rho, sigma_x, sigma_y, y.size, y).log_likelihood


def kalman_score(theta: Sequence[float], y, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of the exact log-likelihood in (rho, sigma_x, sigma_y)."""
    theta = np.asarray(theta, dtype=float)
    grad = np.zeros(theta.size)
    for i in range(theta.size):
        e = np.zeros(theta.size)
        e[i] = step
        grad[i] = (kalman_log_likelihood(*(theta + e), y) - kalman_log_likelihood(*(theta - e), y)) / (2.0 * step)
    return grad


def kalman_mle(y, init: Sequence[float] = (0.5, 1.0, 1.0)) -> np.ndarray:
    """Maximiser of the exact log-likelihood, searched in transformed coordinates."""
    y = np.asarray(y, dtype=float)

    def objective(raw):
        rho, sx, sy = to_constrained(raw, LG_TRANSFORMS)
        return -kalman_log_likelihood(rho, sx, sy, y)

    result = minimize(objective, to_raw(init, LG_TRANSFORMS), method="Nelder-Mead",
                      options={"xatol": 1e-8, "fatol": 1e-10, "maxiter": 20000, "maxfev": 40000})
    return to_constrained(result.x, LG_TRANSFORMS)


def _check_discrete_size(K: int, T: int):
    if K > MAX_DISCRETE_STATES or T > MAX_DISCRETE_HORIZON:
        raise ValueError(f"discrete oracle supports at most {MAX_DISCRETE_STATES} states and "
                         f"T <= {MAX_DISCRETE_HORIZON}, got K={K}, T={T}")


def _log_transitions(transitions, T, K, log_pairwise):
    with np.errstate(divide="ignore"):
        log_q = np.log(np.asarray(transitions, dtype=float))
    log_q = np.broadcast_to(log_q, (T, K, K)) if log_q.ndim == 2 else log_q
    if log_pairwise is not None:
        log_q = log_q + np.asarray(log_pairwise, dtype=float)
    return log_q


def discrete_forward_backward(initial, transitions, log_potentials,
                              log_pairwise: Optional[np.ndarray] = None) -> DiscreteResult:
    """
    Exact per-time marginals and log normaliser by sum-product in log space.

    ``transitions`` is (K, K) or (T, K, K); ``log_pairwise[t, i, j]`` is added
    to the factor between state i at t - 1 and state j at t.
    """
    log_potentials = np.asarray(log_potentials, dtype=float)
    T, K = log_potentials.shape
    _check_discrete_size(K, T)
    log_q = _log_transitions(transitions, T, K, log_pairwise)
    with np.errstate(divide="ignore"):
        log_init = np.log(np.asarray(initial, dtype=float))

    alpha = np.empty((T, K))
    alpha[0] = log_init + log_potentials[0]
    for t in range(1, T):
        alpha[t] = logsumexp(alpha[t - 1][:, None] + log_q[t], axis=0) + log_potentials[t]

    beta = np.zeros((T, K))
    for t in range(T - 2, -1, -1):
        beta[t] = logsumexp(log_q[t + 1] + (log_potentials[t + 1] + beta[t + 1])[None, :], axis=1)

    log_z = float(logsumexp(alpha[T - 1]))
    return DiscreteResult(np.exp(alpha + beta - log_z), log_z)


def enumerate_joint(initial, transitions, log_potentials,
                    log_pairwise: Optional[np.ndarray] = None) -> DiscreteResult:
    """Brute-force marginals over all K^T paths (T * K <= 20)."""
    log_potentials = np.asarray(log_potentials, dtype=float)
    T, K = log_potentials.shape
    if T * K > MAX_ENUMERATION_SIZE:
        raise ValueError(f"enumeration needs T * K <= {MAX_ENUMERATION_SIZE}, got {T * K}")
    log_q = _log_transitions(transitions, T, K, log_pairwise)
    with np.errstate(divide="ignore"):
        log_init = np.log(np.asarray(initial, dtype=float))

    paths = np.array(list(itertools.product(range(K), repeat=T)))
    steps = np.arange(T)
    log_w = log_init[paths[:, 0]] + log_potentials[steps, paths].sum(axis=1)
    for t in range(1, T):
        log_w = log_w + log_q[t, paths[:, t - 1], paths[:, t]]
    log_z = float(logsumexp(log_w))
    weights = np.exp(log_w - log_z)
    marginals = np.zeros((T, K))
    for t in range(T):
        np.add.at(marginals[t], paths[:, t], weights)
    return DiscreteResult(marginals, log_z)


def discrete_model_oracle(model: DiscreteHMM) -> DiscreteResult:
    """Sum-product oracle for a DiscreteHMM instance."""
    return discrete_forward_backward(model.initial, model.transition, model.log_potentials, model.log_pairwise)


def uniform_meeting_cdf(N: int, T: int, k) -> np.ndarray:
    """P(tau <= k) = (1 - (N + 1)^{-k})^T for the uniform model."""
    k = np.asarray(k, dtype=float)
    return (1.0 - (N + 1.0) ** (-k)) ** T
