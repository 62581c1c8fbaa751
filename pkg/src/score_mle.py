"""
Score Estimation and Stochastic-Gradient MLE

By Fisher's identity the score of the data likelihood is the smoothing
expectation of h(x) = grad_theta log gamma_theta(x), where gamma_theta is the
unnormalised joint density of the Feynman-Kac model. This module provides the
closed-form h for the linear-Gaussian and stochastic volatility families, an
Adam optimiser, and the fitting loop fed either by unbiased estimates of the
score or by h at the current state of a single CBPF chain.

Parameters are optimised in unconstrained (raw) coordinates; gradients are
carried through the transform Jacobian.
"""
import time
from typing import List, Optional, Sequence

import numpy as np

from src.estimation_engine import DEFAULT_PILOT_RUNS, DEFAULT_QUANTILE, averaged_estimate, tune_lag
from src.models.data_models import (
    AdamState,
    CouplingStrategy,
    SVParams,
    TraceRow,
    TransformedParams,
)
from src.models.feynman_kac import FeynmanKacModel, LinearGaussianModel, StochasticVolatilityModel
from src.smc.kernels import cbpf_transition, particle_filter
from src.utils.buffers import BufferManager
from src.utils.errors import EstimatorCapExceeded, NonFiniteGradientError
from src.utils.seeding import child_rng


def _normal_terms(x, mean, var):
    """d/dmean and d/dvar of the Gaussian log-density."""
    r = x - mean
    return r / var, -0.5 / var + 0.5 * r * r / (var * var)


class ModelFamily:
    """A parametrised Feynman-Kac model with a closed-form log-joint gradient."""
    names: Sequence[str] = ()
    transforms: Sequence[str] = ()

    def build(self, constrained) -> FeynmanKacModel:
        raise NotImplementedError

    def with_data(self, y) -> "ModelFamily":
        raise NotImplementedError

    def time_gradients(self, constrained, path) -> np.ndarray:
        """Per-time contributions to grad log gamma, shape (T, dim)."""
        raise NotImplementedError

    @property
    def dim(self) -> int:
        return len(self.names)

    def log_joint(self, constrained, path) -> float:
        """log gamma_theta(path) = log M_0 + sum_t log G_t + sum_{t>=1} log M_t."""
        model = self.build(constrained)
        x = model.check_path(path)
        total = float(model.log_initial_density(x[0])) + float(model.log_potential(0, x[0]))
        for t in range(1, x.size):
            total += float(model.log_transition_density(t, x[t - 1], x[t]))
            total += float(model.log_potential(t, x[t]))
        return total

    def constrained_gradient(self, constrained, path) -> np.ndarray:
        contributions = self.time_gradients(np.asarray(constrained, dtype=float), np.asarray(path, dtype=float))
        bad = ~np.all(np.isfinite(contributions), axis=1)
        if bad.any():
            raise NonFiniteGradientError(int(np.flatnonzero(bad)[0]))
        return contributions.sum(axis=0)


class LinearGaussianFamily(ModelFamily):
    """theta = (rho, sigma_x, sigma_y) for the AR(1) model observed in Gaussian noise."""
    names = ("rho", "sigma_x", "sigma_y")
    transforms = ("logit", "log", "log")

    def __init__(self, y):
        self.y = np.asarray(y, dtype=float)

    def with_data(self, y) -> "LinearGaussianFamily":
        return LinearGaussianFamily(y)

    def build(self, constrained) -> LinearGaussianModel:
        rho, sx, sy = (float(v) for v in constrained)
        return LinearGaussianModel(rho, sx, sy, self.y.size, y=self.y)

    def time_gradients(self, constrained, path):
        rho, sx, sy = constrained
        x = path
        T = x.size
        out = np.zeros((T, 3))

        v0 = sx ** 2 / (1.0 - rho ** 2)
        _, dv0 = _normal_terms(x[0], 0.0, v0)
        out[0, 0] = dv0 * sx ** 2 * 2.0 * rho / (1.0 - rho ** 2) ** 2
        out[0, 1] = dv0 * 2.0 * sx / (1.0 - rho ** 2)

        dm, dv = _normal_terms(x[1:], rho * x[:-1], sx ** 2)
        out[1:, 0] = dm * x[:-1]
        out[1:, 1] = dv * 2.0 * sx

        _, dvy = _normal_terms(self.y, x, sy ** 2)
        out[:, 2] = dvy * 2.0 * sy
        return out


class SVFamily(ModelFamily):
    """theta = (mu, phi, rho, sigma) for stochastic volatility with leverage."""
    names = ("mu", "phi", "rho", "sigma")
    transforms = ("identity", "logit", "logit", "log")

    def __init__(self, y, stationary_variance: str = "printed"):
        self.y = np.asarray(y, dtype=float)
        self.stationary_variance = stationary_variance

    def with_data(self, y) -> "SVFamily":
        return SVFamily(y, self.stationary_variance)

    def build(self, constrained) -> StochasticVolatilityModel:
        mu, phi, rho, sigma = (float(v) for v in constrained)
        theta = SVParams(mu=mu, phi=phi, rho=rho, sigma=sigma)
        return StochasticVolatilityModel(theta, self.y, stationary_variance=self.stationary_variance)

    def time_gradients(self, constrained, path):
        mu, phi, rho, sigma = constrained
        x = path
        T = x.size
        out = np.zeros((T, 4))

        printed = self.stationary_variance == "printed"
        c = rho if printed else phi
        v0 = sigma ** 2 / (1.0 - c ** 2)
        dm0, dv0 = _normal_terms(x[0], mu, v0)
        out[0, 0] = dm0
        out[0, 2 if printed else 1] = dv0 * sigma ** 2 * 2.0 * c / (1.0 - c ** 2) ** 2
        out[0, 3] = dv0 * 2.0 * sigma / (1.0 - c ** 2)

        prev = x[:-1]
        lever = np.exp(-prev / 2.0) * self.y[:-1]
        mean = mu + phi * (prev - mu) + rho * sigma * lever
        s2 = (1.0 - rho ** 2) * sigma ** 2
        dm, ds2 = _normal_terms(x[1:], mean, s2)
        out[1:, 0] = dm * (1.0 - phi)
        out[1:, 1] = dm * (prev - mu)
        out[1:, 2] = dm * sigma * lever + ds2 * (-2.0 * rho * sigma ** 2)
        out[1:, 3] = dm * rho * lever + ds2 * 2.0 * (1.0 - rho ** 2) * sigma
        return out


def log_joint_gradient(model_family: ModelFamily, theta: TransformedParams, path, data=None) -> np.ndarray:
    """grad of log gamma_theta(path) in raw coordinates (Jacobian times constrained gradient)."""
    family = model_family if data is None else model_family.with_data(data)
    constrained = theta.constrained()
    return theta.jacobian() * family.constrained_gradient(constrained, path)


def adam_step(state: AdamState, grad) -> tuple:
    """Bias-corrected Adam update; returns the new state and the ascent step."""
    g = np.asarray(grad, dtype=float)
    m = np.asarray(state.m, dtype=float)
    v = np.asarray(state.v, dtype=float)
    if g.shape != m.shape:
        raise ValueError(f"gradient has dimension {g.size}, optimiser state has {m.size}")

    step = state.step + 1
    m = state.beta1 * m + (1.0 - state.beta1) * g
    v = state.beta2 * v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1 ** step)
    v_hat = v / (1.0 - state.beta2 ** step)
    delta = state.alpha * m_hat / (np.sqrt(v_hat) + state.eps)

    new_state = state.model_copy(update={"step": step, "m": m.tolist(), "v": v.tolist()})
    return new_state, delta


def sv_initial_params(y, mu_init: str = "printed") -> TransformedParams:
    """
    Starting point for SV fits: sigma = 1 and rho = phi = 0, with mu = var(y)
    ("printed") or mu = log var(y) ("log").
    """
    spread = float(np.var(np.asarray(y, dtype=float)))
    if mu_init == "printed":
        mu = spread
    elif mu_init == "log":
        mu = float(np.log(spread))
    else:
        raise ValueError(f"unknown mu_init {mu_init!r}")
    return TransformedParams.from_constrained([mu, 0.0, 0.0, 1.0], SVFamily.transforms)


def _trace_row(iteration, started, params: TransformedParams, grad, tau=None, record_timing=False) -> TraceRow:
    return TraceRow(
        iteration=iteration,
        wall_seconds=(time.perf_counter() - started) if record_timing else 0.0,
        raw=list(params.raw),
        constrained=params.constrained().tolist(),
        grad_norm=float(np.linalg.norm(grad)),
        meeting_tau=tau,
    )


def mle_fit(model_family: ModelFamily, data, init: TransformedParams, N: int,
            strategy: CouplingStrategy, schedule: str, iterations: int, rng: np.random.Generator,
            adam: Optional[AdamState] = None, pilot_runs: int = DEFAULT_PILOT_RUNS,
            quantile: float = DEFAULT_QUANTILE, retune_period: int = 0, cap: Optional[int] = None,
            record_timing: bool = False, buffers: Optional[BufferManager] = None) -> List[TraceRow]:
    """
    Stochastic-gradient ascent on the log-likelihood.

    Args:
        schedule: "unbiased" feeds Adam with averaged unbiased score estimates
            (lag tuned once at the start, again every ``retune_period``
            iterations if positive); "markovian" feeds it h at the state of
            one persistent CBPF chain
        iterations: number of Adam updates (0 returns the initial point only)

    Returns:
        One TraceRow per iteration, starting with iteration 0 = ``init``.
    """
    if schedule not in ("unbiased", "markovian"):
        raise ValueError(f"unknown schedule {schedule!r}")
    if iterations < 0:
        raise ValueError("iterations must be nonnegative")
    family = model_family if data is None else model_family.with_data(data)
    params = init
    state = adam if adam is not None else AdamState.fresh(len(init.raw))
    started = time.perf_counter()
    trace = [_trace_row(0, started, params, np.zeros(len(init.raw)), record_timing=record_timing)]
    if iterations == 0:
        return trace

    lag = None
    path = None
    if schedule == "markovian":
        path = particle_filter(family.build(params.constrained()), N, rng)

    for it in range(1, iterations + 1):
        model = family.build(params.constrained())
        tau = None
        if schedule == "markovian":
            path = cbpf_transition(model, path, N, rng).path
            grad = log_joint_gradient(family, params, path)
        else:
            if lag is None or (retune_period > 0 and (it - 1) % retune_period == 0):
                lag = tune_lag(model, N, strategy, rng, pilot_runs=pilot_runs, quantile=quantile,
                               cap=cap, buffers=buffers)
            L, k, ell, tau_hint = lag
            current = params

            def h(x):
                return log_joint_gradient(family, current, x)

            try:
                est = averaged_estimate(model, h, N, k, ell, L, strategy, rng, cap=cap, tau_hint=tau_hint)
            except EstimatorCapExceeded as e:
                if buffers:
                    buffers.write("diagnostics", f"Iteration {it}: {e.message}; retrying with a fresh seed")
                est = averaged_estimate(model, h, N, k, ell, L, strategy, child_rng(rng), cap=cap,
                                        tau_hint=tau_hint)
            grad = est.as_array()
            tau = est.meeting.tau

        state, delta = adam_step(state, grad)
        params = params.shifted(delta)
        trace.append(_trace_row(it, started, params, grad, tau=tau, record_timing=record_timing))
        if buffers and it % 100 == 0:
            buffers.write("progress", f"MLE iteration {it}/{iterations}: "
                                      + ", ".join(f"{v:.4f}" for v in params.constrained()))
    return trace
