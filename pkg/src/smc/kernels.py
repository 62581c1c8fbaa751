"""
Single-Chain Kernels

Markov kernels on trajectories that leave the smoothing distribution of a
Feynman-Kac model invariant:

- ``particle_filter``: forward filter over N particles and one backward-sampled
  path, used to initialise chains
- ``cbpf_transition``: conditional backward-sampling particle filter
- ``cpf_transition``: conditional particle filter with ancestor tracing
- ``marginal_cbpf_transition``: conditional marginal particle filter for
  models with pairwise potentials G_t(x_{t-1}, x_t)

Particle index 0 is the reference slot in every conditional kernel. The
forward mixture draw is done in two stages (ancestor index, then transition).
"""
from typing import NamedTuple, Optional

import numpy as np
from scipy.special import logsumexp

from src.models.data_models import KernelOutput
from src.models.feynman_kac import FeynmanKacModel
from src.smc.coupling import categorical_sample
from src.utils.errors import DegenerateWeightsError


class ParticleCloud(NamedTuple):
    """
    Forward system of one conditional filter.

    particles[t, i] and log_weights[t, i] for t in 0..T-1 and i in 0..N;
    ancestors[t - 1, i] is the ancestor at t - 1 of particle i at t (CPF only,
    column 0 always points at the reference).
    """
    particles: np.ndarray
    log_weights: np.ndarray
    ancestors: Optional[np.ndarray] = None


def _draw(log_weights, rng, t, size=None):
    try:
        return categorical_sample(log_weights, rng, size)
    except DegenerateWeightsError as e:
        raise DegenerateWeightsError(time_index=t) from e


def marginal_log_weights(model: FeynmanKacModel, t: int, prev_states, prev_log_weights, states):
    """
    Mixture-ratio weights of the marginal filter at t >= 1:

        W_t^i = sum_k W^k M_t(X^k, X_t^i) G_t(X^k, X_t^i) / sum_k W^k M_t(X^k, X_t^i)
    """
    log_m = model.log_transition_density(t, prev_states[:, None], states[None, :])
    log_g = model.log_pairwise_potential(t, prev_states[:, None], states[None, :])
    prior = (prev_log_weights - logsumexp(prev_log_weights))[:, None]
    with np.errstate(invalid="ignore"):
        num = logsumexp(prior + log_m + log_g, axis=0)
        den = logsumexp(prior + log_m, axis=0)
        out = num - den
    return np.where(np.isneginf(den), -np.inf, out)


def forward_pass(model: FeynmanKacModel, N: int, rng: np.random.Generator,
                 reference: Optional[np.ndarray] = None, marginal: bool = False,
                 keep_ancestors: bool = False) -> ParticleCloud:
    """
    Run the forward system, conditional on ``reference`` when one is given.

    With a reference the cloud has N + 1 columns (column 0 is the reference);
    without one it has N columns.
    """
    if N < 1:
        raise ValueError(f"N must be a positive integer, got {N}")
    T = model.horizon
    offset = 0 if reference is None else 1
    width = N + offset
    particles = np.empty((T, width))
    log_weights = np.empty((T, width))
    ancestors = np.zeros((T - 1, width), dtype=int) if keep_ancestors else None

    if reference is not None:
        particles[:, 0] = model.check_path(reference)
    particles[0, offset:] = model.sample_initial(rng, N)
    log_weights[0] = model.log_potential(0, particles[0])

    for t in range(1, T):
        anc = _draw(log_weights[t - 1], rng, t - 1, size=N)
        particles[t, offset:] = model.sample_transition(t, particles[t - 1, anc], rng)
        if ancestors is not None:
            ancestors[t - 1, offset:] = anc
        if marginal:
            log_weights[t] = marginal_log_weights(model, t, particles[t - 1], log_weights[t - 1], particles[t])
        else:
            log_weights[t] = model.log_potential(t, particles[t])
    return ParticleCloud(particles, log_weights, ancestors)


def backward_log_weights(model: FeynmanKacModel, cloud: ParticleCloud, t: int, next_state,
                         marginal: bool = False) -> np.ndarray:
    """B_t^i = W_t^i M_{t+1}(X_t^i, next_state) (times G_{t+1}(X_t^i, next_state) if marginal)."""
    states = cloud.particles[t]
    lb = cloud.log_weights[t] + model.log_transition_density(t + 1, states, next_state)
    if marginal:
        lb = lb + model.log_pairwise_potential(t + 1, states, next_state)
    return lb


def backward_sample(model: FeynmanKacModel, cloud: ParticleCloud, rng: np.random.Generator,
                    marginal: bool = False) -> np.ndarray:
    T = model.horizon
    J = np.empty(T, dtype=int)
    J[T - 1] = _draw(cloud.log_weights[T - 1], rng, T - 1)
    for t in range(T - 2, -1, -1):
        lb = backward_log_weights(model, cloud, t, cloud.particles[t + 1, J[t + 1]], marginal)
        J[t] = _draw(lb, rng, t)
    return J


def _output(cloud: ParticleCloud, J: np.ndarray) -> KernelOutput:
    path = cloud.particles[np.arange(J.size), J]
    return KernelOutput(path=path, selected_indices=J, reference_retained=J == 0)


def particle_filter(model: FeynmanKacModel, N: int, rng: np.random.Generator) -> np.ndarray:
    """Unconditional filter over N particles followed by backward sampling; returns a path."""
    cloud = forward_pass(model, N, rng)
    J = backward_sample(model, cloud, rng)
    return cloud.particles[np.arange(J.size), J]


def cbpf_transition(model: FeynmanKacModel, reference, N: int, rng: np.random.Generator) -> KernelOutput:
    cloud = forward_pass(model, N, rng, reference=reference)
    return _output(cloud, backward_sample(model, cloud, rng))


def cpf_transition(model: FeynmanKacModel, reference, N: int, rng: np.random.Generator) -> KernelOutput:
    """Conditional particle filter; the output is traced back through the ancestors."""
    cloud = forward_pass(model, N, rng, reference=reference, keep_ancestors=True)
    T = model.horizon
    J = np.empty(T, dtype=int)
    J[T - 1] = _draw(cloud.log_weights[T - 1], rng, T - 1)
    for t in range(T - 2, -1, -1):
        # a zero index pins the whole prefix to the reference
        J[t] = cloud.ancestors[t, J[t + 1]] if J[t + 1] != 0 else 0
    return _output(cloud, J)


def marginal_cbpf_transition(model: FeynmanKacModel, reference, N: int,
                             rng: np.random.Generator) -> KernelOutput:
    """Conditional marginal filter with pairwise potentials, O(N^2) per time step."""
    cloud = forward_pass(model, N, rng, reference=reference, marginal=True)
    return _output(cloud, backward_sample(model, cloud, rng, marginal=True))
