"""
Coupled Kernels

Two CBPF transitions run jointly so that their outputs coincide with high
probability while each marginal is an ordinary CBPF update. The initial
particles are shared, the forward particles at each later step are drawn by a
forward-coupling strategy, and the backward indices are maximally coupled.

Forward-coupling strategies:
- JMC: maximal coupling of the N-fold products of the predictive mixtures
- IMC: N independent maximal couplings of the predictive mixtures
- IIC: maximally coupled ancestor indices per particle, shared transition
  draw when the two ancestors are the same state
- JIC: maximal coupling of the whole ancestor-index vector, then as IIC

When the two previous rows are identical the step is simulated once and
copied, for every strategy.
"""
from typing import Dict, Iterator, List, NamedTuple, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from src.models.data_models import CoupledOutput, CouplingStrategy
from src.models.feynman_kac import FeynmanKacModel
from src.smc.coupling import (
    DEFAULT_REJECTION_CAP,
    DensitySampler,
    categorical_sample,
    max_couple_categorical,
    max_couple_generic,
    max_couple_generic_batch,
    normalize,
)
from src.smc.kernels import ParticleCloud, backward_log_weights, marginal_log_weights
from src.utils.errors import DegenerateWeightsError


class CloudRow(NamedTuple):
    """Particles and log-weights of one cloud at a single time, reference slot included."""
    states: np.ndarray
    log_weights: np.ndarray


def predictive_log_density(cloud_row: CloudRow, model: FeynmanKacModel, t: int, y):
    """
    log zeta_t(y) = log sum_i (W^i / sum_j W^j) M_t(X^i, y) over indices 0..N.

    ``y`` may be a scalar or an array of points.
    """
    lw = np.asarray(cloud_row.log_weights, dtype=float)
    normalize(lw)  # validates the weights
    log_w = lw - logsumexp(lw)
    y_arr = np.asarray(y, dtype=float)
    log_m = model.log_transition_density(t, cloud_row.states[:, None], y_arr.reshape(1, -1))
    out = logsumexp(log_w[:, None] + log_m, axis=0)
    return float(out[0]) if y_arr.ndim == 0 else out.reshape(y_arr.shape)


class _Mixture:
    """Predictive mixture zeta_t of one cloud row as a sampler/density pair."""

    def __init__(self, row: CloudRow, model: FeynmanKacModel, t: int):
        self.row, self.model, self.t = row, model, t

    def sample(self, rng, size=None):
        n = 1 if size is None else size
        anc = categorical_sample(self.row.log_weights, rng, n)
        draws = self.model.sample_transition(self.t, self.row.states[anc], rng)
        return float(draws[0]) if size is None else draws

    def log_density(self, y):
        return predictive_log_density(self.row, self.model, self.t, y)

    def as_sampler(self) -> DensitySampler:
        return DensitySampler(self.sample, self.log_density)


class _Product:
    """N-fold product of a base law; points are length-N vectors."""

    def __init__(self, sample, log_density, N: int):
        self._sample, self._log_density, self.N = sample, log_density, N

    def sample(self, rng, size=None):
        return self._sample(rng, self.N)

    def log_density(self, points):
        return float(np.sum(self._log_density(points)))

    def as_sampler(self) -> DensitySampler:
        return DensitySampler(self.sample, self.log_density)


class _IndexLaw:
    """Categorical law on ancestor indices."""

    def __init__(self, log_weights):
        lw = np.asarray(log_weights, dtype=float)
        self.log_weights = lw
        with np.errstate(divide="ignore"):
            self.log_probs = np.log(normalize(lw))

    def sample(self, rng, size=None):
        return categorical_sample(self.log_weights, rng, size)

    def log_density(self, idx):
        return self.log_probs[np.asarray(idx, dtype=int)]


def _share_transition(model, t, row_a: CloudRow, row_b: CloudRow, anc_a, anc_b, rng):
    """Move ancestor pairs forward, sharing the draw where the ancestor states are bit-identical."""
    xa = row_a.states[anc_a]
    xb = row_b.states[anc_b]
    same = xa == xb
    new_a = model.sample_transition(t, xa, rng)
    new_b = np.array(new_a, copy=True)
    if not same.all():
        new_b[~same] = model.sample_transition(t, xb[~same], rng)
    return new_a, new_b


def fwd_couple(strategy: CouplingStrategy, cloud_a_row: CloudRow, cloud_b_row: CloudRow,
               model: FeynmanKacModel, t: int, N: int, rng: np.random.Generator,
               cap: int = DEFAULT_REJECTION_CAP) -> Tuple[np.ndarray, np.ndarray]:
    """Draw the N non-reference particles of both clouds at time t."""
    strategy = CouplingStrategy(strategy)

    if strategy in (CouplingStrategy.JMC, CouplingStrategy.IMC):
        zeta_a = _Mixture(cloud_a_row, model, t)
        zeta_b = _Mixture(cloud_b_row, model, t)
        if strategy is CouplingStrategy.JMC:
            p = _Product(zeta_a.sample, zeta_a.log_density, N).as_sampler()
            q = _Product(zeta_b.sample, zeta_b.log_density, N).as_sampler()
            xa, xb, _ = max_couple_generic(p, q, rng, cap=cap)
            return np.asarray(xa, dtype=float), np.array(xb, dtype=float, copy=True)
        xa, xb, _ = max_couple_generic_batch(zeta_a.as_sampler(), zeta_b.as_sampler(), N, rng, cap=cap)
        return xa, xb

    if strategy is CouplingStrategy.IIC:
        anc_a, anc_b = max_couple_categorical(cloud_a_row.log_weights, cloud_b_row.log_weights, rng, size=N)
    else:
        law_a = _IndexLaw(cloud_a_row.log_weights)
        law_b = _IndexLaw(cloud_b_row.log_weights)
        p = _Product(law_a.sample, law_a.log_density, N).as_sampler()
        q = _Product(law_b.sample, law_b.log_density, N).as_sampler()
        anc_a, anc_b, _ = max_couple_generic(p, q, rng, cap=cap)
    return _share_transition(model, t, cloud_a_row, cloud_b_row, np.asarray(anc_a), np.asarray(anc_b), rng)


def _rows_identical(cloud_a: ParticleCloud, cloud_b: ParticleCloud, t: int) -> bool:
    return (np.array_equal(cloud_a.particles[t], cloud_b.particles[t])
            and np.array_equal(cloud_a.log_weights[t], cloud_b.log_weights[t]))


def _weights(model, t, cloud: ParticleCloud, marginal: bool):
    if marginal:
        return marginal_log_weights(model, t, cloud.particles[t - 1], cloud.log_weights[t - 1], cloud.particles[t])
    return model.log_potential(t, cloud.particles[t])


def _couple_indices(lwa, lwb, rng, t):
    try:
        return max_couple_categorical(lwa, lwb, rng)
    except DegenerateWeightsError as e:
        raise DegenerateWeightsError(time_index=t) from e


def coupled_forward_pass(model: FeynmanKacModel, ref_a, ref_b, N: int, strategy: CouplingStrategy,
                         rng: np.random.Generator, marginal: bool = False,
                         cap: int = DEFAULT_REJECTION_CAP) -> Tuple[ParticleCloud, ParticleCloud, np.ndarray]:
    """Both forward systems and the per-time flag of equal non-reference particles."""
    if N < 1:
        raise ValueError(f"N must be a positive integer, got {N}")
    T = model.horizon
    cloud_a = ParticleCloud(np.empty((T, N + 1)), np.empty((T, N + 1)))
    cloud_b = ParticleCloud(np.empty((T, N + 1)), np.empty((T, N + 1)))
    events = np.zeros(T, dtype=bool)

    cloud_a.particles[:, 0] = model.check_path(ref_a)
    cloud_b.particles[:, 0] = model.check_path(ref_b)
    shared = model.sample_initial(rng, N)
    cloud_a.particles[0, 1:] = shared
    cloud_b.particles[0, 1:] = shared
    cloud_a.log_weights[0] = model.log_potential(0, cloud_a.particles[0])
    cloud_b.log_weights[0] = model.log_potential(0, cloud_b.particles[0])
    events[0] = True

    for t in range(1, T):
        try:
            if _rows_identical(cloud_a, cloud_b, t - 1):
                anc = categorical_sample(cloud_a.log_weights[t - 1], rng, N)
                xa = model.sample_transition(t, cloud_a.particles[t - 1, anc], rng)
                xb = xa
            else:
                row_a = CloudRow(cloud_a.particles[t - 1], cloud_a.log_weights[t - 1])
                row_b = CloudRow(cloud_b.particles[t - 1], cloud_b.log_weights[t - 1])
                xa, xb = fwd_couple(strategy, row_a, row_b, model, t, N, rng, cap=cap)
        except DegenerateWeightsError as e:
            raise DegenerateWeightsError(time_index=t - 1) from e
        cloud_a.particles[t, 1:] = xa
        cloud_b.particles[t, 1:] = xb
        events[t] = np.array_equal(cloud_a.particles[t, 1:], cloud_b.particles[t, 1:])
        cloud_a.log_weights[t] = _weights(model, t, cloud_a, marginal)
        cloud_b.log_weights[t] = _weights(model, t, cloud_b, marginal)
    return cloud_a, cloud_b, events


def coupled_cbpf_transition(model: FeynmanKacModel, ref_a, ref_b, N: int, strategy: CouplingStrategy,
                            rng: np.random.Generator, marginal: bool = False,
                            cap: int = DEFAULT_REJECTION_CAP) -> CoupledOutput:
    """
    One coupled CBPF update from references (ref_a, ref_b).

    ``marginal=True`` runs the pairwise-potential variant (marginal weights
    forward, pairwise factor in the backward weights); it is experimental.
    """
    cloud_a, cloud_b, events = coupled_forward_pass(model, ref_a, ref_b, N, strategy, rng,
                                                    marginal=marginal, cap=cap)
    T = model.horizon
    Ja = np.empty(T, dtype=int)
    Jb = np.empty(T, dtype=int)
    Ja[T - 1], Jb[T - 1] = _couple_indices(cloud_a.log_weights[T - 1], cloud_b.log_weights[T - 1], rng, T - 1)
    for t in range(T - 2, -1, -1):
        lba = backward_log_weights(model, cloud_a, t, cloud_a.particles[t + 1, Ja[t + 1]], marginal)
        lbb = backward_log_weights(model, cloud_b, t, cloud_b.particles[t + 1, Jb[t + 1]], marginal)
        Ja[t], Jb[t] = _couple_indices(lba, lbb, rng, t)

    steps = np.arange(T)
    path_a = cloud_a.particles[steps, Ja]
    path_b = cloud_b.particles[steps, Jb]
    holes = int(np.count_nonzero(path_a != path_b))
    return CoupledOutput(path_a=path_a, path_b=path_b, fully_met=holes == 0, holes=holes,
                         forward_couple_events=events)


def coupled_chain(model: FeynmanKacModel, ref_a, ref_b, N: int, strategy: CouplingStrategy,
                  rng: np.random.Generator, marginal: bool = False,
                  cap: int = DEFAULT_REJECTION_CAP) -> Iterator[CoupledOutput]:
    """Iterate the coupled kernel forever, each output feeding the next update."""
    a, b = np.asarray(ref_a, dtype=float), np.asarray(ref_b, dtype=float)
    while True:
        out = coupled_cbpf_transition(model, a, b, N, strategy, rng, marginal=marginal, cap=cap)
        yield out
        a, b = out.path_a, out.path_b


def hole_profile(ref_a, ref_b) -> Tuple[int, np.ndarray, Dict[float, List[int]]]:
    """
    Holes between two paths.

    Returns the number of unequal coordinates b*, the distance d_t from each
    time index to the nearest hole (inf when there is none) and the level sets
    H^d = {t : d_t = d}.
    """
    a = np.asarray(ref_a)
    b = np.asarray(ref_b)
    if a.shape != b.shape:
        raise ValueError("paths must have equal lengths")
    holes = np.flatnonzero(a != b)
    T = a.size
    if holes.size == 0:
        d = np.full(T, np.inf)
    else:
        d = np.abs(np.arange(T)[:, None] - holes[None, :]).min(axis=1).astype(float)
    levels: Dict[float, List[int]] = {}
    for t, depth in enumerate(d):
        key = depth if np.isinf(depth) else int(depth)
        levels.setdefault(key, []).append(t)
    return int(holes.size), d, levels
