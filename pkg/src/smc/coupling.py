"""
Coupling Primitives

Weighted categorical sampling and maximal couplings of two distributions:

- ``categorical_sample``: inverse-CDF draw from log-weights
- ``max_couple_categorical``: direct three-branch coupling of two categoricals
  (common part with probability sum_i min(v^i, v~^i), independent residuals otherwise)
- ``max_couple_generic``: rejection sampler for a maximal coupling of any two
  distributions given as (sampler, log-density) pairs

Weights are always handled in log space and converted to probabilities with a
max-subtraction guard.
"""
from typing import Any, Callable, NamedTuple, Optional, Tuple

import numpy as np

from src.utils.errors import CouplingCapExceeded, DegenerateWeightsError

DEFAULT_REJECTION_CAP = 10 ** 6


class DensitySampler(NamedTuple):
    """A distribution given by a sampler ``sample(rng, size=None)`` and its log-density."""
    sample: Callable[..., Any]
    log_density: Callable[[Any], Any]


def normalize(log_weights) -> np.ndarray:
    """Probabilities proportional to exp(log_weights)."""
    lw = np.asarray(log_weights, dtype=float)
    if lw.size == 0 or np.isnan(lw).any():
        raise DegenerateWeightsError()
    top = lw.max()
    if not np.isfinite(top):
        raise DegenerateWeightsError()
    w = np.exp(lw - top)
    return w / w.sum()


def _inverse_cdf(weights: np.ndarray, u):
    """First index whose cumulative weight exceeds u * total."""
    cdf = np.cumsum(weights)
    idx = np.searchsorted(cdf, np.asarray(u) * cdf[-1], side="right")
    return np.minimum(idx, weights.size - 1)


def _as_index(idx, size):
    return int(idx) if size is None else idx


def categorical_sample(log_weights, rng: np.random.Generator, size=None):
    """Index i with probability w^i / sum_j w^j (``size`` independent draws if given)."""
    probs = normalize(log_weights)
    return _as_index(_inverse_cdf(probs, rng.random(size)), size)


def max_couple_categorical(log_weights_a, log_weights_b, rng: np.random.Generator,
                           size=None) -> Tuple[Any, Any]:
    """
    Maximal coupling of Categorical(w) and Categorical(w~).

    With v, v~ the normalised weights, c = min(v, v~) and s = sum(c), one
    uniform U picks the branch: U < s gives the common index from c at U / s;
    otherwise the first index comes from the residual v - c at (U - s) / (1 - s)
    and the second from v~ - c with a fresh uniform.
    """
    lwa = np.asarray(log_weights_a, dtype=float)
    lwb = np.asarray(log_weights_b, dtype=float)
    if lwa.shape != lwb.shape:
        raise ValueError(f"weight vectors differ in length: {lwa.size} != {lwb.size}")

    va = normalize(lwa)
    if np.array_equal(lwa, lwb):
        i = _as_index(_inverse_cdf(va, rng.random(size)), size)
        return i, (i if size is None else i.copy())

    vb = normalize(lwb)
    common = np.minimum(va, vb)
    overlap = common.sum()
    res_a = np.maximum(va - common, 0.0)
    res_b = np.maximum(vb - common, 0.0)

    u = rng.random(size)
    take_common = u < overlap
    rest = 1.0 - overlap
    i_common = _inverse_cdf(common, np.minimum(u / overlap, 1.0)) if overlap > 0.0 else 0
    if rest > 0.0 and res_a.sum() > 0.0:
        i_a = _inverse_cdf(res_a, np.clip((u - overlap) / rest, 0.0, 1.0))
    else:
        i_a = i_common
    i_b = _inverse_cdf(res_b, rng.random(size)) if res_b.sum() > 0.0 else i_common

    out_a = np.where(take_common, i_common, i_a)
    out_b = np.where(take_common, i_common, i_b)
    return _as_index(out_a, size), _as_index(out_b, size)


def max_couple_generic(p: DensitySampler, q: DensitySampler, rng: np.random.Generator,
                       cap: int = DEFAULT_REJECTION_CAP) -> Tuple[Any, Any, bool]:
    """
    Maximal coupling (X, Y) of p and q by rejection; ``met`` flags X == Y.

    Ratios are compared in log space with saturation at 1. The rejection
    loop is bounded by ``cap`` rounds.
    """
    x = p.sample(rng)
    log_u = np.log(rng.random())
    if log_u <= min(0.0, float(q.log_density(x)) - float(p.log_density(x))):
        return x, x, True

    for _ in range(cap):
        y = q.sample(rng)
        log_u = np.log(rng.random())
        if log_u > min(0.0, float(p.log_density(y)) - float(q.log_density(y))):
            return x, y, False
    raise CouplingCapExceeded(cap)


def max_couple_generic_batch(p: DensitySampler, q: DensitySampler, size: int,
                             rng: np.random.Generator,
                             cap: int = DEFAULT_REJECTION_CAP) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    ``size`` independent copies of ``max_couple_generic`` for scalar p and q.

    ``p.sample(rng, n)`` must return n draws and both log-densities must be
    elementwise. Pending copies are resampled together each round.
    """
    x = np.asarray(p.sample(rng, size), dtype=float)
    log_u = np.log(rng.random(size))
    met = log_u <= np.minimum(0.0, q.log_density(x) - p.log_density(x))
    y = x.copy()

    pending = np.flatnonzero(~met)
    rounds = 0
    while pending.size:
        if rounds >= cap:
            raise CouplingCapExceeded(cap)
        rounds += 1
        draws = np.asarray(q.sample(rng, pending.size), dtype=float)
        log_u = np.log(rng.random(pending.size))
        accept = log_u > np.minimum(0.0, p.log_density(draws) - q.log_density(draws))
        y[pending[accept]] = draws[accept]
        pending = pending[~accept]
    return x, y, met


def coupling_probability(log_weights_a, log_weights_b) -> float:
    """sum_i min(v^i, v~^i): the probability that the categorical coupling agrees."""
    return float(np.minimum(normalize(log_weights_a), normalize(log_weights_b)).sum())
