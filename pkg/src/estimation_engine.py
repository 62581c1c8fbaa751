"""
Unbiased Estimation Engine

This module implements the L-lagged, k-offset unbiased estimator built on the
coupled CBPF. Two chains start from the same particle-filter draw; the
leading chain is advanced L single CBPF steps, then both move together with
the coupled kernel until their paths are equal and the offset is reached:

    Z_k = h(S_k) + sum_{j=1}^{floor((n-k)/L)} [h(S_{k+Lj}) - h(S~_{k+Lj})]

It also tracks meeting times (tau and the per-time coupling times tau_t),
averages estimates over offsets and tunes (L, k, ell) from pilot runs.
"""
import math
import time
from typing import Callable, Dict, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from src.models.data_models import CouplingStrategy, MeetingRecord, UnbiasedEstimate
from src.models.feynman_kac import FeynmanKacModel
from src.smc.coupled_kernels import coupled_chain
from src.smc.kernels import cbpf_transition, particle_filter
from src.utils.buffers import BufferManager
from src.utils.errors import EstimatorCapExceeded

DEFAULT_TAU_HINT = 100
DEFAULT_QUANTILE = 0.90
DEFAULT_PILOT_RUNS = 100


def mid_state(path):
    return path[len(path) // 2]


def first_state(path):
    return path[0]


def last_state(path):
    return path[-1]


def mean_state(path):
    return float(np.mean(path))


TEST_FUNCTIONS = {
    "mid-state": mid_state,
    "first-state": first_state,
    "last-state": last_state,
    "mean-state": mean_state,
}


def default_cap(ell: int, tau_hint: Optional[int] = None) -> int:
    """Iteration cap 10 * (ell + expected meeting time); the hint falls back to DEFAULT_TAU_HINT."""
    return 10 * (int(ell) + int(DEFAULT_TAU_HINT if tau_hint is None else tau_hint))


def empirical_quantile(values: Sequence[float], q: float):
    """Nearest-rank quantile: the ceil(q * n)-th smallest value."""
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"quantile must lie in [0, 1], got {q}")
    ordered = sorted(values)
    if not ordered:
        raise ValueError("empirical_quantile needs at least one value")
    rank = max(1, math.ceil(q * len(ordered)))
    return ordered[rank - 1]


class MeetingTracker:
    """Records, per time index, the last coupled iteration at which the chains differed."""

    def __init__(self, horizon: int):
        self.last_diff = np.zeros(horizon, dtype=int)
        self.tau: Optional[int] = None

    def update(self, n: int, path_a, path_b) -> bool:
        differ = np.asarray(path_a) != np.asarray(path_b)
        if differ.any():
            self.last_diff[differ] = n
        elif self.tau is None:
            self.tau = n
        return self.tau is not None

    def record(self, iterations: int, seed: Optional[int] = None, wall_nanos: int = 0) -> MeetingRecord:
        return MeetingRecord(
            tau=self.tau,
            tau_per_time=(self.last_diff + 1).tolist(),
            seed=seed,
            iterations_run=iterations,
            wall_nanos=wall_nanos,
        )


def _evaluate(h: Callable, path) -> np.ndarray:
    return np.asarray(h(path), dtype=float)


def run_lagged_chains(model: FeynmanKacModel, N: int, strategy: CouplingStrategy, rng: np.random.Generator,
                      L: int = 1, stop_at: int = 0, cap: Optional[int] = None,
                      h: Optional[Callable] = None, offsets: Tuple[int, int] = (0, -1),
                      seed: Optional[int] = None, record_timing: bool = False,
                      tau_hint: Optional[int] = None, buffers: Optional[BufferManager] = None):
    """
    Run the coupled loop until the chains have met and n >= stop_at.

    Returns the meeting record, the final iteration n, h(S_n) for n in the
    closed range ``offsets`` and the nonzero differences h(S_n) - h(S~_n).
    """
    if N < 1:
        raise ValueError(f"N must be a positive integer, got {N}")
    if L < 1:
        raise ValueError(f"lag L must be at least 1, got {L}")
    cap = default_cap(stop_at, tau_hint) if cap is None else int(cap)
    if cap < stop_at:
        raise ValueError(f"iteration cap {cap} is smaller than the required offset {stop_at}")

    started = time.perf_counter_ns() if record_timing else 0
    lo, hi = offsets
    leading = particle_filter(model, N, rng)
    lagging = leading.copy()
    for _ in range(L):
        leading = cbpf_transition(model, leading, N, rng).path

    h_leading: Dict[int, np.ndarray] = {}
    differences: Dict[int, np.ndarray] = {}
    if h is not None and lo <= 0 <= hi:
        h_leading[0] = _evaluate(h, leading)

    tracker = MeetingTracker(model.horizon)
    chain = coupled_chain(model, leading, lagging, N, strategy, rng)
    n = 0
    for n in range(1, cap + 1):
        out = next(chain)
        met = tracker.update(n, out.path_a, out.path_b)
        if h is not None:
            if lo <= n <= hi:
                h_leading[n] = _evaluate(h, out.path_a)
            if not out.fully_met:
                differences[n] = _evaluate(h, out.path_a) - _evaluate(h, out.path_b)
        if met and n >= stop_at:
            break
    else:
        wall = time.perf_counter_ns() - started if record_timing else 0
        record = tracker.record(n, seed=seed, wall_nanos=wall)
        if buffers:
            buffers.write("diagnostics", f"Coupled chains did not meet within {cap} iterations")
        raise EstimatorCapExceeded(cap, record)

    wall = time.perf_counter_ns() - started if record_timing else 0
    record = tracker.record(n, seed=seed, wall_nanos=wall)
    if buffers:
        buffers.write("diagnostics", f"Chains met at tau={record.tau} after {n} iterations")
    return record, n, h_leading, differences


def _lagged_sum(j: int, n: int, L: int, h_leading, differences) -> np.ndarray:
    total = h_leading[j].copy()
    for i in range(1, (n - j) // L + 1):
        diff = differences.get(j + L * i)
        if diff is not None:
            total = total + diff
    return total


def _as_value(z: np.ndarray):
    return float(z) if z.ndim == 0 else z.tolist()


def averaged_estimate(model: FeynmanKacModel, h: Callable, N: int, k: int, ell: int, L: int,
                      strategy: CouplingStrategy, rng: np.random.Generator, cap: Optional[int] = None,
                      seed: Optional[int] = None, record_timing: bool = False,
                      tau_hint: Optional[int] = None, buffers: Optional[BufferManager] = None) -> UnbiasedEstimate:
    """
    Average Z_{k:ell} of the estimators Z_k, ..., Z_ell from a single coupled run.

    Raises ``EstimatorCapExceeded`` (carrying the partial meeting record) if
    the chains have not met by ``cap`` iterations. Without an explicit cap the
    limit is ``default_cap(ell, tau_hint)``, with ``tau_hint`` typically the
    pilot mean meeting time reported by ``tune_lag``.
    """
    if k < 0:
        raise ValueError(f"offset k must be nonnegative, got {k}")
    if ell < k:
        raise ValueError(f"ell must be at least k, got k={k}, ell={ell}")
    record, n, h_leading, differences = run_lagged_chains(
        model, N, strategy, rng, L=L, stop_at=ell, cap=cap, h=h, offsets=(k, ell),
        seed=seed, record_timing=record_timing, tau_hint=tau_hint, buffers=buffers,
    )
    estimates = [_lagged_sum(j, n, L, h_leading, differences) for j in range(k, ell + 1)]
    value = np.mean(estimates, axis=0)
    return UnbiasedEstimate(value=_as_value(value), k=k, ell=ell, L=L, meeting=record)


def unbiased_estimate(model: FeynmanKacModel, h: Callable, N: int, k: int, L: int,
                      strategy: CouplingStrategy, rng: np.random.Generator, cap: Optional[int] = None,
                      seed: Optional[int] = None, record_timing: bool = False,
                      tau_hint: Optional[int] = None, buffers: Optional[BufferManager] = None) -> UnbiasedEstimate:
    """The L-lagged, k-offset estimator Z_k."""
    return averaged_estimate(model, h, N, k, k, L, strategy, rng, cap=cap, seed=seed,
                             record_timing=record_timing, tau_hint=tau_hint, buffers=buffers)


def sample_meeting_time(model: FeynmanKacModel, N: int, strategy: CouplingStrategy, rng: np.random.Generator,
                        cap: Optional[int] = None, L: int = 1, seed: Optional[int] = None,
                        record_timing: bool = False) -> MeetingRecord:
    """Meeting record of one run of the estimator loop with k = 0 and no test function."""
    record, _, _, _ = run_lagged_chains(model, N, strategy, rng, L=L, stop_at=0, cap=cap,
                                        seed=seed, record_timing=record_timing)
    return record


class LagChoice(NamedTuple):
    """Lag settings tuned from pilot runs."""
    L: int
    k: int
    ell: int
    tau_hint: Optional[int] = None


def lag_from_meeting_times(taus: Sequence[int], quantile: float = DEFAULT_QUANTILE) -> Tuple[int, int, int]:
    """(L, k, ell) = (q, q, 5q) with q the empirical quantile of the meeting times."""
    q = int(empirical_quantile(taus, quantile))
    return q, q, 5 * q


def tune_lag(model: FeynmanKacModel, N: int, strategy: CouplingStrategy, rng: np.random.Generator,
             pilot_runs: int = DEFAULT_PILOT_RUNS, quantile: float = DEFAULT_QUANTILE,
             cap: Optional[int] = None, buffers: Optional[BufferManager] = None) -> LagChoice:
    """
    Tune (L, k, ell) from pilot meeting times.

    Runs ``pilot_runs`` coupled chains with L = 1 and k = 0 and sets L and k
    to the ``quantile`` of their meeting times and ell to five times that.
    The rounded-up mean meeting time is returned as ``tau_hint``.
    """
    if pilot_runs < 10:
        raise ValueError(f"tune_lag needs at least 10 pilot runs, got {pilot_runs}")
    taus = []
    for _ in range(pilot_runs):
        taus.append(sample_meeting_time(model, N, strategy, rng, cap=cap).tau)
    L, k, ell = lag_from_meeting_times(taus, quantile)
    tau_hint = math.ceil(np.mean(taus))
    if buffers:
        buffers.write("diagnostics", f"Pilot meeting times: mean={np.mean(taus):.2f}, max={max(taus)}")
        buffers.write("progress", f"Tuned lag L={L}, k={k}, ell={ell} from {pilot_runs} pilot runs")
    return LagChoice(L, k, ell, tau_hint)
