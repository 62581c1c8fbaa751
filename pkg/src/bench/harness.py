"""
Meeting-Time Benchmark Harness

Runs replicates of the iterated coupled CBPF for every (T, N, strategy) cell
of an experiment and summarises meeting times as cost factors.

Replicates are independent jobs. Each one owns a generator seeded with
replicate_seed(root, cell-id, r) and is executed in a process pool through
asyncio; results are gathered in replicate order, so outputs do not depend
on the number of workers. A per-cell time budget is checked between batches,
so a replicate that has started is always run to completion.
"""
import asyncio
import time
from concurrent.futures import Executor, ProcessPoolExecutor
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from src.bench.config import build_model
from src.bench.outputs import MeetingRow
from src.estimation_engine import MeetingTracker
from src.models.data_models import CostRecord, CouplingStrategy, ExperimentConfig, MeetingRecord
from src.models.feynman_kac import FeynmanKacModel
from src.smc.coupled_kernels import coupled_chain
from src.smc.kernels import particle_filter
from src.utils.buffers import BufferManager
from src.utils.errors import EstimatorCapExceeded
from src.utils.seeding import make_rng, replicate_seed


class ReplicateJob(NamedTuple):
    """Everything a worker process needs to run one replicate."""
    family: str
    params: Tuple[float, ...]
    T: int
    N: int
    strategy: str
    seed: int
    cap: int
    record_timing: bool = False
    stationary_variance: str = "printed"
    data_seed: int = 12345


def cell_id(family: str, N: int, T: int, strategy: str) -> str:
    return f"{family}/N={N}/T={T}/{strategy}"


def meeting_from_independent_starts(model: FeynmanKacModel, N: int, strategy: CouplingStrategy,
                                    rng: np.random.Generator, cap: int, seed: Optional[int] = None,
                                    record_timing: bool = False) -> MeetingRecord:
    """Iterate the coupled kernel from two independent particle-filter paths until they meet."""
    started = time.perf_counter_ns() if record_timing else 0
    ref_a = particle_filter(model, N, rng)
    ref_b = particle_filter(model, N, rng)
    tracker = MeetingTracker(model.horizon)
    chain = coupled_chain(model, ref_a, ref_b, N, strategy, rng)
    n = 0
    for n in range(1, cap + 1):
        out = next(chain)
        if tracker.update(n, out.path_a, out.path_b):
            break
    wall = time.perf_counter_ns() - started if record_timing else 0
    record = tracker.record(n, seed=seed, wall_nanos=wall)
    if record.tau is None:
        raise EstimatorCapExceeded(cap, record)
    return record


def run_replicate(job: ReplicateJob) -> Tuple[MeetingRecord, bool]:
    """Worker entry point; returns the record and whether the chains met."""
    model = build_model(job.family, list(job.params), job.T,
                        stationary_variance=job.stationary_variance, data_seed=job.data_seed)
    rng = make_rng(job.seed)
    try:
        record = meeting_from_independent_starts(model, job.N, CouplingStrategy(job.strategy), rng,
                                                 job.cap, seed=job.seed, record_timing=job.record_timing)
        return record, True
    except EstimatorCapExceeded as e:
        return e.record, False


async def run_replicates(jobs: Sequence[ReplicateJob], threads: int = 1,
                         executor: Optional[Executor] = None,
                         worker: Callable[[ReplicateJob], Tuple[MeetingRecord, bool]] = run_replicate):
    """
    Run jobs concurrently and return their results in job order.

    With ``threads == 1`` and no executor the jobs run one at a time on the
    loop's default executor, so the event loop keeps serving other tasks.
    """
    loop = asyncio.get_running_loop()
    if executor is None and threads <= 1:
        return [await loop.run_in_executor(None, worker, job) for job in jobs]
    own = executor is None
    pool = ProcessPoolExecutor(max_workers=threads) if own else executor
    try:
        tasks = [loop.run_in_executor(pool, worker, job) for job in jobs]
        return await asyncio.gather(*tasks)
    finally:
        if own:
            pool.shutdown()


def summarize_cell(strategy: CouplingStrategy, N: int, T: int, records: List[Tuple[MeetingRecord, bool]],
                   requested: int) -> CostRecord:
    """Mean meeting time over the replicates that met, scaled by the per-iteration cost."""
    taus = [r.tau for r, met in records if met]
    mean_tau = float(np.mean(taus)) if taus else None
    cost = None if mean_tau is None else mean_tau * N ** strategy.complexity_power
    return CostRecord(
        strategy=strategy,
        N=N,
        T=T,
        replicates=len(records),
        mean_tau=mean_tau,
        cost_factor=cost,
        completed=len(taus) == requested,
    )


async def run_meeting_benchmark_async(config: ExperimentConfig, threads: int = 1,
                                      buffers: Optional[BufferManager] = None,
                                      clock: Callable[[], float] = time.monotonic,
                                      executor: Optional[Executor] = None):
    """
    Benchmark every (T, N, strategy) cell of ``config``.

    Returns the per-replicate rows and the per-cell CostRecords, both ordered
    by cell and replicate index.
    """
    rows: List[MeetingRow] = []
    costs: List[CostRecord] = []
    batch = max(1, threads)

    for T in config.T:
        for N in config.N:
            for strategy in config.strategies:
                cid = cell_id(config.model_family, N, T, strategy.value)
                jobs = [
                    ReplicateJob(
                        family=config.model_family,
                        params=tuple(config.model_params),
                        T=T,
                        N=N,
                        strategy=strategy.value,
                        seed=replicate_seed(config.seed, cid, r),
                        cap=config.iteration_cap,
                        record_timing=config.record_timing,
                        stationary_variance=config.sv_stationary_variance,
                        data_seed=config.data_seed,
                    )
                    for r in range(config.replicates)
                ]
                if buffers:
                    buffers.write("progress", f"Cell {cid}: {len(jobs)} replicates")

                started = clock()
                results: List[Tuple[MeetingRecord, bool]] = []
                for lo in range(0, len(jobs), batch):
                    if config.time_budget_secs is not None and clock() - started > config.time_budget_secs:
                        if buffers:
                            buffers.write("progress", f"Cell {cid}: time budget exhausted after {len(results)} replicates")
                        break
                    results.extend(await run_replicates(jobs[lo:lo + batch], threads, executor=executor))

                for r, (record, met) in enumerate(results):
                    rows.append(MeetingRow(strategy.value, N, T, r, record, met))
                summary = summarize_cell(strategy, N, T, results, config.replicates)
                costs.append(summary)
                if buffers:
                    buffers.write("diagnostics", f"Cell {cid}: mean tau={summary.mean_tau}, "
                                                 f"cost factor={summary.cost_factor}, completed={summary.completed}")
    return rows, costs


def run_meeting_benchmark(config: ExperimentConfig, threads: int = 1, buffers: Optional[BufferManager] = None,
                          clock: Callable[[], float] = time.monotonic):
    """Synchronous wrapper around ``run_meeting_benchmark_async``."""
    return asyncio.run(run_meeting_benchmark_async(config, threads=threads, buffers=buffers, clock=clock))
