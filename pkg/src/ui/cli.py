from typing import List, Sequence

import numpy as np

from src.models.data_models import CostRecord, MeetingRecord, TraceRow, UnbiasedEstimate
from src.utils.buffers import BufferManager

buffers: BufferManager | None = None

def init_buffers(bm: BufferManager):
    global buffers
    buffers = bm

def display_run_header(command: str, seed: int, out_dir: str):
    """Display the command being run and where its files go."""
    buffers.write("progress", f"=== {command} (seed {seed}) ===")
    buffers.write("progress", f"Output directory: {out_dir}")

def display_model(family: str, params: Sequence[float], T: int, N: int = None):
    """Display the model being run."""
    shown = ", ".join(f"{p:g}" for p in params) if params else "defaults"
    suffix = f", N={N}" if N is not None else ""
    buffers.write("progress", f"Model {family} ({shown}), T={T}{suffix}")

def display_smoothing_summary(kernel: str, iterations: int, means, change_rate):
    """Display per-time summaries of a single-chain run."""
    buffers.write("results", f"=== {kernel.upper()} chain, {iterations} iterations ===")
    for t in range(len(means)):
        buffers.write("results", f"t={t}: mean={means[t]:.6f}")
    buffers.write("diagnostics", f"Reference change rate: min={np.min(change_rate):.3f}, "
                                 f"mean={np.mean(change_rate):.3f}, max={np.max(change_rate):.3f}")
    buffers.write("progress", "✓ Smoothing run completed.")

def display_coupling_summary(holes: List[int], record: MeetingRecord, b_star: int):
    """Display the hole counts of a coupled run."""
    buffers.write("diagnostics", "=== Coupled run ===")
    buffers.write("diagnostics", f"Initial holes b*: {b_star}")
    buffers.write("diagnostics", f"Holes per iteration: {holes[:50]}{' ...' if len(holes) > 50 else ''}")
    if record.tau is not None:
        buffers.write("diagnostics", f"Met at iteration {record.tau}; latest per-time coupling at {max(record.tau_per_time)}")
        buffers.write("progress", f"✓ Chains met after {record.tau} iterations.")
    else:
        buffers.write("progress", f"Chains did not meet within {record.iterations_run} iterations.")

def display_cost_records(costs: List[CostRecord]):
    """Display the benchmark summary table."""
    buffers.write("results", "=== Meeting-time benchmark ===")
    for c in costs:
        mean = f"{c.mean_tau:.2f}" if c.mean_tau is not None else "-"
        cost = f"{c.cost_factor:.1f}" if c.cost_factor is not None else "-"
        flag = "" if c.completed else " (incomplete)"
        buffers.write("results", f"{c.strategy.value} N={c.N} T={c.T}: mean tau {mean}, cost {cost}, "
                                 f"{c.replicates} replicates{flag}")
    buffers.write("progress", f"✓ Benchmark finished: {len(costs)} cells.")

def display_unbiased_estimate(estimate: UnbiasedEstimate):
    """Display an unbiased estimate and its tuning."""
    buffers.write("results", "=== Unbiased estimate ===")
    buffers.write("results", f"Value: {estimate.value}")
    buffers.write("results", f"Lag L={estimate.L}, offsets k={estimate.k}..{estimate.ell}")
    buffers.write("diagnostics", f"Meeting time {estimate.meeting.tau} after {estimate.meeting.iterations_run} iterations")
    buffers.write("progress", "✓ Estimate completed.")

def display_oracle(kind: str, rows: dict):
    """Display exact reference values."""
    buffers.write("results", f"=== {kind} oracle ===")
    for name, values in rows.items():
        if np.ndim(values) == 0:
            buffers.write("results", f"{name}: {float(values):.10g}")
        else:
            buffers.write("results", f"{name}: " + ", ".join(f"{float(v):.6g}" for v in np.ravel(values)))

def display_mle_trace(names: Sequence[str], trace: List[TraceRow]):
    """Display the start and end of an MLE fit."""
    first, last = trace[0], trace[-1]
    buffers.write("results", "=== Stochastic-gradient MLE ===")
    buffers.write("results", "Initial: " + ", ".join(f"{n}={v:.4f}" for n, v in zip(names, first.constrained)))
    buffers.write("results", f"After {last.iteration} iterations: "
                  + ", ".join(f"{n}={v:.4f}" for n, v in zip(names, last.constrained)))
    buffers.write("progress", "✓ Fit completed.")
