"""
Chain Diagnostics

- coupling_matrix: which time indices still differ as the coupled kernel is iterated
- reference_change_rate: how often a single CBPF chain moves away from its reference
- matrix_meeting_record: tau and per-time coupling times of a coupling matrix
- write_pgm: coupling matrices as portable graymap images (black = uncoupled)
"""
from pathlib import Path
from typing import Optional, Union

import numpy as np

from src.models.data_models import CouplingStrategy, MeetingRecord
from src.models.feynman_kac import FeynmanKacModel
from src.smc.coupled_kernels import coupled_chain
from src.smc.kernels import cbpf_transition, particle_filter
from src.utils.buffers import BufferManager


def coupling_matrix(model: FeynmanKacModel, N: int, strategy: CouplingStrategy, iterations: int,
                    rng: np.random.Generator, ref_a=None, ref_b=None,
                    buffers: Optional[BufferManager] = None) -> np.ndarray:
    """
    Binary (iterations x T) matrix; entry (i, t) is 1 iff the two chains differ at
    time t after coupled update i + 1.

    Starting paths default to two independent particle-filter draws.
    """
    ref_a = particle_filter(model, N, rng) if ref_a is None else np.asarray(ref_a, dtype=float)
    ref_b = particle_filter(model, N, rng) if ref_b is None else np.asarray(ref_b, dtype=float)
    matrix = np.zeros((iterations, model.horizon), dtype=np.uint8)
    chain = coupled_chain(model, ref_a, ref_b, N, strategy, rng)
    for i in range(iterations):
        out = next(chain)
        matrix[i] = out.path_a != out.path_b
    if buffers:
        buffers.write("diagnostics", f"Coupling matrix: holes per iteration {matrix.sum(axis=1).tolist()[:20]}")
    return matrix


def reference_change_rate(model: FeynmanKacModel, N: int, iterations: int, burn_in: int,
                          rng: np.random.Generator, reference=None) -> np.ndarray:
    """Per-time fraction of post-burn-in CBPF updates whose output differs from the reference."""
    if iterations <= burn_in:
        raise ValueError(f"iterations ({iterations}) must exceed burn_in ({burn_in})")
    path = particle_filter(model, N, rng) if reference is None else model.check_path(reference)
    changes = np.zeros(model.horizon)
    for i in range(1, iterations + 1):
        out = cbpf_transition(model, path, N, rng)
        if i > burn_in:
            changes += out.path != path
        path = out.path
    return changes / (iterations - burn_in)


def write_pgm(matrix, path: Union[str, Path]) -> Path:
    """Binary PGM (P5); uncoupled entries are black, coupled ones white."""
    matrix = np.asarray(matrix)
    pixels = np.where(matrix != 0, 0, 255).astype(np.uint8)
    rows, cols = pixels.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())
    return path


def matrix_meeting_record(matrix, seed: Optional[int] = None) -> MeetingRecord:
    """Meeting record read off a coupling matrix (row i is iteration i + 1)."""
    matrix = np.asarray(matrix) != 0
    iterations, T = matrix.shape
    met_rows = np.flatnonzero(~matrix.any(axis=1))
    tau = int(met_rows[0]) + 1 if met_rows.size else None
    last_diff = np.zeros(T, dtype=int)
    for t in range(T):
        differing = np.flatnonzero(matrix[:, t])
        if differing.size:
            last_diff[t] = int(differing[-1]) + 1
    return MeetingRecord(tau=tau, tau_per_time=(last_diff + 1).tolist(), seed=seed, iterations_run=iterations)
