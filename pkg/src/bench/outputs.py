"""
Output Files

Tabular results are written as CSV (every row carries the schema version and
the root seed), single-run summaries as JSON. Rows are written in the order
they are given, so callers control determinism by ordering their results.
"""
import csv
import json
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np

from src.models.data_models import CostRecord, MeetingRecord, TraceRow

SCHEMA_VERSION = 1

MEETING_COLUMNS = ["schema_version", "seed", "strategy", "N", "T", "replicate", "tau", "wall_nanos", "completed"]
COST_COLUMNS = ["schema_version", "seed", "strategy", "N", "T", "mean_tau", "cost_factor", "completed"]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_rows(path: Union[str, Path], header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


class MeetingRow:
    """One replicate of a benchmark cell."""
    __slots__ = ("strategy", "N", "T", "replicate", "record", "completed")

    def __init__(self, strategy: str, N: int, T: int, replicate: int, record: MeetingRecord, completed: bool):
        self.strategy, self.N, self.T = strategy, N, T
        self.replicate, self.record, self.completed = replicate, record, completed


def write_meeting_csv(path, seed: int, rows: List[MeetingRow]) -> Path:
    return _write_rows(path, MEETING_COLUMNS, (
        [SCHEMA_VERSION, seed, r.strategy, r.N, r.T, r.replicate, r.record.tau, r.record.wall_nanos, r.completed]
        for r in rows
    ))


def write_cost_csv(path, seed: int, records: List[CostRecord]) -> Path:
    return _write_rows(path, COST_COLUMNS, (
        [SCHEMA_VERSION, seed, c.strategy.value, c.N, c.T, c.mean_tau, c.cost_factor, c.completed]
        for c in records
    ))


def write_trace_csv(path, seed: int, names: Sequence[str], trace: List[TraceRow]) -> Path:
    header = (["schema_version", "seed", "iteration", "wall_seconds"]
              + [f"raw_{n}" for n in names] + list(names) + ["grad_norm", "meeting_tau"])
    return _write_rows(path, header, (
        [SCHEMA_VERSION, seed, row.iteration, row.wall_seconds, *row.raw, *row.constrained,
         row.grad_norm, row.meeting_tau]
        for row in trace
    ))


def write_matrix_csv(path, matrix) -> Path:
    matrix = np.asarray(matrix)
    header = [f"t{t}" for t in range(matrix.shape[1])]
    return _write_rows(path, header, (row.tolist() for row in matrix))


def write_marginals_csv(path, seed: int, means, variances, extra: Optional[dict] = None) -> Path:
    """Per-time summaries (t, mean, variance, plus optional extra columns)."""
    extra = extra or {}
    header = ["schema_version", "seed", "t", "mean", "variance"] + list(extra)
    return _write_rows(path, header, (
        [SCHEMA_VERSION, seed, t, float(means[t]), float(variances[t])] + [float(col[t]) for col in extra.values()]
        for t in range(len(means))
    ))


def write_paths_csv(path, seed: int, paths) -> Path:
    paths = np.asarray(paths)
    header = ["schema_version", "seed", "sample"] + [f"t{t}" for t in range(paths.shape[1])]
    return _write_rows(path, header, (
        [SCHEMA_VERSION, seed, i] + [float(v) for v in p] for i, p in enumerate(paths)
    ))


def to_json(payload: dict) -> str:
    """Stable JSON (sorted keys, fixed indentation)."""
    return json.dumps(payload, indent=2, sort_keys=True, default=_json_default)


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if hasattr(obj, "model_dump"):
        return obj.model_dump(mode="json")
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def write_json(path, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(to_json(payload) + "\n", encoding="utf-8")
    return path
