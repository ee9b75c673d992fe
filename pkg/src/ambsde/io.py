"""CSV and JSON report writers.

Floats are written with ``repr`` so that identical runs give identical
bytes; JSON keys are sorted and non-finite floats become ``null``.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .solver import IterationTrace, SolutionField

__all__ = ["write_rows", "write_solution_csv", "write_trace_csv", "write_json", "to_jsonable"]


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v) + 0.0)  # no negative zero
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return v


def write_rows(path: str | Path, header, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


def write_solution_csv(sol: SolutionField, path: str | Path, particles: int | None = None) -> Path:
    """One row per (grid time, particle): time, particle, Y, Z_1..Z_d, K_1..K_m, gamma.

    ``particles`` limits the export to the first few particles; the full
    cloud at 10^4 particles and 10^2 steps is several hundred MB.
    """
    n1, N = sol.Y.shape
    P = N if particles is None else min(int(particles), N)
    d, m = sol.Z.shape[2], sol.K.shape[2]
    header = ["time", "particle", "Y"] + [f"Z_{j + 1}" for j in range(d)] + [f"K_{j + 1}" for j in range(m)] + ["gamma"]
    times = sol.grid.times

    def rows():
        for i in range(n1):
            for p in range(P):
                yield [float(times[i]), p, float(sol.Y[i, p]), *map(float, sol.Z[i, p]),
                       *map(float, sol.K[i, p]), float(sol.gamma[i, p])]

    return write_rows(path, header, rows())


def write_trace_csv(trace: IterationTrace, path: str | Path) -> Path:
    """iteration, beta_norm_diff, ratio (empty ratio on the first row)."""
    rows = []
    for k, v in enumerate(trace.norms):
        ratio = "" if k == 0 else (v / trace.norms[k - 1] if trace.norms[k - 1] > 0 else 0.0)
        rows.append([k + 1, float(v), ratio])
    return write_rows(path, ["iteration", "beta_norm_diff", "ratio"], rows)


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def write_json(obj, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(to_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path
