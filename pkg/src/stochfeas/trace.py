"""Per-iteration convergence traces and their CSV serialization.

Schema: ``iter,elapsed_s,residual,norm_err_db,lambda,extrapolation``.
The dB column is empty when no reference solution was supplied.  Floats are
serialized with 17 significant digits so they round-trip exactly.  Footer
metadata (stop reason, thresholds) is appended as ``#``-prefixed comment
lines, which the reader skips.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import UsageError

CSV_HEADER = ("iter", "elapsed_s", "residual", "norm_err_db", "lambda", "extrapolation")


def format_float(x: float) -> str:
    return format(float(x), ".17g")


@dataclass
class TraceRow:
    iteration: int
    elapsed: float
    residual: float
    norm_err_db: Optional[float]
    lam: float
    extrapolation: float


@dataclass
class ConvergenceTrace:
    """Append-only record of a single run.

    Rows are appended by the owning run only; iterations must be strictly
    increasing and every recorded value finite (a missing dB column is
    allowed, a non-finite one is not).
    """

    rows: list = field(default_factory=list)
    footer: dict = field(default_factory=dict)

    def append(self, iteration, elapsed, residual, norm_err_db, lam, extrapolation):
        if self.rows and iteration <= self.rows[-1].iteration:
            raise UsageError(
                f"trace iterations must increase: {iteration} after {self.rows[-1].iteration}"
            )
        finite = (math.isfinite(elapsed) and math.isfinite(residual)
                  and math.isfinite(lam) and math.isfinite(extrapolation)
                  and (norm_err_db is None or math.isfinite(norm_err_db)))
        if not finite:
            raise UsageError(f"non-finite trace value at iteration {iteration}")
        self.rows.append(
            TraceRow(int(iteration), float(elapsed), float(residual),
                     None if norm_err_db is None else float(norm_err_db),
                     float(lam), float(extrapolation))
        )

    def __len__(self):
        return len(self.rows)

    def iterations(self) -> np.ndarray:
        return np.array([r.iteration for r in self.rows], dtype=np.int64)

    def residuals(self) -> np.ndarray:
        return np.array([r.residual for r in self.rows])

    def db_column(self) -> Optional[np.ndarray]:
        if not self.rows or self.rows[0].norm_err_db is None:
            return None
        return np.array([r.norm_err_db for r in self.rows])

    def lambdas(self) -> np.ndarray:
        return np.array([r.lam for r in self.rows])

    def extrapolations(self) -> np.ndarray:
        return np.array([r.extrapolation for r in self.rows])

    def final_residual(self) -> float:
        if not self.rows:
            raise UsageError("empty trace has no final residual")
        return self.rows[-1].residual

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER)
            for r in self.rows:
                writer.writerow([
                    r.iteration,
                    format_float(r.elapsed),
                    format_float(r.residual),
                    "" if r.norm_err_db is None else format_float(r.norm_err_db),
                    format_float(r.lam),
                    format_float(r.extrapolation),
                ])
            for key in sorted(self.footer):
                fh.write(f"# {key}={self.footer[key]}\n")


def read_trace_csv(path) -> ConvergenceTrace:
    trace = ConvergenceTrace()
    with open(path, newline="") as fh:
        lines = [ln for ln in fh]
    footer = {}
    body = []
    for ln in lines:
        if ln.startswith("#"):
            key, _, val = ln[1:].strip().partition("=")
            footer[key.strip()] = val.strip()
        else:
            body.append(ln)
    reader = csv.reader(body)
    header = tuple(next(reader))
    if header != CSV_HEADER:
        raise UsageError(f"unexpected trace header {header}")
    for row in reader:
        if not row:
            continue
        trace.append(
            int(row[0]), float(row[1]), float(row[2]),
            None if row[3] == "" else float(row[3]),
            float(row[4]), float(row[5]),
        )
    trace.footer = footer
    return trace
