"""Offline staircase-model and least-squares runtime predictions over traces."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Optional, Sequence

from .core import FERMI, KernelSpec, SMConfig, Trace, max_residency
from .errors import DegenerateFit, MissingSpec

PREDICTION_HEADER = ("kernel_id", "invocation", "sm_id", "method", "predicted", "actual", "normalized")


def staircase_predict(n_blocks: int, residency: int, t: int) -> int:
    """Runtime of ``n_blocks`` on one SM in waves of ``residency`` blocks of ``t`` cycles."""
    if n_blocks < 1 or residency < 1 or t < 1:
        raise ValueError("n_blocks, residency and t must all be >= 1")
    return -(-n_blocks // residency) * t


@dataclass(frozen=True)
class SMExecutionProfile:
    """One kernel's blocks on one SM; times are relative to the SM's first block start."""

    kernel_id: str
    sm_id: int
    block_durations: tuple
    end_times: tuple
    residency: int

    @property
    def n_blocks(self) -> int:
        return len(self.end_times)

    @classmethod
    def from_records(cls, records, residency: int) -> "SMExecutionProfile":
        recs = sorted(records, key=lambda r: (r.end_cycle, r.start_cycle, r.block_index))
        origin = min(r.start_cycle for r in recs)
        return cls(recs[0].kernel_id, recs[0].sm_id,
                   tuple(r.end_cycle - r.start_cycle for r in recs),
                   tuple(r.end_cycle - origin for r in recs), residency)


@dataclass(frozen=True)
class PredictionRecord:
    kernel_id: str
    sm_id: int
    method: str
    predicted_cycles: float
    actual_cycles: int
    invocation: int = 0

    @property
    def normalized(self) -> float:
        return self.predicted_cycles / self.actual_cycles

    def as_row(self) -> tuple:
        return (self.kernel_id, self.invocation, self.sm_id, self.method,
                _fmt(self.predicted_cycles), self.actual_cycles, f"{self.normalized:.6f}")


def _fmt(x) -> str:
    if float(x).is_integer():
        return str(int(x))
    return f"{x:.3f}"


def linear_fit_predict(profile: SMExecutionProfile, first_blocks: Optional[int] = None):
    """OLS fit of end time against finish rank; returns (slope, intercept, predicted_total).

    ``first_blocks`` restricts the fit to the earliest-finishing blocks while
    still extrapolating to the last rank.
    """
    ys = profile.end_times if first_blocks is None else profile.end_times[:first_blocks]
    n = len(ys)
    if n < 2:
        raise DegenerateFit(f"need at least 2 ranks to fit, got {n}")
    # exact integer sums; ranks are 1..n
    sx = n * (n + 1) // 2
    sxx = n * (n + 1) * (2 * n + 1) // 6
    sy = sum(ys)
    sxy = sum((i + 1) * y for i, y in enumerate(ys))
    denom = n * sxx - sx * sx
    slope = Fraction(n * sxy - sx * sy, denom)
    intercept = Fraction(sy, n) - slope * Fraction(sx, n)
    total = intercept + slope * profile.n_blocks
    return float(slope), float(intercept), float(total)


def analyze_trace(trace: Trace, specs: Mapping[str, KernelSpec], sm: SMConfig = FERMI,
                  linear_first_blocks: Optional[int] = None) -> list:
    """Staircase and linear-fit predictions for every (kernel, invocation, SM) in a trace.

    The staircase ``t`` is the duration of the first block to finish on the SM;
    the actual runtime is last end minus first start on that SM. Groups with a
    single block get no linear-fit record.
    """
    out = []
    for (kid, inv, sm_id), recs in sorted(trace.groups().items()):
        if kid not in specs:
            raise MissingSpec(f"no kernel spec for {kid!r}")
        residency = max_residency(specs[kid], sm)
        profile = SMExecutionProfile.from_records(recs, residency)
        actual = profile.end_times[-1]
        t = profile.block_durations[0]
        out.append(PredictionRecord(kid, sm_id, "staircase",
                                    staircase_predict(profile.n_blocks, residency, t), actual, inv))
        if profile.n_blocks >= 2:
            _, _, total = linear_fit_predict(profile, linear_first_blocks)
            out.append(PredictionRecord(kid, sm_id, "linear_fit", total, actual, inv))
    return out


def duration_stats(trace: Trace) -> dict:
    """Per-kernel population mean block duration and %RSD."""
    durations: dict = {}
    for r in trace.records:
        durations.setdefault(r.kernel_id, []).append(r.end_cycle - r.start_cycle)
    stats = {}
    for kid, ds in sorted(durations.items()):
        mean = sum(ds) / len(ds)
        var = sum((d - mean) ** 2 for d in ds) / len(ds)
        stats[kid] = (mean, 100.0 * math.sqrt(var) / mean)
    return stats


def summarize_ratios(records: Sequence[PredictionRecord]) -> list:
    """(kernel_id, method, n, min, q1, median, q3, max) of normalized predictions."""
    import numpy as np

    groups: dict = {}
    for r in records:
        groups.setdefault((r.kernel_id, r.method), []).append(r.normalized)
    rows = []
    for (kid, method), vals in sorted(groups.items()):
        q = np.quantile(np.asarray(vals), [0.0, 0.25, 0.5, 0.75, 1.0])
        rows.append((kid, method, len(vals), *(float(v) for v in q)))
    return rows
