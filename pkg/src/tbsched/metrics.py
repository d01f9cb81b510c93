"""Multiprogram metrics: STP, ANTT, StrictF and geometric means."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import NonPositive

METRICS_HEADER = ("workload", "policy", "stp", "antt", "strictf")


@dataclass(frozen=True)
class KernelTiming:
    kernel_id: str
    alone_cycles: float
    shared_turnaround_cycles: float

    def __post_init__(self):
        if self.alone_cycles <= 0 or self.shared_turnaround_cycles <= 0:
            raise NonPositive(f"{self.kernel_id}: timings must be positive")

    @property
    def slowdown(self) -> float:
        return self.shared_turnaround_cycles / self.alone_cycles


def _check(timings: Sequence[KernelTiming]) -> None:
    if not timings:
        raise ValueError("need at least one kernel timing")


def stp(timings: Sequence[KernelTiming]) -> float:
    """System throughput: sum of alone / shared."""
    _check(timings)
    return math.fsum(t.alone_cycles / t.shared_turnaround_cycles for t in timings)


def antt(timings: Sequence[KernelTiming]) -> float:
    """Average normalized turnaround time: mean of shared / alone (lower is better)."""
    _check(timings)
    return math.fsum(t.slowdown for t in timings) / len(timings)


def strictf(timings: Sequence[KernelTiming]) -> float:
    """Minimum slowdown over maximum slowdown; 1.0 for a single kernel."""
    _check(timings)
    if len(timings) == 1:
        return 1.0
    s = [t.slowdown for t in timings]
    return min(s) / max(s)


def geomean(values: Iterable[float]) -> float:
    vals = list(values)
    if not vals:
        raise ValueError("geomean of no values")
    for v in vals:
        if not v > 0:
            raise NonPositive(f"geomean needs positive values, got {v!r}")
    return math.exp(math.fsum(math.log(v) for v in vals) / len(vals))


@dataclass(frozen=True)
class MetricsRow:
    workload: str
    policy: str
    stp: float
    antt: float
    strictf: float

    @classmethod
    def from_timings(cls, workload: str, policy: str, timings: Sequence[KernelTiming]) -> "MetricsRow":
        return cls(workload, policy, stp(timings), antt(timings), strictf(timings))

    def as_row(self) -> tuple:
        return (self.workload, self.policy, f"{self.stp:.6f}", f"{self.antt:.6f}", f"{self.strictf:.6f}")


def geomean_rows(rows: Sequence[MetricsRow], label: str = "geomean") -> list:
    """One geomean row per policy, in first-appearance order."""
    by_policy: dict = {}
    for r in rows:
        by_policy.setdefault(r.policy, []).append(r)
    return [MetricsRow(label, p, geomean(r.stp for r in rs), geomean(r.antt for r in rs),
                       geomean(r.strictf for r in rs))
            for p, rs in by_policy.items()]


def format_metrics(rows: Sequence[MetricsRow], with_geomeans: bool = False) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for r in rows:
        w.writerow(r.as_row())
    if with_geomeans:
        for r in geomean_rows(rows):
            w.writerow(r.as_row())
    return buf.getvalue()
