"""Two-kernel workload sweeps over the shipped benchmark catalog."""

from __future__ import annotations

import csv
import io
import itertools
import math
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .catalog import load_catalog
from .core import FERMI, ArrivalPolicy, KernelSpec, SMConfig, WorkloadSpec, format_trace
from .durations import InterferenceModel, JitterModel
from .metrics import KernelTiming, MetricsRow, format_metrics, geomean_rows
from .policies import make_policy
from .simengine import ScheduleResult, run, solo_runtime

OFFSETS = (0, 25, 50)
STAGGER_MAX = 100
DURATION_MODELS = ("constant", "jitter", "interference")

# sweep labels that map onto a policy plus options
VARIANTS = {
    "srtf-oracle": ("srtf", {"oracle_runtimes": True}),
    "srtf-adaptive-oracle": ("srtf-adaptive", {"oracle_runtimes": True}),
}


def ordered_pairs(names: Sequence[str]) -> list:
    """All ordered pairs of distinct names (56 for 8 kernels)."""
    return list(itertools.permutations(names, 2))


def alphabetical_pairs(names: Sequence[str]) -> list:
    """Unordered pairs, each listed with the alphabetically first name arriving first (28 for 8)."""
    return list(itertools.combinations(sorted(names), 2))


def stagger_cycles(seed: int, workload_name: str) -> int:
    """Arrival gap in [0, STAGGER_MAX] drawn from the seed and the workload name."""
    rng = np.random.default_rng([seed, zlib.crc32(workload_name.encode())])
    return int(rng.integers(0, STAGGER_MAX + 1))


def apply_duration_model(kernels, model: str, alpha: float):
    """Point every kernel at ``model`` and return (kernels, duration_models)."""
    if model not in DURATION_MODELS:
        raise ValueError(f"unknown duration model {model!r}")
    models = {}
    if model == "interference":
        models["interference"] = InterferenceModel(alpha)
    elif model == "jitter":
        models["jitter"] = JitterModel()
    return tuple(replace(k, duration_model_ref=model) for k in kernels), models


def pair_workload(first: KernelSpec, second: KernelSpec, offset: int, seed: int,
                  duration_model: str = "constant", alpha: float = 0.75,
                  sm: SMConfig = FERMI) -> WorkloadSpec:
    """Two-kernel workload; the second kernel arrives after a stagger plus a fraction of the first's solo runtime."""
    if offset not in OFFSETS:
        raise ValueError(f"offset must be one of {OFFSETS}")
    kernels, models = apply_duration_model((first, second), duration_model, alpha)
    first, second = kernels
    base = WorkloadSpec(sm, (replace(first, arrival_cycle=0), second), ArrivalPolicy(), seed, models)
    # the stagger also applies on top of fractional offsets so arrivals never sit
    # exactly on a block-wave boundary of the first kernel
    gap = stagger_cycles(seed, base.name)
    if offset:
        gap += math.floor(offset / 100 * solo_runtime(base, base.kernels[0], seed))
    return replace(base, kernels=(base.kernels[0], replace(second, arrival_cycle=gap)))


def timings(result: ScheduleResult) -> list:
    wl = result.workload
    return [KernelTiming(k.kernel_id, solo_runtime(wl, k, result.seed), result.turnaround(k.kernel_id))
            for k in wl.kernels]


def build_policy(label: str, **options):
    name, extra = VARIANTS.get(label, (label, {}))
    return make_policy(name, **{**options, **extra})


@dataclass
class Cell:
    workload: WorkloadSpec
    policy: str
    result: ScheduleResult
    metrics: MetricsRow


@dataclass
class SweepPlan:
    policies: Sequence[str]
    offset: int = 0
    seed: int = 0
    pairs: Optional[Sequence[tuple]] = None  # default: all ordered pairs
    duration_model: str = "constant"
    alpha: float = 0.75
    t_source: str = "calibrated"
    policy_options: dict = field(default_factory=dict)

    def workloads(self) -> list:
        catalog = load_catalog(self.t_source)
        pairs = self.pairs if self.pairs is not None else ordered_pairs(list(catalog))
        return [pair_workload(catalog[a], catalog[b], self.offset, self.seed, self.duration_model, self.alpha)
                for a, b in pairs]


@dataclass
class SweepResult:
    plan: SweepPlan
    cells: list
    failures: list  # (workload, policy, message)

    @property
    def rows(self) -> list:
        return [c.metrics for c in self.cells]

    def geomeans(self) -> dict:
        return {r.policy: r for r in geomean_rows(self.rows)}

    def by_policy(self, policy: str) -> dict:
        return {c.metrics.workload: c.metrics for c in self.cells if c.policy == policy}


def run_cell(workload: WorkloadSpec, label: str, seed: int, **options) -> Cell:
    result = run(workload, build_policy(label, **options), seed)
    result.policy = label
    return Cell(workload, label, result, MetricsRow.from_timings(workload.name, label, timings(result)))


def run_sweep(plan: SweepPlan) -> SweepResult:
    from .errors import TbschedError

    cells, failures = [], []
    for wl in plan.workloads():
        for label in plan.policies:
            try:
                cells.append(run_cell(wl, label, plan.seed, **plan.policy_options))
            except TbschedError as exc:
                failures.append((wl.name, label, str(exc)))
    return SweepResult(plan, cells, failures)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def write_cell(cell: Cell, root: Path, traces: bool = True) -> None:
    d = root / cell.workload.name / cell.policy
    if traces:
        _write(d / "trace.csv", format_trace(cell.result.trace))
    _write(d / "summary.csv", cell.result.format_summary())
    _write(d / "decisions.csv", cell.result.format_decisions())
    _write(d / "metrics.csv", format_metrics([cell.metrics]))


def write_sweep(result: SweepResult, root: Path, traces: bool = True) -> None:
    """Write ``<root>/<workload>/<policy>/*`` plus suite-level metrics.csv and geomeans.csv."""
    root = Path(root)
    for cell in result.cells:
        write_cell(cell, root, traces)
    _write(root / "metrics.csv", format_metrics(result.rows, with_geomeans=True))
    _write(root / "geomeans.csv", format_metrics(geomean_rows(result.rows)) if result.rows else "")
    if result.failures:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("workload", "policy", "error"))
        w.writerows(result.failures)
        _write(root / "failures.csv", buf.getvalue())
