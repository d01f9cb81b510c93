"""Thread-block scheduling simulator for concurrent GPU kernels."""

from .core import FERMI, KernelSpec, SMConfig, Trace, WorkloadSpec, load_workload, max_residency
from .simengine import ScheduleResult, run, solo_runtime

__version__ = "0.1.0"

__all__ = [
    "FERMI", "KernelSpec", "SMConfig", "Trace", "WorkloadSpec", "load_workload", "max_residency",
    "ScheduleResult", "run", "solo_runtime",
]
