"""Deterministic discrete-event simulation of SMs executing thread blocks.

The engine owns the clock and every SM resource. Policies (see
:mod:`tbsched.policies`) only decide which kernel may issue the next block on
an SM; running blocks are never aborted.

Events at the same cycle are handled in the order block end, kernel arrival,
policy wakeup, and within a kind by (sm, kernel ordinal, slot). After every
batch of same-cycle events the engine issues blocks round-robin over SMs, one
block per SM per pass, until no SM accepts another block.
"""

from __future__ import annotations

import csv
import heapq
import io
import zlib
from dataclasses import dataclass, field
from typing import Optional

from . import sspredictor as ssp
from .core import RESOURCES, BlockRecord, KernelSpec, Trace, WorkloadSpec, max_residency, residency_limits
from .durations import NormalStream, SMContext, resolve_model
from .errors import Deadlock, ZeroResidency

BLOCK_END, KERNEL_ARRIVAL, POLICY_WAKEUP = 0, 1, 2

SUMMARY_HEADER = ("kernel_id", "arrival_cycle", "completion_cycle", "turnaround_cycles")
DECISION_HEADER = ("cycle", "decision", "details")


@dataclass
class ScheduleResult:
    workload: WorkloadSpec
    policy: str
    seed: int
    arrival: dict
    completion: dict
    slice_events: list
    decisions: list
    raw_blocks: list = field(repr=False, default_factory=list)
    source_tag: str = "single-sim"
    _trace: Optional[Trace] = field(default=None, repr=False)

    @property
    def trace(self) -> Trace:
        if self._trace is None:
            ids = [k.kernel_id for k in self.workload.kernels]
            self._trace = Trace.from_records(
                (BlockRecord(ids[k], 0, s, b, st, en) for k, s, b, st, en in self.raw_blocks),
                self.source_tag)
        return self._trace

    def turnaround(self, kernel_id: str) -> int:
        return self.completion[kernel_id] - self.arrival[kernel_id]

    @property
    def makespan(self) -> int:
        return max(self.completion.values())

    def format_summary(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for k in self.workload.kernels:
            kid = k.kernel_id
            w.writerow((kid, self.arrival[kid], self.completion[kid], self.turnaround(kid)))
        return buf.getvalue()

    def format_decisions(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(DECISION_HEADER)
        w.writerows(self.decisions)
        return buf.getvalue()


def emit_slice_events(result: ScheduleResult) -> list:
    return list(result.slice_events)


class Simulator:
    """One simulation run. Policies read the public attributes below."""

    def __init__(self, workload: WorkloadSpec, policy, seed: Optional[int] = None):
        workload = workload.resolved()
        self.workload = workload
        self.seed = workload.seed if seed is None else seed
        self.sm = workload.sm_config
        self.n_sms = self.sm.num_sms
        self.kernels: list = list(workload.kernels)
        self.ids = [k.kernel_id for k in self.kernels]
        self.index = {kid: i for i, kid in enumerate(self.ids)}
        n = len(self.kernels)
        try:
            self.residency = [max_residency(k, self.sm) for k in self.kernels]
        except ZeroResidency as exc:
            raise Deadlock(f"kernel {exc.kernel_id!r} can never be placed: {exc.resource} exhausted",
                           resource=exc.resource) from None
        self.need = [k.footprint(self.sm) for k in self.kernels]
        self.total = [k.total_blocks for k in self.kernels]
        self.arrival_cycle = [k.arrival_cycle for k in self.kernels]
        self.arrived = [False] * n
        self.completed = [False] * n
        self.issued = [0] * n
        self.ended = [0] * n
        self.completion_cycle = [None] * n
        self.resident = [[0] * self.n_sms for _ in range(n)]
        self.sm_resident = [0] * self.n_sms
        self.free = [list(self.sm.capacity) for _ in range(self.n_sms)]
        self._free_slots = [list(range(self.sm.max_blocks_per_sm)) for _ in range(self.n_sms)]
        self.now = 0
        self.decisions: list = []
        self.slice_events: list = []
        self._models = [resolve_model(workload, k) for k in self.kernels]
        self._const = [k.base_block_cycles if m.is_constant() else None
                       for k, m in zip(self.kernels, self._models)]
        self._rng = [NormalStream([self.seed, zlib.crc32(k.kernel_id.encode())]) for k in self.kernels]
        self._heap: list = []
        self._wakeups: dict = {}
        self._seq = 0
        self._blocks: list = []
        self.policy = policy
        self.pstate = None
        if getattr(policy, "uses_predictor", False):
            self.pstate = [[ssp.PredictorState() for _ in range(self.n_sms)] for _ in range(n)]
        policy.attach(self)

    # -- helpers for policies ------------------------------------------------

    def running(self) -> list:
        """Kernels that have arrived and not completed, by ordinal."""
        return [k for k in range(len(self.kernels)) if self.arrived[k] and not self.completed[k]]

    def has_unissued(self, k: int) -> bool:
        return self.arrived[k] and self.issued[k] < self.total[k]

    def log(self, decision: str, details: str = "") -> None:
        self.decisions.append((self.now, decision, details))

    def schedule_wakeup(self, cycle: int, payload=None) -> None:
        self._seq += 1
        self._wakeups[self._seq] = payload
        heapq.heappush(self._heap, (max(cycle, self.now), POLICY_WAKEUP, self._seq, 0, 0, 0, 0))

    def residency_with_reserve(self, k: int, reserve: list) -> int:
        """Blocks of ``k`` fitting on an empty SM after setting aside one block of each kernel in ``reserve``."""
        cap = list(self.sm.capacity)
        for j in reserve:
            for i, x in enumerate(self.need[j]):
                cap[i] -= x
        limits = residency_limits(self.kernels[k], self.sm, cap)
        return min(self.residency[k], min(limits.values()))

    def fits(self, k: int, s: int) -> bool:
        if self.issued[k] >= self.total[k] or self.resident[k][s] >= self.residency[k]:
            return False
        f = self.free[s]
        need = self.need[k]
        return f[0] >= need[0] and f[1] >= need[1] and f[2] >= need[2] and f[3] >= 1 and f[4] >= need[4]

    def rejection(self, k: int, s: int) -> Optional[str]:
        """Name of the resource that stops one more block of ``k`` on SM ``s``."""
        if self.issued[k] >= self.total[k]:
            return "no_unissued_blocks"
        if self.resident[k][s] >= self.residency[k]:
            return "residency"
        for name, have, want in zip(RESOURCES, self.free[s], self.need[k]):
            if have < want:
                return name
        return None

    # -- event handling ------------------------------------------------------

    def _arrive(self, k: int, now: int) -> None:
        self.arrived[k] = True
        self.slice_events.append(ssp.SliceEvent("kernel_launch", now, self.ids[k]))
        if self.pstate is not None:
            for j in self.running():
                if j != k:
                    for st in self.pstate[j]:
                        st.reslice = True
            for st in self.pstate[k]:
                ssp.on_launch(st, self.kernels[k], self.sm)
        self.policy.on_arrival(k, now)

    def _complete(self, k: int, now: int) -> None:
        self.completed[k] = True
        self.completion_cycle[k] = now
        self.slice_events.append(ssp.SliceEvent("kernel_end", now, self.ids[k]))
        if self.pstate is not None:
            for j in self.running():
                ssp.on_kernel_end(self.pstate[j])
        self.policy.on_kernel_end(k, now)

    def _duration(self, k: int, s: int) -> int:
        d = self._const[k]
        if d is not None:
            return d
        used_warps = self.sm.max_warps_per_sm - self.free[s][4]
        own = self.resident[k][s]
        ctx = SMContext(own, used_warps - own * self.need[k][4], self.sm.max_warps_per_sm)
        return self._models[k].sample(self.kernels[k], ctx, self._rng[k])

    def place_block(self, k: int, s: int, now: int):
        """Claim resources for the next block of ``k`` on SM ``s``; returns the slot or a rejection reason."""
        reason = self.rejection(k, s)
        if reason is not None:
            return ("rejected", reason)
        return self._place(k, s, now)

    def _place(self, k: int, s: int, now: int) -> int:
        f = self.free[s]
        need = self.need[k]
        f[0] -= need[0]
        f[1] -= need[1]
        f[2] -= need[2]
        f[3] -= 1
        f[4] -= need[4]
        slot = heapq.heappop(self._free_slots[s])
        self.resident[k][s] += 1
        self.sm_resident[s] += 1
        b = self.issued[k]
        self.issued[k] = b + 1
        d = self._duration(k, s)
        heapq.heappush(self._heap, (now + d, BLOCK_END, s, k, slot, b, now))
        if self.pstate is not None:
            ssp.on_block_start(self.pstate[k][s], slot, now)
        if b + 1 == self.total[k]:
            self.policy.on_fully_dispatched(k, now)
        return slot

    def _block_end(self, ev) -> None:
        now, _, s, k, slot, b, start = ev
        f = self.free[s]
        need = self.need[k]
        f[0] += need[0]
        f[1] += need[1]
        f[2] += need[2]
        f[3] += 1
        f[4] += need[4]
        heapq.heappush(self._free_slots[s], slot)
        self.resident[k][s] -= 1
        self.sm_resident[s] -= 1
        self.ended[k] += 1
        self._blocks.append((k, s, b, start, now))
        if self.pstate is not None:
            ssp.on_block_end(self.pstate[k][s], slot, now)
        self.policy.on_block_end(k, s, now)
        if self.ended[k] == self.total[k]:
            self._complete(k, now)

    def _dispatch(self, now: int) -> None:
        candidates = self.policy.candidates
        free = self.free
        sms = [s for s in range(self.n_sms) if free[s][3] > 0]
        issued, total, residency, resident, need = self.issued, self.total, self.residency, self.resident, self.need
        while sms:
            progressed = []
            for s in sms:
                f = free[s]
                if f[3] == 0:
                    continue
                for k in candidates(s):
                    nk = need[k]
                    if (issued[k] < total[k] and resident[k][s] < residency[k] and f[0] >= nk[0]
                            and f[1] >= nk[1] and f[2] >= nk[2] and f[4] >= nk[4]):
                        self._place(k, s, now)
                        progressed.append(s)
                        break
            sms = progressed

    def run(self) -> ScheduleResult:
        heap = self._heap
        for k, c in enumerate(self.arrival_cycle):
            heapq.heappush(heap, (c, KERNEL_ARRIVAL, k, 0, 0, 0, 0))
        pop = heapq.heappop
        block_end = self._block_end
        while heap:
            now = heap[0][0]
            self.now = now
            while heap and heap[0][0] == now:
                ev = pop(heap)
                kind = ev[1]
                if kind == BLOCK_END:
                    block_end(ev)
                elif kind == KERNEL_ARRIVAL:
                    self._arrive(ev[2], now)
                else:
                    self.policy.on_wakeup(now, self._wakeups.pop(ev[2]))
            self._dispatch(now)

        stuck = [k for k in range(len(self.kernels)) if not self.completed[k]]
        if stuck:
            k = stuck[0]
            reason = self.rejection(k, 0) or "policy_withheld"
            raise Deadlock(f"kernel {self.ids[k]!r} stalled with {self.total[k] - self.ended[k]} blocks "
                           f"unfinished (blocking: {reason})", resource=reason)
        return ScheduleResult(
            workload=self.workload,
            policy=getattr(self.policy, "name", type(self.policy).__name__),
            seed=self.seed,
            arrival={self.ids[k]: c for k, c in enumerate(self.arrival_cycle)},
            completion={self.ids[k]: c for k, c in enumerate(self.completion_cycle)},
            slice_events=sorted(self.slice_events,
                                key=lambda e: (e.cycle, e.kind != "kernel_end", self.index[e.kernel_id])),
            decisions=self.decisions,
            raw_blocks=self._blocks,
            source_tag="single-sim" if len(self.kernels) == 1 else
            ("mpmax" if getattr(self.policy, "name", "") == "mpmax" else "synthetic"),
        )


def run(workload: WorkloadSpec, policy="fifo", seed: Optional[int] = None, **policy_kwargs) -> ScheduleResult:
    """Simulate ``workload`` to completion under ``policy`` (a name or a policy object)."""
    from .policies import make_policy

    if isinstance(policy, str):
        policy = make_policy(policy, **policy_kwargs)
    return Simulator(workload, policy, seed).run()


def solo_workload(workload: WorkloadSpec, kernel: KernelSpec) -> WorkloadSpec:
    from dataclasses import replace

    from .core import ArrivalPolicy

    return replace(workload, kernels=(replace(kernel, arrival_cycle=0),), arrival_policy=ArrivalPolicy())


_SOLO_CACHE: dict = {}


def solo_runtime(workload: WorkloadSpec, kernel: KernelSpec, seed: Optional[int] = None) -> int:
    """Runtime of ``kernel`` alone on the workload's GPU with the same duration model and seed.

    Results are memoized per (GPU, kernel, duration model, seed).
    """
    from dataclasses import replace

    from .durations import model_to_dict

    seed = workload.seed if seed is None else seed
    model = resolve_model(workload, kernel)
    key = (workload.sm_config, replace(kernel, arrival_cycle=0, alone_runtime_hint=None),
           repr(sorted(model_to_dict(model).items())), seed)
    if key not in _SOLO_CACHE:
        result = run(solo_workload(workload, kernel), "fifo", seed)
        _SOLO_CACHE[key] = result.completion[kernel.kernel_id]
    return _SOLO_CACHE[key]
