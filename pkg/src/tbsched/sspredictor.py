"""Online per-SM, per-kernel runtime predictor with slice-based resampling.

Each (kernel, SM) pair owns a :class:`PredictorState`. The engine (or a trace
replay) drives it through four events: kernel launch, block start, block end
and kernel end. At each block end the predictor re-evaluates::

    pred = active_cycles + round((total_blocks - done_blocks) * t / resident_blocks)

where ``t`` is the duration of the first block to finish after the most recent
slice boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Optional, Sequence

from .core import FERMI, KernelSpec, SMConfig, Trace, max_residency
from .errors import MissingSpec, SlotBusy, UnmatchedEnd

REPLAY_HEADER = ("kernel_id", "sm_id", "mode", "predicted", "actual", "normalized")
SLICE_HEADER = ("kind", "cycle", "kernel_id")
MODES = ("slice-aware", "slice-unaware")

UNSAMPLED = None


@dataclass
class PredictorState:
    active_kernel_cycles: int = 0
    done_blocks: int = 0
    total_blocks: int = 0
    resident_blocks: int = 0
    block_start: dict = field(default_factory=dict)
    t: int = 0
    pred_cycles: int = 0
    reslice: bool = False
    # informational only; the prediction uses done_blocks
    total_blocks_done: int = 0
    slice_aware: bool = True
    live_blocks: int = 0
    live_since: int = 0
    samples: int = 0


class SliceEvent(NamedTuple):
    kind: str  # "kernel_launch" | "kernel_end"
    cycle: int
    kernel_id: str


def _div_round_half_up(num: int, den: int) -> int:
    return (2 * num + den) // (2 * den)


def predict(state: PredictorState) -> int:
    remaining_blocks = max(0, state.total_blocks - state.done_blocks)
    return state.active_kernel_cycles + _div_round_half_up(remaining_blocks * state.t, state.resident_blocks)


def on_launch(state: PredictorState, kernel: KernelSpec, sm: SMConfig) -> None:
    state.resident_blocks = max_residency(kernel, sm)
    state.total_blocks = -(-kernel.total_blocks // sm.num_sms)
    state.reslice = True


def on_kernel_end(states: Iterable[PredictorState]) -> None:
    for s in states:
        s.reslice = True


def tick_active(state: PredictorState, cycles_running: int) -> None:
    state.active_kernel_cycles += cycles_running


def _sync(state: PredictorState, now: int) -> None:
    if state.live_blocks:
        tick_active(state, now - state.live_since)
    state.live_since = now


def on_block_start(state: PredictorState, slot, now: int) -> None:
    if slot in state.block_start:
        raise SlotBusy(f"slot {slot} already holds a running block")
    _sync(state, now)
    state.block_start[slot] = now
    state.live_blocks += 1


def on_block_end(state: PredictorState, slot, now: int) -> int:
    try:
        started = state.block_start.pop(slot)
    except KeyError:
        raise UnmatchedEnd(f"block end on slot {slot} without a start") from None
    _sync(state, now)
    state.live_blocks -= 1
    state.done_blocks += 1
    state.total_blocks_done += 1
    if state.reslice and (state.slice_aware or state.t == 0):
        state.t = now - started
        state.samples += 1
    state.pred_cycles = predict(state)
    state.reslice = False
    return state.pred_cycles


def set_residency(state: PredictorState, residency: int) -> None:
    """Residency changes open a new slice for this kernel."""
    if residency != state.resident_blocks:
        state.resident_blocks = residency
        state.reslice = True


def seed_prediction(state: PredictorState, t: int) -> int:
    """Install a sample ``t`` taken elsewhere as this state's initial prediction."""
    if state.t == 0:
        state.t = t
        state.pred_cycles = predict(state)
    return state.pred_cycles


def active_cycles(state: PredictorState, now: int) -> int:
    extra = now - state.live_since if state.live_blocks else 0
    return state.active_kernel_cycles + extra


def remaining_time(state: PredictorState, now: int):
    """Cycles the kernel still needs on this SM, or ``UNSAMPLED`` before any sample."""
    if state.t == 0:
        return UNSAMPLED
    return max(0, state.pred_cycles - active_cycles(state, now))


# ---------------------------------------------------------------------------
# Trace replay


@dataclass
class ReplayRow:
    kernel_id: str
    invocation: int
    sm_id: int
    mode: str
    predicted: int
    actual: int
    history: list  # (cycle, pred_cycles, samples_so_far, active_cycles) at every block end

    @property
    def normalized(self) -> float:
        return self.predicted / self.actual

    def as_row(self) -> tuple:
        return (self.kernel_id, self.sm_id, self.mode, self.predicted, self.actual, f"{self.normalized:.6f}")


def derive_slice_events(trace: Trace) -> list:
    """Launch/end boundaries implied by a trace: first start and last end of each kernel."""
    first: dict = {}
    last: dict = {}
    for r in trace.records:
        key = (r.kernel_id, r.invocation)
        first[key] = min(first.get(key, r.start_cycle), r.start_cycle)
        last[key] = max(last.get(key, r.end_cycle), r.end_cycle)
    events = [SliceEvent("kernel_launch", c, k[0]) for k, c in first.items()]
    events += [SliceEvent("kernel_end", c, k[0]) for k, c in last.items()]
    return sorted(events, key=lambda e: (e.cycle, e.kind != "kernel_end", e.kernel_id))


def parse_slice_events(data) -> list:
    import csv

    from .errors import ParseError

    if isinstance(data, bytes):
        data = data.decode("utf-8")
    lines = [ln for ln in data.splitlines()]
    if not lines or tuple(h.strip() for h in lines[0].split(",")) != SLICE_HEADER:
        raise ParseError(f"expected header {','.join(SLICE_HEADER)}", line=1)
    out = []
    for i, row in enumerate(csv.reader(lines[1:]), start=2):
        if not row:
            continue
        if len(row) != 3 or row[0] not in ("kernel_launch", "kernel_end"):
            raise ParseError("bad slice event row", line=i)
        try:
            cycle = int(row[1])
        except ValueError:
            raise ParseError("non-integer cycle", line=i) from None
        out.append(SliceEvent(row[0], cycle, row[2].strip()))
    return sorted(out, key=lambda e: (e.cycle, e.kind != "kernel_end", e.kernel_id))


def format_slice_events(events: Sequence[SliceEvent]) -> str:
    lines = [",".join(SLICE_HEADER)]
    lines += [f"{e.kind},{e.cycle},{e.kernel_id}" for e in events]
    return "\n".join(lines) + "\n"


def _replay_mode(trace, slice_events, specs, sm, slice_aware):
    groups = trace.groups()
    span: dict = {}
    for (kid, inv, sm_id), recs in groups.items():
        lo = min(r.start_cycle for r in recs)
        hi = max(r.end_cycle for r in recs)
        a, b = span.get((kid, inv), (lo, hi))
        span[(kid, inv)] = (min(a, lo), max(b, hi))

    # priority at equal cycles: block end, kernel end, launch, instance start, block start
    timeline = []
    for idx, (key, (lo, hi)) in enumerate(sorted(span.items())):
        timeline.append((lo, 3, idx, "instance", key))
    for e in slice_events:
        timeline.append((e.cycle, 1 if e.kind == "kernel_end" else 2, 0, "slice", e))
    for gkey, recs in groups.items():
        for r in recs:
            timeline.append((r.start_cycle, 4, r.block_index, "start", (gkey, r)))
            timeline.append((r.end_cycle, 0, r.block_index, "end", (gkey, r)))
    timeline.sort(key=lambda e: e[:3])

    states: dict = {}
    history: dict = {}
    at_first: dict = {}
    at_last_sample: dict = {}
    for cycle, _, _, what, payload in timeline:
        if what == "instance":
            kid, inv = payload
            spec = specs[kid]
            for (gk, gi, sm_id) in groups:
                if gk == kid and gi == inv:
                    st = PredictorState(slice_aware=slice_aware)
                    on_launch(st, spec, sm)
                    states[(kid, inv, sm_id)] = st
                    history[(kid, inv, sm_id)] = []
        elif what == "slice":
            ev = payload
            for (kid, inv, sm_id), st in states.items():
                lo, hi = span[(kid, inv)]
                if kid != ev.kernel_id and lo <= cycle < hi:
                    st.reslice = True
        elif what == "start":
            gkey, r = payload
            on_block_start(states[gkey], r.block_index, cycle)
        else:
            gkey, r = payload
            st = states[gkey]
            before = st.samples
            pred = on_block_end(st, r.block_index, cycle)
            history[gkey].append((cycle, pred, st.samples, st.active_kernel_cycles))
            if gkey not in at_first:
                at_first[gkey] = pred
            if st.samples != before:
                at_last_sample[gkey] = pred
    return states, history, at_first, at_last_sample


def replay(trace: Trace, slice_events: Optional[Sequence[SliceEvent]], specs: Mapping[str, KernelSpec],
           sm: SMConfig = FERMI, modes: Sequence[str] = MODES) -> list:
    """Run a trace through the predictor and report final-slice accuracy per (kernel, SM).

    ``slice-aware`` reports the prediction made when ``t`` was last resampled
    (the start of the final slice); ``slice-unaware`` samples ``t`` once and
    reports the prediction made at the kernel's first block end on the SM.
    The actual value is the SM's total active cycles for the kernel.
    """
    for kid in trace.kernel_ids():
        if kid not in specs:
            raise MissingSpec(f"no kernel spec for {kid!r}")
    if slice_events is None:
        slice_events = derive_slice_events(trace)
    rows = []
    for mode in modes:
        if mode not in MODES:
            raise ValueError(f"unknown replay mode {mode!r}")
        states, history, at_first, at_last = _replay_mode(trace, slice_events, specs, sm,
                                                          slice_aware=(mode == "slice-aware"))
        for key in sorted(states):
            kid, inv, sm_id = key
            predicted = at_last[key] if mode == "slice-aware" else at_first[key]
            rows.append(ReplayRow(kid, inv, sm_id, mode, predicted,
                                  states[key].active_kernel_cycles, history[key]))
    return rows


def median_abs_log_ratio(rows: Sequence[ReplayRow]) -> float:
    vals = sorted(abs(math.log(r.normalized)) for r in rows)
    if not vals:
        raise ValueError("no rows")
    mid = len(vals) // 2
    return vals[mid] if len(vals) % 2 else 0.5 * (vals[mid - 1] + vals[mid])
