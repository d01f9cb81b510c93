import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import eq2_first_block_ratio, two_slice_trace
from tbsched import sspredictor as ssp
from tbsched.core import BlockRecord, KernelSpec, SMConfig, Trace
from tbsched.errors import MissingSpec, SlotBusy, UnmatchedEnd

ONE_SM = SMConfig(num_sms=1)


def spec(r, n=1, kid="A"):
    return KernelSpec(kid, kid, n, 64, 100, residency_override=r)


def launched(n=16, r=4, sm=ONE_SM):
    state = ssp.PredictorState()
    ssp.on_launch(state, spec(r, n), sm)
    return state


def test_launch_sets_per_sm_totals():
    state = launched(n=100, r=4, sm=SMConfig(num_sms=15))
    assert state.total_blocks == 7 and state.resident_blocks == 4 and state.reslice


def test_first_block_prediction():
    state = launched()
    for slot in range(4):
        ssp.on_block_start(state, slot, 0)
    pred = ssp.on_block_end(state, 0, 100)
    # 100 + 15 * 100 / 4 = 475
    assert pred == 475
    assert pred / 400 == pytest.approx(float(eq2_first_block_ratio(16, 4)), abs=1e-9)


def test_active_cycles_only_count_when_blocks_run():
    state = launched()
    ssp.on_block_start(state, 0, 10)
    ssp.on_block_end(state, 0, 30)
    ssp.on_block_start(state, 0, 50)
    assert ssp.active_cycles(state, 60) == 30


def test_slot_errors():
    state = launched()
    ssp.on_block_start(state, 0, 0)
    with pytest.raises(SlotBusy):
        ssp.on_block_start(state, 0, 1)
    with pytest.raises(UnmatchedEnd):
        ssp.on_block_end(state, 5, 2)


def test_resample_only_after_slice():
    state = launched()
    ssp.on_block_start(state, 0, 0)
    ssp.on_block_end(state, 0, 100)
    ssp.on_block_start(state, 0, 100)
    ssp.on_block_end(state, 0, 300)
    assert state.t == 100
    ssp.on_kernel_end([state])
    ssp.on_block_start(state, 0, 300)
    ssp.on_block_end(state, 0, 350)
    assert state.t == 50 and state.samples == 2


def test_slice_unaware_keeps_first_sample():
    state = launched()
    state.slice_aware = False
    ssp.on_block_start(state, 0, 0)
    ssp.on_block_end(state, 0, 100)
    ssp.on_kernel_end([state])
    ssp.on_block_start(state, 0, 100)
    ssp.on_block_end(state, 0, 150)
    assert state.t == 100


def test_remaining_time_unsampled_then_seeded():
    state = launched()
    assert ssp.remaining_time(state, 0) is ssp.UNSAMPLED
    ssp.seed_prediction(state, 80)
    assert ssp.remaining_time(state, 0) == 320


def test_set_residency_triggers_reslice():
    state = launched()
    state.reslice = False
    ssp.set_residency(state, 3)
    assert state.resident_blocks == 3 and state.reslice


def perfect(n, r, t):
    return Trace.from_records([BlockRecord("A", 0, 0, b, (b // r) * t, (b // r + 1) * t) for b in range(n)],
                              "synthetic")


def test_replay_perfect_staircase_first_block():
    rows = ssp.replay(perfect(16, 4, 400), None, {"A": spec(4, 16)}, ONE_SM)
    by_mode = {r.mode: r for r in rows}
    assert by_mode["slice-unaware"].normalized == pytest.approx(1.1875, abs=1e-9)
    # a single slice: both modes agree
    assert by_mode["slice-aware"].predicted == by_mode["slice-unaware"].predicted


def test_replay_missing_spec():
    with pytest.raises(MissingSpec):
        ssp.replay(perfect(2, 1, 10), None, {}, ONE_SM)


def test_derived_slice_events():
    recs = [BlockRecord("A", 0, 0, 0, 0, 10), BlockRecord("B", 0, 0, 0, 5, 20)]
    ev = ssp.derive_slice_events(Trace.from_records(recs, "synthetic"))
    assert [(e.kind, e.cycle, e.kernel_id) for e in ev] == [
        ("kernel_launch", 0, "A"), ("kernel_launch", 5, "B"), ("kernel_end", 10, "A"), ("kernel_end", 20, "B")]


def test_slice_event_roundtrip():
    ev = [ssp.SliceEvent("kernel_launch", 0, "A"), ssp.SliceEvent("kernel_end", 9, "A")]
    assert ssp.parse_slice_events(ssp.format_slice_events(ev)) == ev


def test_two_slice_trace_aware_is_exact_on_last_slice():
    recs, boundary = two_slice_trace(24, 4, 100, 200, 2)
    trace = Trace.from_records([BlockRecord(*r) for r in recs], "synthetic")
    events = [ssp.SliceEvent("kernel_launch", 0, "A"), ssp.SliceEvent("kernel_launch", boundary, "B")]
    rows = {r.mode: r for r in ssp.replay(trace, events, {"A": spec(4, 24)}, ONE_SM)}
    assert rows["slice-aware"].history[-1][2] == 2
    assert abs(math.log(rows["slice-aware"].normalized)) < abs(math.log(rows["slice-unaware"].normalized))


def random_trace(rng):
    """Random but well-formed trace: per (kernel, SM) blocks never share a slot concurrently."""
    recs = []
    specs = {}
    n_sms = rng.randint(1, 3)
    for k in range(rng.randint(1, 3)):
        kid = f"K{k}"
        r = rng.randint(1, 8)
        n = rng.randint(1, 20)
        specs[kid] = KernelSpec(kid, kid, n, 32, 10, residency_override=r)
        origin = rng.randint(0, 500)
        for b in range(n):
            start = origin + rng.randint(0, 300)
            recs.append(BlockRecord(kid, 0, rng.randrange(n_sms), b, start, start + rng.randint(1, 200)))
    return Trace.from_records(recs, "synthetic"), specs, SMConfig(num_sms=n_sms)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_prediction_never_below_active(seed):
    trace, specs, sm = random_trace(random.Random(seed))
    for row in ssp.replay(trace, None, specs, sm):
        for _, pred, _, active in row.history:
            assert pred >= active
