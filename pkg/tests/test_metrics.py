import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import serial_metrics
from tbsched.errors import NonPositive
from tbsched.metrics import (KernelTiming, MetricsRow, antt, format_metrics, geomean, geomean_rows, stp,
                             strictf)

ALONE = {"A": 100, "B": 300}


def timings(turnaround):
    return [KernelTiming(k, ALONE[k], turnaround[k]) for k in ALONE]


SJF = timings({"A": 100, "B": 400})
LJF = timings({"A": 400, "B": 300})


def test_hand_computed_sjf():
    assert stp(SJF) == pytest.approx(1.75, abs=1e-9)
    assert antt(SJF) == pytest.approx(7 / 6, abs=1e-9)
    assert strictf(SJF) == pytest.approx(0.75, abs=1e-9)


def test_hand_computed_ljf():
    assert stp(LJF) == pytest.approx(1.25, abs=1e-9)
    assert antt(LJF) == pytest.approx(2.5, abs=1e-9)
    assert strictf(LJF) == pytest.approx(0.25, abs=1e-9)


def test_serial_oracle_agrees():
    assert (stp(SJF), antt(SJF), strictf(SJF)) == pytest.approx(serial_metrics(ALONE, ["A", "B"]))
    assert (stp(LJF), antt(LJF), strictf(LJF)) == pytest.approx(serial_metrics(ALONE, ["B", "A"]))


def test_single_kernel_identity():
    t = [KernelTiming("A", 50, 50)]
    assert (stp(t), antt(t), strictf(t)) == (1.0, 1.0, 1.0)


def test_geomean_examples():
    assert geomean([2, 8]) == pytest.approx(4.0)
    assert geomean([3.5]) == pytest.approx(3.5)
    assert geomean([1.35, 1.82]) == pytest.approx(1.5674, abs=1e-4)


@pytest.mark.parametrize("values", [[1.0, 0.0], [-1.0], [float("nan")]])
def test_geomean_rejects_nonpositive(values):
    with pytest.raises(NonPositive):
        geomean(values)


def test_timing_must_be_positive():
    with pytest.raises(NonPositive):
        KernelTiming("A", 0, 5)


pos = st.floats(1.0, 1e6, allow_nan=False)


@given(st.lists(st.tuples(pos, pos), min_size=1, max_size=6), st.floats(1e-3, 1e3))
def test_scale_invariance(pairs, c):
    base = [KernelTiming(str(i), a, s) for i, (a, s) in enumerate(pairs)]
    scaled = [KernelTiming(t.kernel_id, t.alone_cycles * c, t.shared_turnaround_cycles * c) for t in base]
    for f in (stp, antt, strictf):
        assert f(scaled) == pytest.approx(f(base), rel=1e-9)


@given(pos, pos, pos, pos)
def test_two_kernel_strictf_bounds(a1, s1, a2, s2):
    t = [KernelTiming("A", a1, s1), KernelTiming("B", a2, s2)]
    f = strictf(t)
    assert 0 < f <= 1 + 1e-12
    if math.isclose(s1 / a1, s2 / a2, rel_tol=0, abs_tol=0):
        assert f == 1.0


@given(st.integers(1, 8), st.floats(0.5, 20))
def test_equal_slowdowns_identity(n, s):
    t = [KernelTiming(str(i), 100.0 * (i + 1), 100.0 * (i + 1) * s) for i in range(n)]
    assert stp(t) == pytest.approx(n / s)
    assert antt(t) == pytest.approx(s)
    assert strictf(t) == pytest.approx(1.0)


def test_csv_with_geomeans():
    rows = [MetricsRow("w1", "fifo", 2.0, 1.0, 0.5), MetricsRow("w2", "fifo", 8.0, 4.0, 0.5)]
    text = format_metrics(rows, with_geomeans=True)
    lines = text.splitlines()
    assert lines[0] == "workload,policy,stp,antt,strictf"
    assert lines[-1] == "geomean,fifo,4.000000,2.000000,0.500000"
    assert geomean_rows(rows)[0].stp == pytest.approx(4.0)
