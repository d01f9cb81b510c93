"""Acceptance suite: one test per criterion, named ``test_criterion_NN_*``.

conftest.py turns the outcomes into a ``CRITERION n: PASS/FAIL`` block at the
end of the run.
"""

import filecmp
import random
import subprocess
import sys
import time
from dataclasses import replace

import numpy as np
import pytest

from oracles import (GRID_PARAMS, SOLO_PARAMS, eq2_first_block_ratio, fifo_slowdown_serial, serial_metrics,
                     short_first_partition, staircase, two_slice_trace)
from test_sspredictor import random_trace
from tbsched import sspredictor as ssp
from tbsched.catalog import load_catalog
from tbsched.core import FERMI, BlockRecord, KernelSpec, SMConfig, Trace, WorkloadSpec, max_residency
from tbsched.metrics import KernelTiming, antt, stp, strictf
from tbsched.simengine import run, solo_runtime
from tbsched.sweep import OFFSETS, SweepPlan, alphabetical_pairs, run_sweep

ONE_SM = SMConfig(num_sms=1)
RANKED_POLICIES = ["fifo", "mpmax", "srtf", "srtf-adaptive", "sjf", "ljf"]
OFFSET_POLICIES = ["fifo", "mpmax", "srtf", "srtf-adaptive"]


@pytest.fixture(scope="session")
def constant_sweep():
    start = time.perf_counter()
    res = run_sweep(SweepPlan(RANKED_POLICIES, duration_model="constant", alpha=0.0))
    elapsed = time.perf_counter() - start
    assert not res.failures
    return res, elapsed


def test_criterion_01_staircase_exactness():
    rng = np.random.default_rng(2024)
    cases = [(int(rng.integers(1, 10**4 + 1)), int(rng.integers(1, 9)), int(rng.integers(1, 10**5 + 1)))
             for _ in range(200)]
    start = time.perf_counter()
    for n, r, t in cases:
        k = KernelSpec("A", "A", n, 32, t, residency_override=r)
        assert run(WorkloadSpec(ONE_SM, (k,)), "fifo").completion["A"] == staircase(n, r, t)
    assert time.perf_counter() - start < 5.0


def test_criterion_02_residency_table():
    catalog = load_catalog()
    got = {name: max_residency(spec, FERMI) for name, spec in catalog.items()}
    assert got == {name: v[0] for name, v in GRID_PARAMS.items()}


def test_criterion_03_fifo_slowdown_oracle():
    cat = load_catalog()
    wl = WorkloadSpec(FERMI, (cat["RayTracing"], replace(cat["JPEG-d"], arrival_cycle=50)))
    res = run(wl, "fifo", 0)
    slowdown = res.turnaround("JPEG-d") / solo_runtime(wl, wl.kernels[1], 0)
    expected = fifo_slowdown_serial(SOLO_PARAMS["RayTracing"][0], SOLO_PARAMS["JPEG-d"][0])
    assert expected == pytest.approx(17.76, abs=0.005)
    assert abs(slowdown / 17.76 - 1) <= 0.05


def test_criterion_04_policy_ordering(constant_sweep):
    res, elapsed = constant_sweep
    g = res.geomeans()
    assert g["sjf"].stp >= g["srtf"].stp >= max(g["fifo"].stp, g["mpmax"].stp)
    assert g["sjf"].antt <= g["srtf"].antt <= g["fifo"].antt
    assert g["srtf-adaptive"].strictf >= g["srtf"].strictf >= g["fifo"].strictf
    assert 0.80 <= g["srtf"].stp / g["sjf"].stp <= 1.0
    assert elapsed < 120.0


def test_criterion_05_fifo_order_artefact():
    names = sorted(SOLO_PARAMS)
    runtimes = {n: SOLO_PARAMS[n][0] for n in names}
    res = run_sweep(SweepPlan(["fifo", "sjf", "ljf"], pairs=alphabetical_pairs(names)))
    assert not res.failures
    by = {p: res.by_policy(p) for p in ("fifo", "sjf", "ljf")}
    short_first = 0
    for a, b in alphabetical_pairs(names):
        wl = f"{a}+{b}"
        ref = "sjf" if runtimes[a] < runtimes[b] else "ljf"
        short_first += ref == "sjf"
        assert abs(by["fifo"][wl].stp - by[ref][wl].stp) <= 1e-9, wl
    assert (short_first, 28 - short_first) == short_first_partition(runtimes) == (19, 9)


def test_criterion_06_zero_sampling_uplift(constant_sweep):
    base, _ = constant_sweep
    oracle = run_sweep(SweepPlan(["srtf-oracle"], duration_model="constant", alpha=0.0))
    assert not oracle.failures
    g, o = base.geomeans()["srtf"], oracle.geomeans()["srtf-oracle"]
    assert o.stp >= g.stp
    assert o.antt <= g.antt


def test_criterion_07_offset_trend():
    spread = {}
    for offset in OFFSETS:
        res = run_sweep(SweepPlan(OFFSET_POLICIES, offset=offset, duration_model="jitter"))
        assert not res.failures
        values = [r.stp for r in res.geomeans().values()]
        spread[offset] = max(values) - min(values)
    assert spread[50] <= spread[25] <= spread[0], spread


def test_criterion_08_predictor_properties():
    # (a) first-block prediction on a perfect staircase
    n, r, t = 16, 4, 400
    spec = KernelSpec("A", "A", n, 32, t, residency_override=r)
    recs = [BlockRecord("A", 0, 0, b, (b // r) * t, (b // r + 1) * t) for b in range(n)]
    rows = ssp.replay(Trace.from_records(recs, "synthetic"), None, {"A": spec}, ONE_SM, ("slice-unaware",))
    assert abs(rows[0].normalized - float(eq2_first_block_ratio(n, r))) <= 1e-9
    assert abs(rows[0].normalized - 1.1875) <= 1e-9

    # (b) predictions never fall below elapsed active cycles
    rng = random.Random(8)
    for _ in range(10**4):
        trace, specs, sm = random_trace(rng)
        for row in ssp.replay(trace, None, specs, sm):
            assert all(pred >= active for _, pred, _, active in row.history)

    # (c) slice-aware beats slice-unaware when t changes at a slice boundary
    rng = random.Random(9)
    aware, unaware = [], []
    for _ in range(200):
        r = rng.randint(1, 8)
        waves_before = rng.randint(1, 4)
        n = r * (waves_before + rng.randint(2, 6))
        t1 = rng.randint(50, 5000)
        t2 = round(t1 * rng.uniform(1.3, 2.5))
        recs, boundary = two_slice_trace(n, r, t1, t2, waves_before)
        trace = Trace.from_records([BlockRecord(*x) for x in recs], "synthetic")
        events = [ssp.SliceEvent("kernel_launch", 0, "A"), ssp.SliceEvent("kernel_launch", boundary, "B")]
        spec = KernelSpec("A", "A", n, 32, t1, residency_override=r)
        for row in ssp.replay(trace, events, {"A": spec}, ONE_SM):
            (aware if row.mode == "slice-aware" else unaware).append(row)
    assert ssp.median_abs_log_ratio(aware) <= ssp.median_abs_log_ratio(unaware)


def test_criterion_09_metrics_identities():
    alone = {"A": 100, "B": 300}
    cases = {("A", "B"): (1.75, 7 / 6, 0.75), ("B", "A"): (1.25, 2.5, 0.25)}
    for order, expected in cases.items():
        assert serial_metrics(alone, list(order)) == pytest.approx(expected, abs=1e-9)
        turnaround = {}
        clock = 0
        for k in order:
            clock += alone[k]
            turnaround[k] = clock
        for scale in (1, 10**3):
            t = [KernelTiming(k, alone[k] * scale, turnaround[k] * scale) for k in alone]
            got = (stp(t), antt(t), strictf(t))
            assert all(abs(g - e) <= 1e-9 for g, e in zip(got, expected))


def test_criterion_10_determinism(tmp_path):
    dirs = []
    for i in range(2):
        out = tmp_path / f"run{i}"
        proc = subprocess.run([sys.executable, "-m", "tbsched", "sweep", "--seed", "7", "--out", str(out),
                               "--sweep-id", "s"], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        dirs.append(out / "s")
    files = sorted(p.relative_to(dirs[0]) for p in dirs[0].rglob("*.csv"))
    assert len(files) > 56 * 6 * 3
    assert files == sorted(p.relative_to(dirs[1]) for p in dirs[1].rglob("*.csv"))
    _, mismatch, errors = filecmp.cmpfiles(dirs[0], dirs[1], [str(f) for f in files], shallow=False)
    assert not mismatch and not errors
