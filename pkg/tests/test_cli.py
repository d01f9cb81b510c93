import csv
import io
from pathlib import Path

import pytest

from tbsched.cli import main

ROOT = Path(__file__).resolve().parent.parent
HEADER = "kernel_id,invocation,sm_id,block_index,start_cycle,end_cycle\n"


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def staircase_trace(n, r, t, kid="SAD"):
    return HEADER + "".join(f"{kid},0,0,{b},{(b // r) * t},{(b // r + 1) * t}\n" for b in range(n))


def test_analyze_trace_synthetic_staircase(tmp_path, capsys):
    trace = write(tmp_path, "t.csv", staircase_trace(20, 8, 1000))
    assert main(["analyze-trace", trace]) == 0
    out = rows(capsys.readouterr().out)
    stair = [r for r in out if r["method"] == "staircase"]
    assert [float(r["normalized"]) for r in stair] == [1.0]


def test_analyze_trace_malformed(tmp_path, capsys):
    trace = write(tmp_path, "bad.csv", HEADER + "SAD,0,0,0,10\n")
    assert main(["analyze-trace", trace]) == 2
    assert "line 2" in capsys.readouterr().err


def test_analyze_trace_summary(tmp_path, capsys):
    out = tmp_path / "sim"
    assert main(["simulate", str(ROOT / "configs" / "raytracing_jpegd.yaml"), "--policy", "mpmax",
                 "--out", str(out), "--duration-model", "jitter"]) == 0
    capsys.readouterr()
    summary = tmp_path / "summary.csv"
    assert main(["analyze-trace", str(out / "trace.csv"), "--summary", str(summary),
                 "--out", str(tmp_path / "pred.csv")]) == 0
    got = rows(summary.read_text())
    assert {r["kernel_id"] for r in got} == {"RayTracing", "JPEG-d"}
    for r in got:
        assert float(r["min"]) <= float(r["median"]) <= float(r["max"])


def test_missing_file_is_input_error(capsys):
    assert main(["analyze-trace", "/nonexistent/trace.csv"]) == 2


def test_predict_replay_modes(tmp_path, capsys):
    trace = write(tmp_path, "t.csv", staircase_trace(16, 4, 400))
    assert main(["predict-replay", trace]) == 0
    out = rows(capsys.readouterr().out)
    assert {r["mode"] for r in out} == {"slice-aware", "slice-unaware"}
    assert len({r["predicted"] for r in out}) == 1  # single slice: modes agree


def test_predict_replay_empty_trace(tmp_path, capsys):
    assert main(["predict-replay", write(tmp_path, "e.csv", HEADER)]) == 2


def test_predict_replay_with_slices(tmp_path, capsys):
    trace = write(tmp_path, "t.csv", staircase_trace(16, 4, 400))
    slices = write(tmp_path, "s.csv", "kind,cycle,kernel_id\nkernel_launch,0,SAD\nkernel_launch,800,X\n")
    assert main(["predict-replay", trace, "--slices", slices]) == 0


def test_simulate_fifo_equals_sjf_on_short_first(tmp_path, capsys):
    cfg = write(tmp_path, "w.yaml", "schema_version: 1\nkernels:\n  - {catalog: JPEG-d}\n"
                                    "  - {catalog: AES-d, arrival_cycle: 40}\n")
    metrics = {}
    for policy in ("fifo", "sjf"):
        assert main(["simulate", cfg, "--policy", policy, "--out", str(tmp_path / policy)]) == 0
        capsys.readouterr()
        metrics[policy] = rows((tmp_path / policy / "metrics.csv").read_text())[0]["stp"]
    assert metrics["fifo"] == metrics["sjf"]
    files = {p.name for p in (tmp_path / "fifo").iterdir()}
    assert files == {"trace.csv", "summary.csv", "decisions.csv", "slices.csv", "metrics.csv"}


def test_simulate_srtf_jpeg_slowdown(capsys):
    assert main(["simulate", str(ROOT / "configs" / "raytracing_jpegd.yaml"), "--policy", "srtf"]) == 0
    out = capsys.readouterr().out
    slow = {line.split(",")[0]: float(line.split(",")[2]) for line in out.splitlines()
            if line.startswith("JPEG-d,") and line.count(",") == 2}
    assert slow["JPEG-d"] == pytest.approx(2.0, rel=0.25)


def test_simulate_config_error(tmp_path, capsys):
    cfg = write(tmp_path, "w.yaml", "schema_version: 9\nkernels: []\n")
    assert main(["simulate", cfg]) == 2
    assert "schema_version" in capsys.readouterr().err


def test_simulate_deadlock_exit_code(tmp_path, capsys):
    cfg = write(tmp_path, "w.yaml", "schema_version: 1\nkernels:\n"
                                    "  - {kernel_id: A, total_blocks: 2, threads_per_block: 256,"
                                    " base_block_cycles: 10, regs_per_thread: 255}\n")
    assert main(["simulate", cfg]) == 1
    assert "registers" in capsys.readouterr().err


def test_sweep_alphabetical_small(tmp_path, capsys):
    args = ["sweep", "--pairs", "alphabetical", "--policy", "fifo", "--policy", "sjf", "--policy", "ljf",
            "--out", str(tmp_path), "--sweep-id", "s", "--no-traces"]
    assert main(args) == 0
    geo = {r["policy"]: float(r["stp"]) for r in rows(capsys.readouterr().out)}
    assert geo["ljf"] <= geo["fifo"] <= geo["sjf"]
    assert not list((tmp_path / "s").glob("*/*/trace.csv"))


def test_bad_policy_name_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["sweep", "--policy", "nope"])
    assert exc.value.code == 2
