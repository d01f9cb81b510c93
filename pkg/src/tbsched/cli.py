"""Command-line interface: ``tbsched <subcommand> ...``.

Exit codes: 0 success, 1 simulation failure, 2 input error.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .catalog import T_SOURCES, load_catalog
from .core import FERMI, ArrivalPolicy, SMConfig, format_trace, load_workload, parse_trace
from .errors import Deadlock, TbschedError
from .metrics import format_metrics
from .policies import POLICY_NAMES
from .sspredictor import REPLAY_HEADER, format_slice_events, parse_slice_events, replay
from .staircase import PREDICTION_HEADER, analyze_trace, summarize_ratios
from .sweep import (DURATION_MODELS, OFFSETS, VARIANTS, SweepPlan, alphabetical_pairs, apply_duration_model,
                    build_policy, run_sweep, timings, write_sweep)

EXIT_OK, EXIT_SIM, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    pass


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror or exc}") from None


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _emit(text: str, out) -> None:
    if out:
        p = Path(out)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _specs(args):
    """Kernel specs and SM config from ``--workload`` or the shipped catalog."""
    if getattr(args, "workload", None):
        wl = load_workload(_read(args.workload))
        return {k.kernel_id: k for k in wl.kernels}, wl.sm_config
    return load_catalog(args.t_source), FERMI


def _load_trace(args, sm: SMConfig):
    trace = parse_trace(_read(args.trace), num_sms=sm.num_sms)
    if len(trace) == 0:
        raise InputError(f"{args.trace}: trace has no block records")
    return trace


def cmd_analyze_trace(args) -> int:
    specs, sm = _specs(args)
    trace = _load_trace(args, sm)
    records = analyze_trace(trace, specs, sm, args.linear_first_blocks)
    _emit(_csv(PREDICTION_HEADER, [r.as_row() for r in records]), args.out)
    if args.summary:
        rows = [(k, m, n, *(f"{v:.6f}" for v in q)) for k, m, n, *q in summarize_ratios(records)]
        _emit(_csv(("kernel_id", "method", "n", "min", "q1", "median", "q3", "max"), rows), args.summary)
    return EXIT_OK


def cmd_predict_replay(args) -> int:
    specs, sm = _specs(args)
    trace = _load_trace(args, sm)
    slices = parse_slice_events(_read(args.slices)) if args.slices else None
    rows = replay(trace, slices, specs, sm)
    _emit(_csv(REPLAY_HEADER, [r.as_row() for r in rows]), args.out)
    return EXIT_OK


def _policy_options(args) -> dict:
    return {
        "oracle_runtimes": args.oracle_runtimes,
        "threshold": args.adaptive_threshold,
        "cap": args.adaptive_cap,
    }


def cmd_simulate(args) -> int:
    from .sweep import run_cell

    wl = load_workload(_read(args.workload_file))
    if args.duration_model:
        kernels, models = apply_duration_model(wl.kernels, args.duration_model, args.alpha)
        wl = replace(wl, kernels=kernels, duration_models={**wl.duration_models, **models})
    if args.offset:
        first = replace(wl.kernels[0], arrival_cycle=0)
        wl = replace(wl, kernels=(first,) + wl.kernels[1:],
                     arrival_policy=ArrivalPolicy("fraction_of_first", fraction=args.offset / 100))
        wl = wl.resolved()
    seed = wl.seed if args.seed is None else args.seed
    wl = replace(wl, seed=seed)
    cell = run_cell(wl, args.policy, seed, **_policy_options(args))
    text = format_metrics([cell.metrics])
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "trace.csv").write_text(format_trace(cell.result.trace), encoding="utf-8")
        (out / "summary.csv").write_text(cell.result.format_summary(), encoding="utf-8")
        (out / "decisions.csv").write_text(cell.result.format_decisions(), encoding="utf-8")
        (out / "slices.csv").write_text(format_slice_events(cell.result.slice_events), encoding="utf-8")
        (out / "metrics.csv").write_text(text, encoding="utf-8")
    sys.stdout.write(cell.result.format_summary())
    sys.stdout.write(_csv(("kernel_id", "alone_cycles", "slowdown"),
                          [(t.kernel_id, t.alone_cycles, f"{t.slowdown:.6f}") for t in timings(cell.result)]))
    sys.stdout.write(text)
    return EXIT_OK


def cmd_sweep(args) -> int:
    catalog = load_catalog(args.t_source)
    pairs = alphabetical_pairs(list(catalog)) if args.pairs == "alphabetical" else None
    policies = args.policy or list(POLICY_NAMES)
    plan = SweepPlan(policies=policies, offset=args.offset, seed=args.seed, pairs=pairs,
                     duration_model=args.duration_model or "constant", alpha=args.alpha,
                     t_source=args.t_source, policy_options=_policy_options(args))
    result = run_sweep(plan)
    sweep_id = args.sweep_id or f"{args.pairs}-offset{args.offset}-seed{args.seed}"
    root = Path(args.out) / sweep_id
    write_sweep(result, root, traces=not args.no_traces)
    sys.stdout.write((root / "geomeans.csv").read_text(encoding="utf-8"))
    if result.failures:
        for wl, pol, msg in result.failures:
            print(f"FAILED {wl} {pol}: {msg}", file=sys.stderr)
        return EXIT_SIM
    return EXIT_OK


def _common(p: argparse.ArgumentParser, policy_multi: bool = False) -> None:
    p.add_argument("--seed", type=int, default=None if not policy_multi else 0,
                   help="random seed (default: the workload's seed, or 0 for sweeps)")
    p.add_argument("--duration-model", choices=DURATION_MODELS, default=None,
                   help="override every kernel's block duration model")
    p.add_argument("--alpha", type=float, default=0.75, help="interference slowdown coefficient")
    p.add_argument("--oracle-runtimes", action="store_true",
                   help="SRTF variants: use solo runtimes instead of sampling")
    p.add_argument("--adaptive-threshold", type=float, default=0.5)
    p.add_argument("--adaptive-cap", type=int, default=3)
    p.add_argument("--offset", type=int, choices=OFFSETS, default=0,
                   help="second kernel arrives at this %% of the first kernel's solo runtime")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tbsched", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze-trace", help="staircase and linear-fit predictions for a trace")
    p.add_argument("trace")
    p.add_argument("--workload", help="YAML workload whose kernels describe the trace (default: catalog)")
    p.add_argument("--t-source", choices=T_SOURCES, default="calibrated")
    p.add_argument("--linear-first-blocks", type=int, default=None,
                   help="fit only the N earliest-finishing blocks")
    p.add_argument("--summary", help="also write per-kernel ratio quartiles to this file")
    p.add_argument("--out", help="output CSV (default: stdout)")
    p.set_defaults(func=cmd_analyze_trace)

    p = sub.add_parser("predict-replay", help="replay a trace through the online predictor")
    p.add_argument("trace")
    p.add_argument("--slices", help="slice events CSV (default: derived from the trace)")
    p.add_argument("--workload")
    p.add_argument("--t-source", choices=T_SOURCES, default="calibrated")
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict_replay)

    p = sub.add_parser("simulate", help="simulate one workload under one policy")
    p.add_argument("workload_file", metavar="workload.yaml")
    p.add_argument("--policy", choices=list(POLICY_NAMES) + list(VARIANTS), default="fifo")
    p.add_argument("--out", help="directory for trace, summary, decisions and metrics CSVs")
    _common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="run every 2-kernel catalog workload under several policies")
    p.add_argument("--policy", action="append", choices=list(POLICY_NAMES) + list(VARIANTS),
                   help="repeatable (default: all six policies)")
    p.add_argument("--pairs", choices=("ordered", "alphabetical"), default="ordered")
    p.add_argument("--out", default="out")
    p.add_argument("--sweep-id")
    p.add_argument("--t-source", choices=T_SOURCES, default="calibrated")
    p.add_argument("--no-traces", action="store_true", help="skip per-cell trace.csv files")
    _common(p, policy_multi=True)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Deadlock as exc:
        print(f"error: simulation failed: {exc}", file=sys.stderr)
        return EXIT_SIM
    except (InputError, TbschedError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
