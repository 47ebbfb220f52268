"""Command-line front end.

Subcommands: `run` executes one scheduler (sibis | aibis | ce) and writes
trace.csv + summary.json, `oracle` writes the expected-cost map over the
interchange grid, `compare` joins finished run summaries into one report
with out-of-sample costs on a fresh scenario set.

All numeric output is serialized as decimal text at 9 significant digits
and JSON keys are sorted, so identical (case, seed, config) reproduce
byte-identical files; wall-clock time goes to a separate timing.json kept
out of that guarantee.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from .dispatch import DispatchInfeasibleError
from .netmodel import CaseError, CaseSystem, NetworkError, compute_all_shift_factors, load_case
from .oracle import GridDimensionError, GridInfeasibleError, GridSpec, grid_search
from .scheduler import ScheduleTrace, SchedulerConfig, run_aibis, run_ce, run_sibis
from .stochastic import (EstimateUnreliableError, NetLoadModel, expected_cost,
                         models_for_horizon, sample_scenarios)

EXIT_OK = 0
EXIT_CONFIG = 2       # parse/validation/usage problems
EXIT_INFEASIBLE = 3   # dispatch infeasible or estimates untrustworthy
EXIT_MAX_CYCLES = 4   # scheduler hit its cycle limit without converging
EXIT_MISMATCH = 5     # compare inputs disagree on the case


def _round9(x: float) -> float:
    return float(f"{float(x):.9g}")


def _fmt(x: float) -> str:
    return f"{float(x):.9g}"


def _jsonable(obj):
    if isinstance(obj, (np.floating, float)):
        return _round9(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    return obj


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(payload), fh, sort_keys=True, indent=2)
        fh.write("\n")


def _case_sha256(path: str) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _price_columns(case: CaseSystem) -> list:
    cols = []
    for a in case.areas:
        for iid, _sign in a.interfaces:
            cols.append((a.id, iid))
    return cols


def _write_trace(path: Path, case: CaseSystem, trace: ScheduleTrace) -> None:
    cols = _price_columns(case)
    header = (["step", "interface"]
              + [f"q_{i}" for i in range(1, case.num_interfaces + 1)]
              + ["expected_cost", "gap", "excluded"]
              + [f"pi_{aid}_{iid}" for aid, iid in cols])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for rec in trace.records:
            row = [rec.step, rec.interface]
            row += [_fmt(v) for v in rec.q]
            row += [_fmt(rec.expected_cost), _fmt(rec.gap), rec.excluded]
            for aid, iid in cols:
                area = case.area(aid)
                slot = [j for j, (fid, _s) in enumerate(area.interfaces) if fid == iid][0]
                row.append(_fmt(rec.prices[aid][slot]))
            writer.writerow(row)


def _summary_payload(args, case: CaseSystem, trace: ScheduleTrace, cfg: SchedulerConfig) -> dict:
    last = trace.terminal
    return {
        "schema": "tieflow-summary-v1",
        "case_path": str(args.case),
        "case_name": case.name,
        "case_sha256": _case_sha256(args.case),
        "mode": trace.mode,
        "seed": cfg.seed,
        "samples": cfg.samples,
        "epsilon": cfg.epsilon,
        "bisection_tol": cfg.bisection_tol,
        "max_cycles": cfg.max_cycles,
        "horizon": cfg.horizon if trace.mode == "aibis" else None,
        "q0": list(cfg.validate(case)),
        "status": trace.status,
        "steps": len(trace.records),
        "terminal_q": list(last.q),
        "terminal_expected_cost": last.expected_cost,
        "terminal_prices": {aid: list(v) for aid, v in last.prices.items()},
        "terminal_excluded": last.excluded,
    }


def _parse_q0(text, case: CaseSystem):
    if text is None:
        return None
    vals = [float(v) for v in text.split(",")]
    if len(vals) != case.num_interfaces:
        raise ValueError(f"--q0 needs {case.num_interfaces} comma-separated values")
    return np.array(vals)


def cmd_run(args) -> int:
    try:
        case = load_case(args.case)
        model = NetLoadModel.from_case(case)
        cfg = SchedulerConfig(mode=args.mode, epsilon=args.epsilon,
                              bisection_tol=args.bisection_tol,
                              max_cycles=args.max_cycles, samples=args.samples,
                              seed=args.seed, horizon=args.horizon,
                              q0=_parse_q0(args.q0, case))
        cfg.validate(case)
    except (CaseError, NetworkError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        if args.mode == "sibis":
            trace = run_sibis(case, model, cfg)
        elif args.mode == "ce":
            trace = run_ce(case, model, cfg)
        else:
            horizon = max(cfg.horizon, model.max_horizon) if args.full_horizon else cfg.horizon
            trace = run_aibis(case, models_for_horizon(model, horizon), cfg)
    except (DispatchInfeasibleError, EstimateUnreliableError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    wall = time.perf_counter() - t0

    _write_trace(out / "trace.csv", case, trace)
    _write_json(out / "summary.json", _summary_payload(args, case, trace, cfg))
    _write_json(out / "timing.json", {"wall_time_s": wall, "steps": len(trace.records)})
    print(f"{trace.mode}: status={trace.status} q={[_fmt(v) for v in trace.terminal_q]} "
          f"cost={_fmt(trace.terminal.expected_cost)}")
    return EXIT_OK if trace.status in ("converged", "horizon_end") else EXIT_MAX_CYCLES


def cmd_oracle(args) -> int:
    try:
        case = load_case(args.case)
        model = NetLoadModel.from_case(case)
    except (CaseError, NetworkError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sfs = compute_all_shift_factors(case)
    scenarios = sample_scenarios(model, args.samples, args.seed)
    grid = GridSpec.from_case(case, step=args.grid_step)
    t0 = time.perf_counter()
    try:
        cmap = grid_search(case, sfs, scenarios, grid)
    except GridDimensionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (GridInfeasibleError, EstimateUnreliableError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    wall = time.perf_counter() - t0

    with open(out / "costmap.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"q_{i}" for i in range(1, case.num_interfaces + 1)]
                        + ["expected_cost"])
        for row in cmap.rows():
            writer.writerow([_fmt(v) for v in row])
    _write_json(out / "costmap.json", {
        "schema": "tieflow-costmap-v1",
        "case_path": str(args.case),
        "case_name": case.name,
        "case_sha256": _case_sha256(args.case),
        "seed": args.seed,
        "samples": args.samples,
        "grid_step": args.grid_step,
        "ranges": [list(r) for r in grid.ranges],
        "argmin_q": list(cmap.argmin_q),
        "argmin_expected_cost": cmap.argmin_value,
        "infeasible_points": int(cmap.infeasible.sum()),
    })
    _write_json(out / "timing.json", {"wall_time_s": wall,
                                      "points": int(cmap.values.size)})
    print(f"oracle: argmin q={[_fmt(v) for v in cmap.argmin_q]} "
          f"cost={_fmt(cmap.argmin_value)}")
    return EXIT_OK


def cmd_compare(args) -> int:
    summaries = []
    for p in args.summaries:
        try:
            with open(p, "r", encoding="utf-8") as fh:
                summaries.append((p, json.load(fh)))
        except (OSError, json.JSONDecodeError) as exc:
            print(f"error: cannot read summary {p}: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    if len(summaries) < 2:
        print("error: compare needs at least two summaries", file=sys.stderr)
        return EXIT_CONFIG
    hashes = {s["case_sha256"] for _, s in summaries}
    if len(hashes) != 1:
        print("error: summaries were produced from different cases", file=sys.stderr)
        return EXIT_MISMATCH

    case_path = args.case or summaries[0][1]["case_path"]
    try:
        case = load_case(case_path)
    except (CaseError, NetworkError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if _case_sha256(case_path) != next(iter(hashes)):
        print(f"error: case file {case_path} does not match the summaries",
              file=sys.stderr)
        return EXIT_MISMATCH

    sfs = compute_all_shift_factors(case)
    model = NetLoadModel.from_case(case)
    scenarios = sample_scenarios(model, args.samples, args.seed)

    methods = []
    try:
        for path, s in summaries:
            q = np.array(s["terminal_q"], dtype=float)
            oos = expected_cost(case, sfs, q, scenarios)
            methods.append({
                "summary_path": str(path),
                "mode": s["mode"],
                "seed": s["seed"],
                "terminal_q": s["terminal_q"],
                "prices": s["terminal_prices"],
                "in_sample_expected_cost": s["terminal_expected_cost"],
                "out_of_sample_expected_cost": oos.mean,
                "out_of_sample_stderr": oos.stderr,
            })
    except (DispatchInfeasibleError, EstimateUnreliableError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE

    base = methods[0]
    deltas = []
    for m in methods:
        deltas.append({
            "mode": m["mode"],
            "q_delta": [a - b for a, b in zip(m["terminal_q"], base["terminal_q"])],
            "out_of_sample_cost_delta":
                m["out_of_sample_expected_cost"] - base["out_of_sample_expected_cost"],
        })
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "compare.json", {
        "schema": "tieflow-compare-v1",
        "case_name": case.name,
        "case_sha256": next(iter(hashes)),
        "out_of_sample": {"seed": args.seed, "samples": args.samples},
        "methods": methods,
        "deltas_vs_first": deltas,
    })
    for m in methods:
        print(f"{m['mode']}: in-sample={_fmt(m['in_sample_expected_cost'])} "
              f"out-of-sample={_fmt(m['out_of_sample_expected_cost'])}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tieflow",
                                 description="multi-area interchange scheduling")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scheduler and write trace/summary")
    run.add_argument("--case", required=True)
    run.add_argument("--mode", required=True, choices=["sibis", "aibis", "ce"])
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--samples", type=int, default=1000)
    run.add_argument("--epsilon", type=float, default=0.001)
    run.add_argument("--bisection-tol", type=float, default=0.001)
    run.add_argument("--max-cycles", type=int, default=50)
    run.add_argument("--horizon", type=int, default=20)
    run.add_argument("--full-horizon", action="store_true",
                     help="extend the aibis horizon to cover the case's mean sequences")
    run.add_argument("--q0", default=None,
                     help="comma-separated initial interchange vector")
    run.add_argument("--out", default=".")
    run.set_defaults(func=cmd_run)

    orc = sub.add_parser("oracle", help="expected-cost map over the interchange grid")
    orc.add_argument("--case", required=True)
    orc.add_argument("--seed", type=int, default=0)
    orc.add_argument("--samples", type=int, default=1000)
    orc.add_argument("--grid-step", type=float, default=1.0)
    orc.add_argument("--out", default=".")
    orc.set_defaults(func=cmd_oracle)

    cmp_ = sub.add_parser("compare", help="join run summaries, adding out-of-sample costs")
    cmp_.add_argument("summaries", nargs="+")
    cmp_.add_argument("--case", default=None,
                      help="case file path (defaults to the one recorded in the summaries)")
    cmp_.add_argument("--seed", type=int, default=10101)
    cmp_.add_argument("--samples", type=int, default=10000)
    cmp_.add_argument("--out", default=".")
    cmp_.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
