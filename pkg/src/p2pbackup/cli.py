"""Command-line front end for trace analysis, scheduling comparisons,
redundancy planning, and full simulation runs.

Every subcommand takes --seed (default 0) and --out-dir, writes its outputs
plus a run-manifest.json echoing the resolved configuration, and exits 0
only when all outputs were written.  Outputs are deterministic functions of
the manifest.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, redundancy, report, sched, sim, trace


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, payload: dict) -> None:
    payload = dict(payload)
    payload["version"] = __version__
    with open(out / "run-manifest.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_matrix(args) -> tuple[trace.AvailabilityMatrix, dict]:
    """Resolve the trace source shared by several subcommands."""
    if getattr(args, "matrix", None):
        matrix = trace.read_matrix_file(args.matrix)
        source = {"matrix": str(args.matrix)}
    elif getattr(args, "events", None):
        events, warnings = trace.read_event_file(args.events)
        for w in warnings:
            print(f"warning: {w}", file=sys.stderr)
        matrix = trace.slotize(events, args.slot_seconds)
        source = {"events": str(args.events), "slot_seconds": args.slot_seconds}
    else:
        matrix = trace.synth_trace(
            args.synth_peers,
            args.synth_slots,
            availability=(args.avail_low, args.avail_high),
            seed=args.seed,
        )
        source = {
            "synth_peers": args.synth_peers,
            "synth_slots": args.synth_slots,
            "avail_low": args.avail_low,
            "avail_high": args.avail_high,
        }
    return matrix, source


def _add_matrix_flags(parser, synth_default_peers=100, synth_default_slots=672):
    parser.add_argument("--matrix", help="availability matrix file")
    parser.add_argument("--synth-peers", type=int, default=synth_default_peers,
                        help="synthesize a trace with this many peers when no --matrix")
    parser.add_argument("--synth-slots", type=int, default=synth_default_slots,
                        help="slots for the synthesized trace")
    parser.add_argument("--avail-low", type=float, default=0.2,
                        help="lower bound of per-peer availability for synthesis")
    parser.add_argument("--avail-high", type=float, default=0.9,
                        help="upper bound of per-peer availability for synthesis")


# -- trace-stats ---------------------------------------------------------

def cmd_trace_stats(args) -> int:
    out = _out_dir(args)
    if not args.matrix and not args.events:
        raise SystemExit("trace-stats: provide --matrix or --events")
    matrix, source = _load_matrix(args)
    kept = None
    if args.min_uptime is not None:
        matrix, kept = trace.filter_min_uptime(matrix, args.min_uptime)
    stats = trace.availability_stats(matrix)
    with open(out / "trace-stats.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["peer_id", "availability"])
        ids = matrix.peer_ids if matrix.peer_ids is not None else range(matrix.num_peers)
        for pid, a in zip(ids, stats.per_peer):
            writer.writerow([pid, repr(float(a))])
    _write_manifest(out, {
        "subcommand": "trace-stats",
        "seed": args.seed,
        "source": source,
        "min_uptime": args.min_uptime,
        "peers": matrix.num_peers,
        "slots": matrix.num_slots,
        "system_availability": stats.system,
    })
    print(f"{matrix.num_peers} peers, {matrix.num_slots} slots, "
          f"system availability {stats.system:.4f}"
          + (f" ({len(kept)} kept by uptime filter)" if kept is not None else ""))
    return 0


# -- trace-synth ---------------------------------------------------------

def cmd_trace_synth(args) -> int:
    out = _out_dir(args)
    matrix = trace.synth_trace(
        args.peers,
        args.slots,
        availability=(args.avail_low, args.avail_high),
        diurnal_amplitude=args.diurnal,
        weekend_factor=args.weekend,
        slot_seconds=args.slot_seconds,
        seed=args.seed,
    )
    path = out / args.name
    trace.write_matrix_file(matrix, path)
    _write_manifest(out, {
        "subcommand": "trace-synth",
        "seed": args.seed,
        "peers": args.peers,
        "slots": args.slots,
        "avail_low": args.avail_low,
        "avail_high": args.avail_high,
        "diurnal": args.diurnal,
        "weekend": args.weekend,
        "slot_seconds": args.slot_seconds,
        "output": str(path),
    })
    print(f"wrote {path} ({args.peers} peers x {args.slots} slots)")
    return 0


# -- sched-compare -------------------------------------------------------

def _parse_list(text: str, cast) -> list:
    return [cast(tok) for tok in text.split(",") if tok.strip()]


def cmd_sched_compare(args) -> int:
    out = _out_dir(args)
    matrix, source = _load_matrix(args)
    xs = _parse_list(args.x, int)
    ratios = _parse_list(args.ratios, float)
    if any(r <= 1 for r in ratios):
        raise SystemExit("sched-compare: ratios must be > 1")
    rng = np.random.default_rng(args.seed)
    bits = matrix.bits
    P, T = matrix.num_peers, matrix.num_slots
    rows = []
    for x in xs:
        for ratio in ratios:
            candidates_n = int(round(ratio * x))
            if x > P - 1 or candidates_n > P - 1:
                rows.append({
                    "x": x, "ratio": ratio, "candidates": candidates_n,
                    "trials": args.trials, "trials_used": 0,
                    "mean_optimal": "", "mean_random": "", "mean_baseline": "",
                    "mean_optimal_norm": "", "mean_random_norm": "",
                    "note": "skipped: more peers needed than the trace has",
                })
                continue
            opt_acc, rand_acc, base_acc = [], [], []
            for _ in range(args.trials):
                owner = int(rng.integers(P))
                others = [i for i in range(P) if i != owner]
                chosen = rng.choice(len(others), size=candidates_n, replace=False)
                picked = [others[i] for i in sorted(chosen.tolist())]
                start = int(rng.integers(1, max(2, T // 2)))
                sub = trace.AvailabilityMatrix(
                    bits=bits[[owner] + picked, start - 1:],
                    slot_seconds=matrix.slot_seconds,
                )
                problem = sched.TransferProblem(matrix=sub, owner=0, direction=sched.BACKUP, x=x)
                baseline = sched.ideal_baseline(sub.bits[0], x, 1, start_slot=1)
                optimal = sched.optimal_completion(problem)
                randomized = sched.random_schedule(problem, rng)
                if baseline is None or not optimal.feasible or not randomized.feasible:
                    continue
                opt_acc.append(optimal.completion)
                rand_acc.append(randomized.completion)
                base_acc.append(baseline)
            used = len(opt_acc)
            row = {
                "x": x, "ratio": ratio, "candidates": candidates_n,
                "trials": args.trials, "trials_used": used, "note": "",
            }
            if used:
                mo, mr, mb = np.mean(opt_acc), np.mean(rand_acc), np.mean(base_acc)
                row.update({
                    "mean_optimal": repr(float(mo)),
                    "mean_random": repr(float(mr)),
                    "mean_baseline": repr(float(mb)),
                    "mean_optimal_norm": repr(float(np.mean(np.array(opt_acc) / np.array(base_acc)))),
                    "mean_random_norm": repr(float(np.mean(np.array(rand_acc) / np.array(base_acc)))),
                })
            else:
                row.update({
                    "mean_optimal": "", "mean_random": "", "mean_baseline": "",
                    "mean_optimal_norm": "", "mean_random_norm": "",
                    "note": "no feasible trials",
                })
            rows.append(row)
    fieldnames = ["x", "ratio", "candidates", "trials", "trials_used",
                  "mean_optimal", "mean_random", "mean_baseline",
                  "mean_optimal_norm", "mean_random_norm", "note"]
    with open(out / "sched-compare.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)
    _write_manifest(out, {
        "subcommand": "sched-compare",
        "seed": args.seed,
        "source": source,
        "x": xs,
        "ratios": ratios,
        "trials": args.trials,
    })
    print(f"wrote {out / 'sched-compare.csv'} ({len(rows)} grid points)")
    return 0


# -- plan ----------------------------------------------------------------

def _plan_n(row: dict) -> dict:
    k = int(row["k"])
    a = float(row["a"])
    target = float(row["target"])
    n = redundancy.fixed_redundancy_n(k, a, target)
    return {"mode": "n", "k": k, "a": a, "target": target,
            "n": n, "probability": ""}


def _plan_loss(row: dict) -> dict:
    n = int(row["n"])
    k = int(row["k"])
    t_days = float(row["t_days"])
    lifetime = float(row["mean_lifetime_days"])
    p = redundancy.data_loss_probability(n, k, t_days, lifetime)
    return {"mode": "loss", "n": n, "k": k, "t_days": t_days,
            "mean_lifetime_days": lifetime, "probability": repr(p)}


def cmd_plan(args) -> int:
    out = _out_dir(args)
    results = []
    if args.batch:
        with open(args.batch, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                mode = row.get("mode", "").strip() or ("loss" if row.get("t_days") else "n")
                results.append(_plan_loss(row) if mode == "loss" else _plan_n(row))
    elif args.loss:
        if args.n is None or args.k is None or args.t_days is None:
            raise SystemExit("plan --loss requires --n, --k and --t-days")
        results.append(_plan_loss({
            "n": args.n, "k": args.k, "t_days": args.t_days,
            "mean_lifetime_days": args.lifetime,
        }))
    else:
        if args.k is None or args.a is None or args.target is None:
            raise SystemExit("plan requires --k, --a and --target (or --loss / --batch)")
        results.append(_plan_n({"k": args.k, "a": args.a, "target": args.target}))
    fieldnames = ["mode", "k", "a", "target", "n", "t_days", "mean_lifetime_days", "probability"]
    with open(out / "plan.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames, restval="")
        writer.writeheader()
        writer.writerows(results)
    for res in results:
        if res["mode"] == "n":
            print(f"k={res['k']} a={res['a']} target={res['target']} -> n={res['n']}")
        else:
            print(f"n={res['n']} k={res['k']} t_days={res['t_days']} "
                  f"lifetime={res['mean_lifetime_days']} -> p={res['probability']}")
    _write_manifest(out, {
        "subcommand": "plan",
        "seed": args.seed,
        "batch": str(args.batch) if args.batch else None,
        "queries": len(results),
    })
    return 0


# -- simulate ------------------------------------------------------------

# CLI flag -> SimConfig field; flags override config-file keys
_SIM_FLAGS = [
    ("--object-size", "object_size", int),
    ("--fragment-size", "fragment_size", int),
    ("--storage-quota", "storage_quota", int),
    ("--slot-seconds", "slot_seconds", float),
    ("--mean-lifetime-days", "mean_lifetime_days", float),
    ("--policy", "redundancy_policy", str),
    ("--fixed-target", "fixed_target", float),
    ("--loss-cap", "loss_cap", float),
    ("--w-days", "w_days", float),
    ("--parallel-downloads", "parallel_downloads", int),
    ("--ttr-floor-days", "ttr_floor_days", float),
    ("--ttr-factor", "ttr_factor", float),
    ("--response", "response", str),
    ("--delay-mean-days", "delay_mean_days", float),
    ("--repair-timeout-days", "repair_timeout_days", float),
    ("--bandwidth-source", "bandwidth_source", str),
    ("--bandwidth-file", "bandwidth_file", str),
    ("--bandwidth-median-kbs", "bandwidth_median_kbs", float),
    ("--bandwidth-sigma", "bandwidth_sigma", float),
    ("--backup-parallelism", "backup_parallelism", int),
]


def _average_summaries(rows: list[dict]) -> dict:
    """Mean of numeric fields across runs; NaN entries are skipped, text
    fields keep the first run's value."""
    merged: dict = {}
    for key in rows[0]:
        values = []
        numeric = True
        for row in rows:
            v = row[key]
            if isinstance(v, (int, float)) and not isinstance(v, bool):
                if not (isinstance(v, float) and math.isnan(v)):
                    values.append(float(v))
            elif v == "":
                continue
            else:
                numeric = False
                break
        if numeric:
            merged[key] = float(np.mean(values)) if values else math.nan
        else:
            merged[key] = rows[0][key]
    return merged


def cmd_simulate(args) -> int:
    out = _out_dir(args)
    mapping: dict = {}
    if args.config:
        mapping.update(sim.load_config(args.config))
    for flag, name, _ in _SIM_FLAGS:
        value = getattr(args, name)
        if value is not None:
            mapping[name] = value
    if args.audit:
        mapping["audit"] = True
    mapping["seed"] = args.seed if args.seed is not None else int(mapping.get("seed", 0))
    config = sim.SimConfig.from_mapping(mapping)
    matrix, source = _load_matrix(args)
    if args.runs < 1:
        raise SystemExit("simulate: --runs must be >= 1")
    summaries = []
    for i in range(args.runs):
        run_config = replace(config, seed=config.seed + i)
        result = sim.run(run_config, matrix)
        report.write_report_csvs(result, out / f"run-{i}")
        summaries.append(report.summary_row(result))
    merged = _average_summaries(summaries)
    merged["runs"] = args.runs
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(merged.keys())
        writer.writerow([
            ("" if isinstance(v, float) and math.isnan(v) else repr(v) if isinstance(v, float) else v)
            for v in merged.values()
        ])
    _write_manifest(out, {
        "subcommand": "simulate",
        "seed": config.seed,
        "runs": args.runs,
        "source": source,
        "config": config.to_mapping(),
    })
    print(f"{args.runs} run(s) complete; averaged summary at {out / 'summary.csv'}")
    return 0


# -- parser --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="p2pbackup",
        description="Trace-driven peer-to-peer backup: scheduling, redundancy planning, simulation.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="random seed (default 0)")
    common.add_argument("--out-dir", default="out", help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("trace-stats", parents=[common],
                       help="availability statistics of a trace")
    p.add_argument("--matrix", help="availability matrix file")
    p.add_argument("--events", help="login/logoff event file")
    p.add_argument("--slot-seconds", type=float, default=trace.DEFAULT_SLOT_SECONDS)
    p.add_argument("--min-uptime", type=float, default=None,
                   help="drop peers below this availability fraction")
    p.set_defaults(func=cmd_trace_stats)

    p = sub.add_parser("trace-synth", parents=[common], help="synthesize an availability trace")
    p.add_argument("--peers", type=int, required=True)
    p.add_argument("--slots", type=int, required=True)
    p.add_argument("--avail-low", type=float, default=0.2)
    p.add_argument("--avail-high", type=float, default=0.9)
    p.add_argument("--diurnal", type=float, default=0.3, help="diurnal modulation amplitude")
    p.add_argument("--weekend", type=float, default=1.0, help="weekend availability factor")
    p.add_argument("--slot-seconds", type=float, default=trace.DEFAULT_SLOT_SECONDS)
    p.add_argument("--name", default="trace.txt", help="output file name inside --out-dir")
    p.set_defaults(func=cmd_trace_synth)

    p = sub.add_parser("sched-compare", parents=[common],
                       help="optimal vs random transfer scheduling over a trace")
    _add_matrix_flags(p, synth_default_peers=200, synth_default_slots=504)
    p.add_argument("--x", default="40,60,80", help="fragment counts, comma separated")
    p.add_argument("--ratios", default="1.1,1.25,1.5,1.75,2.0",
                   help="candidate-to-fragment ratios I/x, comma separated")
    p.add_argument("--trials", type=int, default=200)
    p.set_defaults(func=cmd_sched_compare)

    p = sub.add_parser("plan", parents=[common], help="redundancy planning calculations")
    p.add_argument("--k", type=int)
    p.add_argument("--a", type=float, help="average peer availability")
    p.add_argument("--target", type=float, help="fragment availability target")
    p.add_argument("--loss", action="store_true", help="compute data-loss probability instead")
    p.add_argument("--n", type=int)
    p.add_argument("--t-days", type=float)
    p.add_argument("--lifetime", type=float, default=90.0, dest="lifetime",
                   help="mean peer lifetime in days")
    p.add_argument("--batch", help="CSV of queries (mode,k,a,target,n,t_days,mean_lifetime_days)")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate", parents=[common], help="full system simulation")
    _add_matrix_flags(p)
    p.add_argument("--config", help="key=value config file; flags override")
    p.add_argument("--runs", type=int, default=1,
                   help="average this many runs over seeds seed..seed+N-1")
    p.add_argument("--audit", action="store_true",
                   help="record per-slot allocation detail (slower)")
    for flag, name, cast in _SIM_FLAGS:
        p.add_argument(flag, dest=name, type=cast, default=None)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.seed is None and args.command != "simulate":
        args.seed = 0
    try:
        return args.func(args)
    except SystemExit:
        raise
    except (OSError, ValueError, redundancy.SearchCeilingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
