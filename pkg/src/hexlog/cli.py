# Command line front end: single runs, K-by-seed sweeps, per-host traces.
#
# Output contract: metrics go to stdout (or --out) as CSV with a fixed
# column order, or JSON with the same keys. Diagnostics go to stderr only,
# gated by HEXLOG_LOG_LEVEL. Exit codes: 0 ok, 1 usage or config error,
# 2 invariant violation.
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor

from .config import ConfigError, load_config, parse_k
from .protocol import InvariantViolation
from .sim import run

CSV_COLUMNS = [
    "k", "seed", "ticks", "hosts", "grid_radius",
    "handoffs_total", "handoffs_consolidating", "transfer_cost",
    "recoveries", "recovery_cost_total", "recovery_entries_replayed",
    "logset_size_mean", "logset_size_max", "storage_units_max",
]

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging() -> None:
    raw = os.environ.get("HEXLOG_LOG_LEVEL", "error")
    level = _LOG_LEVELS.get(raw.lower())
    if level is None:
        print(f"warning: unknown HEXLOG_LOG_LEVEL {raw!r}, using error",
              file=sys.stderr)
        level = logging.ERROR
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("hexlog")
    root.handlers[:] = [handler]
    root.setLevel(level)


def format_k(k) -> str:
    return "INF" if k == math.inf else str(int(k))


def _json_k(k):
    return "INF" if k == math.inf else int(k)


def report_row(report) -> list[str]:
    return [
        format_k(report.k), str(report.seed), str(report.ticks),
        str(report.hosts), str(report.grid_radius),
        str(report.handoffs_total), str(report.handoffs_consolidating),
        str(report.transfer_cost), str(report.recoveries),
        str(report.recovery_cost_total), str(report.recovery_entries_replayed),
        f"{report.logset_size_mean:.6f}", str(report.logset_size_max),
        str(report.storage_units_max),
    ]


def report_dict(report) -> dict:
    row = report_row(report)
    out = dict(zip(CSV_COLUMNS, row))
    out["k"] = _json_k(report.k)
    for key in CSV_COLUMNS[1:]:
        out[key] = float(out[key]) if key == "logset_size_mean" else int(out[key])
    return out


def render_csv(rows: list[list[str]]) -> str:
    lines = [",".join(CSV_COLUMNS)]
    lines.extend(",".join(row) for row in rows)
    return "\n".join(lines) + "\n"


def _emit(text: str, out_path: str | None) -> None:
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _overrides(args) -> dict:
    ov = {}
    if getattr(args, "seed", None) is not None:
        ov["rng_seed"] = args.seed
    if getattr(args, "k", None) is not None:
        ov["k"] = parse_k(args.k)
    return ov


def _parse_int_list(text: str, what: str) -> list[int]:
    """Accepts '1,2,7' and range shorthand '1..20'."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            lo_s, _, hi_s = part.partition("..")
            try:
                lo, hi = int(lo_s), int(hi_s)
            except ValueError:
                raise ConfigError(f"bad {what} range {part!r}")
            if hi < lo:
                raise ConfigError(f"empty {what} range {part!r}")
            out.extend(range(lo, hi + 1))
        else:
            try:
                out.append(int(part))
            except ValueError:
                raise ConfigError(f"bad {what} value {part!r}")
    return out


def _parse_k_list(text: str) -> list:
    return [parse_k(p) for p in text.split(",")]


def cmd_run(args) -> int:
    config = load_config(args.config, overrides=_overrides(args))
    try:
        _, report = run(config)
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        if exc.event is not None:
            print(f"offending event: {exc.event}", file=sys.stderr)
        return 2
    if args.format == "json":
        _emit(json.dumps(report_dict(report), indent=2) + "\n", args.out)
    else:
        _emit(render_csv([report_row(report)]), args.out)
    return 0


def _sweep_cell(config, k, seed):
    cell_config = dataclasses.replace(config, k=k, rng_seed=seed)
    try:
        _, report = run(cell_config)
        return (k, seed, report, None)
    except Exception as exc:    # a cell failure must not kill the sweep
        return (k, seed, None, exc)


def cmd_sweep(args) -> int:
    config = load_config(args.config)
    ks = _parse_k_list(args.k)
    seeds = _parse_int_list(args.seeds, "seed")
    if args.parallelism < 1:
        raise ConfigError("--parallelism must be >= 1")
    jobs = [(k, s) for k in ks for s in seeds]
    with ThreadPoolExecutor(max_workers=args.parallelism) as pool:
        results = list(pool.map(lambda j: _sweep_cell(config, *j), jobs))
    results.sort(key=lambda r: (r[0] == math.inf, r[0], r[1]))
    rows, dicts = [], []
    for k, seed, report, err in results:
        if err is None:
            rows.append(report_row(report))
            dicts.append(report_dict(report))
        else:
            logging.getLogger("hexlog.cli").error(
                "cell k=%s seed=%d failed: %s", format_k(k), seed, err)
            rows.append([format_k(k), str(seed), "FAILED"] +
                        [""] * (len(CSV_COLUMNS) - 3))
            dicts.append({"k": _json_k(k), "seed": seed, "error": str(err)})
    if args.format == "json":
        _emit(json.dumps(dicts, indent=2) + "\n", args.out)
    else:
        _emit(render_csv(rows), args.out)
    return 0


def _trace_line(rec: dict) -> str:
    t, kind = rec["t"], rec["kind"]
    if kind == "register":
        return f"t={t} register host={rec['host']} mss={rec['mss']}"
    if kind == "send":
        return (f"t={t} send src={rec['src']} dst={rec['dst']} "
                f"stamp={rec['stamp']} arrival={rec['arrival']}")
    if kind == "deliver":
        return (f"t={t} deliver host={rec['host']} seq={rec['seq']} "
                f"from={rec['sender']} mss={rec['mss']} stamp={rec['stamp']}")
    if kind == "checkpoint":
        return (f"t={t} checkpoint host={rec['host']} cp_seq={rec['cp_seq']} "
                f"rec_seq={rec['rec_seq']} mss={rec['mss']}")
    if kind == "handoff":
        tr = rec["transfer"]
        return (f"t={t} handoff host={rec['host']} old={rec['old']} "
                f"new={rec['new']} kind={tr.kind} hops={tr.hop_distance} "
                f"ckpt_units={tr.checkpoint_units} "
                f"entries={tr.log_entries_moved} cost={tr.cost}")
    if kind == "disconnect":
        return f"t={t} disconnect host={rec['host']} mss={rec['mss']} r={rec['r']}"
    if kind == "reconnect":
        return (f"t={t} reconnect host={rec['host']} mss={rec['mss']} "
                f"drained={rec['drained']}")
    if kind == "fail":
        return f"t={t} fail host={rec['host']} mss={rec['mss']}"
    if kind == "recover":
        return (f"t={t} recover host={rec['host']} mss={rec['mss']} "
                f"cp_seq={rec['cp_seq']} "
                f"replayed={rec['replay_from']}..{rec['replay_to']} "
                f"cost={rec['recovery'].cost}")
    return f"t={t} {kind}"


def _involves(rec: dict, host: int) -> bool:
    if rec.get("host") == host:
        return True
    return rec.get("src") == host or rec.get("dst") == host


def cmd_trace(args) -> int:
    config = load_config(args.config, overrides=_overrides(args))
    if not 0 <= args.host < config.num_hosts:
        print(f"error: unknown host {args.host}; scenario has hosts "
              f"0..{config.num_hosts - 1}", file=sys.stderr)
        return 1
    try:
        world, _ = run(config)
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        if exc.event is not None:
            print(f"offending event: {exc.event}", file=sys.stderr)
        return 2
    lines = [_trace_line(r) for r in world.journal if _involves(r, args.host)]
    sys.stdout.write("\n".join(lines) + ("\n" if lines else ""))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hexlog",
        description="Simulate distance-threshold checkpointing and "
                    "message-log recovery for mobile hosts on a hex grid")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario, emit metrics")
    p_run.add_argument("config")
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--k")
    p_run.add_argument("--out")
    p_run.add_argument("--format", choices=["csv", "json"], default="csv")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a K-by-seed grid of scenarios")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--k", required=True,
                         help="comma list of thresholds, e.g. 0,1,2,4,INF")
    p_sweep.add_argument("--seeds", required=True,
                         help="comma list or range, e.g. 1..20")
    p_sweep.add_argument("--parallelism", type=int, default=1)
    p_sweep.add_argument("--out")
    p_sweep.add_argument("--format", choices=["csv", "json"], default="csv")
    p_sweep.set_defaults(func=cmd_sweep)

    p_trace = sub.add_parser("trace", help="dump one host's event trace")
    p_trace.add_argument("config")
    p_trace.add_argument("--host", type=int, required=True)
    p_trace.add_argument("--seed", type=int)
    p_trace.add_argument("--k")
    p_trace.set_defaults(func=cmd_trace)
    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
