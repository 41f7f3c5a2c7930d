"""Command line entry point: batch runs, BER sweeps, and the live service."""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .runtime import (
    SWEEP_POINTS_DB,
    ScenarioConfig,
    ScenarioError,
    load_scenario,
    run_batch,
    scenario_from_dict,
    sweep,
    write_sweep_table,
)
from .server import serve


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", help="scenario JSON file")
    p.add_argument("--seed", type=int, help="override (or supply) the run seed")
    p.add_argument(
        "--duration", type=int, metavar="FRAMES",
        help="frames per directed link (overrides the scenario duration)",
    )
    p.add_argument(
        "--real-rate", action="store_true",
        help="report rates and times at the 24.96 Msym/s hardware scale",
    )


def _scenario(args) -> ScenarioConfig:
    if args.scenario:
        cfg = load_scenario(args.scenario)
    elif args.seed is not None:
        cfg = scenario_from_dict({"seed": args.seed})
    else:
        raise ScenarioError("give --scenario or at least --seed")
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.duration is not None:
        updates["duration_frames"] = args.duration
        updates["duration_s"] = None
    if args.real_rate:
        updates["real_rate_reporting"] = True
    return dataclasses.replace(cfg, **updates) if updates else cfg


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="meshradio",
        description="Four-node FDMA mesh simulator: 12 always-on 2x2 MIMO links",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="batch run; writes snapshot log and summary")
    _add_common(p_run)
    p_run.add_argument("--out", default="out", help="output directory")
    p_run.add_argument(
        "--single-thread", action="store_true",
        help="disable the worker pool (results are identical either way)",
    )

    p_sweep = sub.add_parser("sweep", help="BER versus operating SNR table")
    _add_common(p_sweep)
    p_sweep.add_argument("--out", default="out", help="output directory")
    p_sweep.add_argument(
        "--points", default=",".join(str(p) for p in SWEEP_POINTS_DB),
        help="comma-separated SNR points in dB",
    )
    p_sweep.add_argument(
        "--bits-per-point", type=int, default=100_000,
        help="minimum counted payload bits per point (pooled over links)",
    )
    p_sweep.add_argument("--single-thread", action="store_true")

    p_serve = sub.add_parser("serve", help="paced live service with telemetry")
    _add_common(p_serve)
    p_serve.add_argument(
        "--listen", default="127.0.0.1:8765",
        help="host:port for the NDJSON socket (HTTP bridge on port+1)",
    )
    p_serve.add_argument(
        "--pace", type=float, default=None,
        help="simulated seconds advanced per wall second (0 = unpaced)",
    )
    p_serve.add_argument(
        "--static", default="frontend/dist",
        help="directory of dashboard files served at / by the HTTP bridge",
    )

    args = parser.parse_args(argv)
    try:
        cfg = _scenario(args)
    except ScenarioError as e:
        print(f"scenario error: {e}", file=sys.stderr)
        return 2

    try:
        if args.command == "run":
            summary = run_batch(cfg, args.out, single_thread=args.single_thread)
            links_ok = sum(1 for m in summary["links"].values() if m["fer"] == 0.0)
            print(f"wrote {Path(args.out) / 'summary.json'}")
            print(
                f"links with FER=0: {links_ok}/12  "
                f"aggregate throughput: {summary['aggregate_throughput_bps']:.6g} bps"
            )
        elif args.command == "sweep":
            points = tuple(float(x) for x in args.points.split(","))
            rows = sweep(
                cfg, points, bits_per_point=args.bits_per_point,
                single_thread=args.single_thread,
            )
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            write_sweep_table(rows, out / "ber_table.txt")
            print(f"wrote {out / 'ber_table.txt'}")
            for es, ber, bits in rows:
                print(f"  {es:5.1f} dB  ber={ber:.3e}  bits={bits}")
        elif args.command == "serve":
            serve(cfg, listen=args.listen, pace=args.pace, static_root=args.static)
    except OSError as e:
        print(f"i/o failure: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
