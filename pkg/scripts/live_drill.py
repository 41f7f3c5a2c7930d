"""Headless operations drill against a live service instance.

Starts the paced service in-process, connects over the NDJSON socket,
swaps two nodes' bands plus changes a gain, and prints the acks and the
per-link recovery as it happens. Shows the same wire protocol the
dashboard uses, minus the browser.
"""

import argparse
import json
import socket
import sys
import threading
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from meshradio.runtime import scenario_from_dict
from meshradio.server import serve


def delivered(links: dict) -> int:
    return sum(m["frames_crc_ok"] for m in links.values())


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--port", type=int, default=18750)
    ap.add_argument("--seed", type=int, default=8)
    ap.add_argument("--snapshots", type=int, default=12,
                    help="snapshots to watch after the controls go out")
    args = ap.parse_args()

    cfg = scenario_from_dict(
        {"seed": args.seed, "payload_bytes": 1024, "duration_frames": 400,
         "telemetry_period_s": 1.0}
    )
    ready, stop = threading.Event(), threading.Event()
    server = threading.Thread(
        target=serve,
        args=(cfg,),
        kwargs=dict(listen=f"127.0.0.1:{args.port}", pace=0.0,
                    ready=ready, stop=stop),
    )
    server.start()
    if not ready.wait(30):
        print("service did not start", file=sys.stderr)
        return 1

    sock = socket.create_connection(("127.0.0.1", args.port), timeout=30)
    f = sock.makefile("rwb")
    try:
        hello = json.loads(f.readline())
        print(f"connected: protocol {hello['protocol']}, "
              f"aggregate line rate {hello['aggregate_line_rate_bps']:g} bps")

        for cmd in (
            {"control": "swap_bands", "command_id": "drill-swap", "nodes": [0, 1]},
            {"control": "set_gain", "command_id": "drill-gain", "node": 2,
             "value": 1.25},
        ):
            f.write((json.dumps(cmd) + "\n").encode())
        f.flush()

        # one frame per node per quantum: four deliveries when all is well
        seen = 0
        prev = None
        while seen < args.snapshots:
            rec = json.loads(f.readline())
            if rec["type"] == "ack":
                state = "ok" if rec["ok"] else f"rejected: {rec['reason']}"
                print(f"ack {rec['command_id']}: {state} "
                      f"(winner {rec.get('winning_command_id')})")
            elif rec["type"] == "snapshot":
                seen += 1
                total = delivered(rec["links"])
                delta = "" if prev is None else f" delivered +{total - prev}/4"
                prev = total
                print(f"quantum {rec['quantum_index']:4d} "
                      f"bands {rec['band_assignment']}{delta} "
                      f"throughput {rec['aggregate_throughput_bps']:.3f}")
    finally:
        sock.close()
        stop.set()
        server.join(30)
    return 0


if __name__ == "__main__":
    sys.exit(main())
