"""Live service: the paced simulation loop, NDJSON telemetry over a local
TCP socket, and an HTTP bridge for browsers (static files, an SSE stream
of the same records, and a blocking control POST).

One record per line, UTF-8. The simulation thread owns the network; client
reader threads only enqueue parsed control records, and every client gets
its own bounded outbound queue so a slow consumer drops telemetry (counted
in an event record) instead of stalling the loop.
"""

from __future__ import annotations

import json
import queue
import socket
import socketserver
import sys
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any

import numpy as np

from .mesh import ControlCommand, MeshNetwork
from .runtime import (
    PROTOCOL_VERSION,
    ScenarioConfig,
    duration_quanta,
    report_scale,
    scenario_network,
    snapshot_every,
    snapshot_record,
    summary_record,
)

CLIENT_QUEUE_DEPTH = 128
ACK_TIMEOUT_S = 3.0

# Parameter key a command competes on: later commands with the same key
# in the same quantum supersede earlier ones (last writer wins).
def _command_key(cmd: ControlCommand) -> tuple:
    if cmd.type == "swap_bands":
        return ("bands",)
    if cmd.type in ("pause", "resume"):
        return ("pause", cmd.node)
    return (cmd.type, cmd.node)


def parse_control(raw: dict[str, Any]) -> ControlCommand | str:
    """Wire record to command, or a reason string when malformed."""
    if not isinstance(raw, dict):
        return "control record must be an object"
    ctype = raw.get("control")
    if not isinstance(ctype, str):
        return "missing 'control' field"
    command_id = raw.get("command_id")
    if not isinstance(command_id, str) or not command_id:
        return "missing 'command_id' field"
    node = raw.get("node")
    nodes = raw.get("nodes")
    if nodes is not None:
        if not (isinstance(nodes, (list, tuple)) and len(nodes) == 2):
            return "'nodes' must be a pair"
        nodes = tuple(nodes)
    return ControlCommand(
        type=ctype,
        command_id=command_id,
        node=node,
        nodes=nodes,
        value=raw.get("value"),
    )


class _Client:
    """One telemetry consumer; records are JSON strings with newline."""

    _ids = 0

    def __init__(self, conn: socket.socket | None = None):
        _Client._ids += 1
        self.id = _Client._ids
        self.out: queue.Queue[str | None] = queue.Queue(maxsize=CLIENT_QUEUE_DEPTH)
        self.drops = 0
        self.closed = False
        self.conn = conn

    def offer(self, line: str) -> None:
        try:
            self.out.put_nowait(line)
        except queue.Full:
            self.drops += 1

    def force(self, line: str) -> None:
        """Acks displace the oldest telemetry rather than dropping."""
        while True:
            try:
                self.out.put_nowait(line)
                return
            except queue.Full:
                try:
                    self.out.get_nowait()
                    self.drops += 1
                except queue.Empty:
                    pass


class TelemetryHub:
    def __init__(self):
        self._clients: set[_Client] = set()
        self._lock = threading.Lock()

    def register(self, client: _Client) -> None:
        with self._lock:
            self._clients.add(client)

    def unregister(self, client: _Client) -> None:
        client.closed = True
        with self._lock:
            self._clients.discard(client)
        # Wake the writer without ever blocking: its queue may be full and
        # its send may be wedged on a stalled peer, so evict and cut the
        # socket instead of waiting.
        while True:
            try:
                client.out.put_nowait(None)
                break
            except queue.Full:
                try:
                    client.out.get_nowait()
                except queue.Empty:
                    pass
        if client.conn is not None:
            try:
                client.conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass

    def broadcast(self, record: dict[str, Any]) -> None:
        line = json.dumps(record, sort_keys=True) + "\n"
        with self._lock:
            clients = list(self._clients)
        for c in clients:
            c.offer(line)

    def clients(self) -> list[_Client]:
        with self._lock:
            return list(self._clients)


class SimulationService:
    """Owns the network and the paced loop; everything else talks queues."""

    def __init__(self, cfg: ScenarioConfig, pace: float | None = None):
        self.cfg = cfg
        self.net: MeshNetwork = scenario_network(cfg)
        self.hub = TelemetryHub()
        self.scale = report_scale(cfg)
        self.every = snapshot_every(cfg, self.net)
        self.n_quanta = duration_quanta(cfg, self.net)
        self.quantum_s = self.net.quantum_samples() / self.net.plan.composite_rate
        # default pace: one telemetry period per 100 ms of wall time
        self.pace = pace if pace is not None else self.every * self.quantum_s / 0.1
        self.inbox: queue.Queue[tuple[_Client | None, dict, queue.Queue | None]] = (
            queue.Queue()
        )
        self.stop = threading.Event()
        self.started = threading.Event()

    # -- record builders -------------------------------------------------

    def hello_record(self) -> dict[str, Any]:
        snap = self.net.snapshot()
        return {
            "type": "hello",
            "protocol": PROTOCOL_VERSION,
            "scenario": self.cfg.to_dict(),
            "telemetry_every_quanta": self.every,
            "quantum_s": self.quantum_s / self.scale,
            "aggregate_line_rate_bps": snap.aggregate_line_rate_bps * self.scale,
            "per_link_line_rate_bps": self.net.line_rate_bps(0) * self.scale,
            "band_assignment": list(snap.band_assignment),
        }

    def constellation_record(self, timestamp: float) -> dict[str, Any]:
        links = {}
        for d in range(4):
            for s in sorted(self.net.nodes[d].inbound):
                pts = self.net.constellation(s, d)
                links[f"{s}->{d}"] = [
                    [round(float(np.real(p)), 4), round(float(np.imag(p)), 4)]
                    for p in pts[:512]
                ]
        return {"type": "constellation", "timestamp": timestamp, "links": links}

    # -- control path -----------------------------------------------------

    def submit(self, client: _Client | None, raw: dict, reply: queue.Queue | None) -> None:
        self.inbox.put((client, raw, reply))

    def _deliver_ack(self, client, reply, record: dict[str, Any]) -> None:
        line = json.dumps(record, sort_keys=True) + "\n"
        if reply is not None:
            reply.put(record)
        elif client is not None and not client.closed:
            client.force(line)

    def _drain_inbox(self) -> list[tuple[Any, Any, ControlCommand]]:
        staged = []
        while True:
            try:
                client, raw, reply = self.inbox.get_nowait()
            except queue.Empty:
                return staged
            cmd = parse_control(raw)
            if isinstance(cmd, str):
                self._deliver_ack(
                    client,
                    reply,
                    {"type": "ack", "command_id": raw.get("command_id"),
                     "ok": False, "reason": cmd},
                )
                continue
            ack = self.net.apply_control(cmd)
            if not ack.ok:
                self._deliver_ack(
                    client,
                    reply,
                    {"type": "ack", "command_id": ack.command_id,
                     "ok": False, "reason": ack.reason},
                )
                continue
            staged.append((client, reply, cmd))

    def _ack_applied(self, staged) -> None:
        winners: dict[tuple, str] = {}
        for _, _, cmd in staged:
            winners[_command_key(cmd)] = cmd.command_id
        for client, reply, cmd in staged:
            self._deliver_ack(
                client,
                reply,
                {
                    "type": "ack",
                    "command_id": cmd.command_id,
                    "ok": True,
                    "winning_command_id": winners[_command_key(cmd)],
                },
            )

    # -- the loop ----------------------------------------------------------

    def run(self) -> None:
        net = self.net
        net.step_silent()
        self.started.set()
        wall_start = time.monotonic()
        for q in range(self.n_quanta):
            if self.stop.is_set():
                break
            staged = self._drain_inbox()
            net.step_quantum()
            if staged:
                self._ack_applied(staged)
            if (q + 1) % self.every == 0:
                snap = net.snapshot()
                self.hub.broadcast(snapshot_record(snap, self.scale))
                self.hub.broadcast(
                    self.constellation_record(snap.timestamp / self.scale)
                )
                for c in self.hub.clients():
                    if c.drops:
                        n, c.drops = c.drops, 0
                        c.force(json.dumps(
                            {"type": "event", "event": "telemetry_dropped",
                             "count": n, "timestamp": snap.timestamp / self.scale},
                            sort_keys=True) + "\n")
            if self.pace > 0:
                target = wall_start + (q + 1) * self.quantum_s / self.pace
                delay = target - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
        net.step_silent()
        self.hub.broadcast(snapshot_record(net.snapshot(), self.scale))
        self.hub.broadcast(
            {"type": "event", "event": "finished",
             **{"summary": summary_record(self.cfg, net, self.n_quanta)}}
        )
        self.stop.set()


# ---------------------------------------------------------------------------
# Raw NDJSON TCP transport


class _TcpHandler(socketserver.StreamRequestHandler):
    def handle(self):
        service: SimulationService = self.server.service
        client = _Client(conn=self.connection)
        client.offer(json.dumps(service.hello_record(), sort_keys=True) + "\n")
        service.hub.register(client)
        writer = threading.Thread(
            target=self._write_loop, args=(client,), daemon=True
        )
        writer.start()
        try:
            for raw_line in self.rfile:
                line = raw_line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as e:
                    client.force(json.dumps(
                        {"type": "ack", "command_id": None, "ok": False,
                         "reason": f"parse error: {e}"}, sort_keys=True) + "\n")
                    continue
                service.submit(client, record, None)
        except (ConnectionError, OSError):
            pass
        finally:
            service.hub.unregister(client)

    def _write_loop(self, client: _Client):
        while True:
            line = client.out.get()
            if line is None or client.closed:
                return
            try:
                self.wfile.write(line.encode())
                self.wfile.flush()
            except (ConnectionError, OSError):
                client.closed = True
                return


class _TcpServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class _HttpServer(ThreadingHTTPServer):
    daemon_threads = True

    def handle_error(self, request, client_address):
        # a client hanging up mid-stream is routine, not an error
        exc = sys.exc_info()[1]
        if isinstance(exc, (ConnectionError, BrokenPipeError)):
            return
        super().handle_error(request, client_address)


# ---------------------------------------------------------------------------
# HTTP bridge: static files, SSE stream, control POST

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".svg": "image/svg+xml",
    ".map": "application/json",
}


class _HttpHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, *args):  # quiet
        pass

    @property
    def service(self) -> SimulationService:
        return self.server.service

    def do_GET(self):
        if self.path == "/events":
            self._serve_events()
        else:
            self._serve_static()

    def _serve_events(self):
        client = _Client()
        client.offer(json.dumps(self.service.hello_record(), sort_keys=True) + "\n")
        self.service.hub.register(client)
        try:
            self.send_response(200)
            self.send_header("Content-Type", "text/event-stream")
            self.send_header("Cache-Control", "no-store")
            self.end_headers()
            while not client.closed:
                line = client.out.get()
                if line is None:
                    return
                self.wfile.write(b"data: " + line.strip().encode() + b"\n\n")
                self.wfile.flush()
        except (ConnectionError, OSError):
            pass
        finally:
            self.service.hub.unregister(client)

    def _serve_static(self):
        root: Path | None = self.server.static_root
        path = self.path.split("?", 1)[0]
        if path == "/":
            path = "/index.html"
        target = (root / path.lstrip("/")).resolve() if root else None
        if (
            target is None
            or root is None
            or not str(target).startswith(str(root.resolve()))
            or not target.is_file()
        ):
            body = b"not found\n"
            self.send_response(404)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)
            return
        body = target.read_bytes()
        self.send_response(200)
        ctype = _CONTENT_TYPES.get(target.suffix, "application/octet-stream")
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self):
        if self.path != "/control":
            self.send_response(404)
            self.send_header("Content-Length", "0")
            self.end_headers()
            return
        length = int(self.headers.get("Content-Length", "0"))
        body = self.rfile.read(length)
        try:
            record = json.loads(body)
        except json.JSONDecodeError as e:
            self._respond_json(
                {"type": "ack", "command_id": None, "ok": False,
                 "reason": f"parse error: {e}"}
            )
            return
        reply: queue.Queue = queue.Queue(maxsize=1)
        self.service.submit(None, record, reply)
        try:
            ack = reply.get(timeout=ACK_TIMEOUT_S)
        except queue.Empty:
            ack = {"type": "ack", "command_id": record.get("command_id"),
                   "ok": False, "reason": "ack timed out"}
        self._respond_json(ack)

    def _respond_json(self, record: dict[str, Any]):
        body = (json.dumps(record, sort_keys=True) + "\n").encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)


def serve(
    cfg: ScenarioConfig,
    listen: str = "127.0.0.1:8765",
    pace: float | None = None,
    static_root: str | Path | None = None,
    http_port: int | None = None,
    ready: threading.Event | None = None,
    stop: threading.Event | None = None,
) -> None:
    """Run the paced service until the scenario duration elapses.

    The raw NDJSON socket listens on `listen`; the HTTP bridge listens on
    the next port (or `http_port`) and serves `static_root` at /.
    """
    host, port_text = listen.rsplit(":", 1)
    port = int(port_text)
    service = SimulationService(cfg, pace=pace)
    if stop is not None:
        service.stop = stop

    tcp = _TcpServer((host, port), _TcpHandler)
    tcp.service = service
    http = _HttpServer((host, http_port or port + 1), _HttpHandler)
    http.service = service
    root = Path(static_root).resolve() if static_root else None
    http.static_root = root if root and root.is_dir() else None

    threads = [
        threading.Thread(target=tcp.serve_forever, daemon=True),
        threading.Thread(target=http.serve_forever, daemon=True),
    ]
    for t in threads:
        t.start()
    try:
        sim = threading.Thread(target=service.run, daemon=True)
        sim.start()
        service.started.wait()
        if ready is not None:
            ready.set()
        while sim.is_alive():
            sim.join(timeout=0.2)
    except KeyboardInterrupt:
        service.stop.set()
    finally:
        service.stop.set()
        tcp.shutdown()
        http.shutdown()
        tcp.server_close()
        http.server_close()
        for c in service.hub.clients():
            service.hub.unregister(c)
