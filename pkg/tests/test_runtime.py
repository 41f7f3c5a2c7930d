"""Runtime tests: scenario loading with typed errors and field paths,
batch logging determinism, the sweep table, the live NDJSON socket with
last-writer-wins acks, the HTTP bridge, and slow-client backpressure."""

import dataclasses
import json
import socket
import threading
import time
from pathlib import Path

import pytest

import meshradio.server as server_mod
from meshradio.cli import main as cli_main
from meshradio.runtime import (
    ScenarioConfig,
    ScenarioFileError,
    ScenarioParseError,
    ScenarioValidationError,
    load_scenario,
    run_batch,
    scenario_from_dict,
    serialize_scenario,
    sweep,
    write_sweep_table,
)
from meshradio.server import serve

_NEXT_PORT = [19650]


def fresh_port() -> int:
    _NEXT_PORT[0] += 2
    return _NEXT_PORT[0]


class TestScenario:
    def test_minimal_gets_documented_defaults(self):
        cfg = scenario_from_dict({"seed": 7})
        assert cfg == ScenarioConfig(seed=7)
        assert (cfg.profile, cfg.snr_db) == ("AWGN_ONLY", 28.0)
        assert (cfg.modulation, cfg.diversity) == ("QAM16", "ALAMOUTI")
        assert cfg.payload_source == "PRBS23"
        assert cfg.duration_frames == 100 and cfg.duration_s is None

    def test_round_trip(self, tmp_path):
        cfg = scenario_from_dict(
            {"seed": 3, "snr_overrides": {"0->2": 12.5}, "profile": "MOBILE"}
        )
        p = tmp_path / "s.json"
        p.write_text(serialize_scenario(cfg))
        assert load_scenario(p) == cfg

    def test_error_types_are_distinct(self, tmp_path):
        with pytest.raises(ScenarioFileError):
            load_scenario(tmp_path / "absent.json")
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(ScenarioParseError):
            load_scenario(bad)
        empty = tmp_path / "empty.json"
        empty.write_text("{}")
        with pytest.raises(ScenarioValidationError):
            load_scenario(empty)

    def test_validation_errors_name_fields(self):
        with pytest.raises(ScenarioValidationError) as e:
            scenario_from_dict(
                {
                    "seed": 1,
                    "modulation": "QAM-64",
                    "snr_db": 200,
                    "snr_overrides": {"0->0": 5, "1->2": 500},
                    "mystery": True,
                }
            )
        text = "\n".join(e.value.errors)
        for path in ("modulation", "snr_db", "snr_overrides.0->0",
                     "snr_overrides.1->2", "mystery"):
            assert path in text

    def test_seed_is_required(self):
        with pytest.raises(ScenarioValidationError, match="seed"):
            scenario_from_dict({"profile": "IDEAL"})

    def test_duration_forms_are_exclusive(self):
        with pytest.raises(ScenarioValidationError, match="duration_s"):
            scenario_from_dict({"seed": 1, "duration_frames": 5, "duration_s": 9.0})
        cfg = scenario_from_dict({"seed": 1, "duration_s": 90000.0})
        assert cfg.duration_frames is None and cfg.duration_s == 90000.0

    def test_file_source_needs_path(self):
        with pytest.raises(ScenarioValidationError, match="payload_source_kwargs.path"):
            scenario_from_dict({"seed": 1, "payload_source": "FILE"})


def tiny_cfg(**over) -> ScenarioConfig:
    base = {"seed": 3, "payload_bytes": 1024, "duration_frames": 2, "profile": "IDEAL"}
    base.update(over)
    return scenario_from_dict(base)


class TestBatch:
    def test_run_writes_valid_records(self, tmp_path):
        summary = run_batch(tiny_cfg(), tmp_path)
        assert summary["frames_delivered"] == summary["frames_sent"] == 24
        assert all(m["fer"] == 0.0 for m in summary["links"].values())
        assert len(summary["links"]) == 12
        lines = (tmp_path / "snapshots.ndjson").read_text().splitlines()
        assert lines, "snapshot log empty"
        for line in lines:
            rec = json.loads(line)
            assert rec["type"] == "snapshot"
        on_disk = json.loads((tmp_path / "summary.json").read_text())
        assert on_disk == summary

    def test_byte_identical_reruns_and_modes(self, tmp_path):
        for sub, single in (("a", False), ("b", False), ("c", True)):
            run_batch(tiny_cfg(), tmp_path / sub, single_thread=single)
        ref = (tmp_path / "a" / "summary.json").read_bytes()
        assert (tmp_path / "b" / "summary.json").read_bytes() == ref
        assert (tmp_path / "c" / "summary.json").read_bytes() == ref
        ref_log = (tmp_path / "a" / "snapshots.ndjson").read_bytes()
        assert (tmp_path / "b" / "snapshots.ndjson").read_bytes() == ref_log
        assert (tmp_path / "c" / "snapshots.ndjson").read_bytes() == ref_log

    def test_real_rate_reporting_exact(self, tmp_path):
        cfg = tiny_cfg(payload_bytes=4992, duration_frames=1,
                       real_rate_reporting=True)
        summary = run_batch(cfg, tmp_path)
        assert summary["per_link_line_rate_bps"] == 99_840_000.0
        assert summary["aggregate_line_rate_bps"] == 1_198_080_000.0
        assert summary["occupied_bw_hz"] == 37_440_000.0

    def test_sweep_monotone_and_formatted(self, tmp_path):
        cfg = tiny_cfg(profile="AWGN_ONLY")
        rows = sweep(cfg, (12.0, 16.0), bits_per_point=20_000, single_thread=True)
        assert [r[0] for r in rows] == [12.0, 16.0]
        assert rows[0][1] > rows[1][1] >= 0.0
        assert all(r[2] >= 20_000 for r in rows)
        write_sweep_table(rows, tmp_path / "ber_table.txt")
        lines = (tmp_path / "ber_table.txt").read_text().splitlines()
        assert lines[0].split() == ["es_n0_db", "ber", "bits"]
        es, ber, bits = lines[1].split()
        assert float(es) == 12.0 and float(ber) > 0 and int(bits) >= 20_000

    def test_cli_run_and_errors(self, tmp_path, capsys):
        assert cli_main(["run", "--seed", "4", "--duration", "1",
                         "--out", str(tmp_path / "o")]) == 0
        out = capsys.readouterr().out
        assert "links with FER=0: 12/12" in out
        assert (tmp_path / "o" / "summary.json").exists()
        assert cli_main(["run", "--out", str(tmp_path / "x")]) == 2


class ServerHarness:
    """serve() on a background thread plus a line-oriented TCP client."""

    def __init__(self, cfg: ScenarioConfig, **serve_kwargs):
        self.port = fresh_port()
        self.ready = threading.Event()
        self.stop = threading.Event()
        kwargs = dict(
            listen=f"127.0.0.1:{self.port}",
            pace=0.0,
            ready=self.ready,
            stop=self.stop,
        )
        kwargs.update(serve_kwargs)
        self.thread = threading.Thread(target=serve, args=(cfg,), kwargs=kwargs)
        self.thread.start()
        assert self.ready.wait(60), "service did not start"

    def connect(self):
        sock = socket.create_connection(("127.0.0.1", self.port), timeout=30)
        return sock, sock.makefile("rwb")

    def shutdown(self):
        self.stop.set()
        self.thread.join(timeout=60)
        assert not self.thread.is_alive()


def read_until(f, pred, deadline_s=30.0):
    end = time.monotonic() + deadline_s
    while time.monotonic() < end:
        line = f.readline()
        if not line:
            break
        rec = json.loads(line)
        if pred(rec):
            return rec
    raise AssertionError("expected record not seen in time")


def send(f, record):
    f.write((json.dumps(record) + "\n").encode())
    f.flush()


def serve_cfg(**over) -> ScenarioConfig:
    base = {"seed": 5, "payload_bytes": 256, "duration_frames": 2000,
            "profile": "IDEAL", "telemetry_period_s": 1.0}
    base.update(over)
    return scenario_from_dict(base)


class TestServer:
    def test_hello_snapshot_and_ack_roundtrip(self):
        h = ServerHarness(serve_cfg())
        try:
            sock, f = h.connect()
            hello = json.loads(f.readline())
            assert hello["type"] == "hello" and hello["protocol"] == 1
            assert hello["aggregate_line_rate_bps"] == 48.0
            snap = read_until(f, lambda r: r["type"] == "snapshot")
            assert len(snap["links"]) == 12
            con = read_until(f, lambda r: r["type"] == "constellation")
            assert all(len(pts) <= 512 for pts in con["links"].values())
            send(f, {"control": "set_gain", "command_id": "g1",
                     "node": 2, "value": 0.5})
            ack = read_until(f, lambda r: r["type"] == "ack")
            assert ack == {"type": "ack", "command_id": "g1", "ok": True,
                           "winning_command_id": "g1"}
            sock.close()
        finally:
            h.shutdown()

    def test_nacks_and_malformed_lines_keep_connection(self):
        h = ServerHarness(serve_cfg())
        try:
            sock, f = h.connect()
            f.readline()  # hello
            f.write(b"this is not json\n")
            f.flush()
            nack = read_until(f, lambda r: r["type"] == "ack" and not r["ok"])
            assert "parse error" in nack["reason"]
            send(f, {"control": "set_gain", "command_id": "bad",
                     "node": 0, "value": -1})
            nack = read_until(
                f, lambda r: r["type"] == "ack" and r.get("command_id") == "bad"
            )
            assert not nack["ok"] and "gain" in nack["reason"]
            # the same connection still serves telemetry and valid controls
            send(f, {"control": "pause", "command_id": "ok1", "node": 1})
            ack = read_until(
                f, lambda r: r["type"] == "ack" and r.get("command_id") == "ok1"
            )
            assert ack["ok"]
            sock.close()
        finally:
            h.shutdown()

    def test_last_writer_wins_across_clients(self):
        h = ServerHarness(serve_cfg())
        try:
            s1, f1 = h.connect()
            s2, f2 = h.connect()
            f1.readline(), f2.readline()
            send(f1, {"control": "set_gain", "command_id": "first",
                      "node": 3, "value": 0.5})
            send(f2, {"control": "set_gain", "command_id": "second",
                      "node": 3, "value": 2.0})
            a1 = read_until(f1, lambda r: r["type"] == "ack")
            a2 = read_until(f2, lambda r: r["type"] == "ack")
            assert a1["ok"] and a2["ok"]
            winner = a2["winning_command_id"]
            assert winner in ("first", "second")
            # both clients are told the same winner
            assert a1["winning_command_id"] == winner
            s1.close(), s2.close()
        finally:
            h.shutdown()

    def test_slow_client_drops_do_not_stall_telemetry(self, monkeypatch):
        monkeypatch.setattr(server_mod, "CLIENT_QUEUE_DEPTH", 4)
        h = ServerHarness(serve_cfg())
        try:
            fast_sock, fast = h.connect()
            # a tiny receive window (set before connect) makes the server's
            # send block once the in-flight buffers fill during the stall
            slow_sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            slow_sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 2048)
            slow_sock.settimeout(30)
            slow_sock.connect(("127.0.0.1", h.port))
            slow = slow_sock.makefile("rwb")
            # stall the slow client; the fast one keeps seeing snapshots
            # on the simulated schedule the whole time
            stamps = []
            end = time.monotonic() + 5.0
            while time.monotonic() < end:
                rec = read_until(fast, lambda r: r["type"] == "snapshot")
                stamps.append(rec["timestamp"])
            assert len(stamps) >= 4
            assert stamps == sorted(set(stamps))
            # the stalled client's backlog is bounded and the drops reported
            dropped = read_until(
                slow,
                lambda r: r["type"] == "event" and r["event"] == "telemetry_dropped",
                deadline_s=60,
            )
            assert dropped["count"] > 0
            fast_sock.close(), slow_sock.close()
        finally:
            h.shutdown()

    def test_http_bridge_sse_control_and_static(self, tmp_path):
        (tmp_path / "index.html").write_text("<html>console</html>")
        h = ServerHarness(serve_cfg(), static_root=tmp_path)
        try:
            import http.client

            http_port = h.port + 1
            # static file
            conn = http.client.HTTPConnection("127.0.0.1", http_port, timeout=30)
            conn.request("GET", "/")
            resp = conn.getresponse()
            assert resp.status == 200 and b"console" in resp.read()
            conn.request("GET", "/nope.js")
            assert conn.getresponse().status == 404
            conn.close()
            # control POST returns exactly one ack record
            conn = http.client.HTTPConnection("127.0.0.1", http_port, timeout=30)
            body = json.dumps({"control": "set_gain", "command_id": "h1",
                               "node": 1, "value": 0.5})
            conn.request("POST", "/control", body=body,
                         headers={"Content-Type": "application/json"})
            ack = json.loads(conn.getresponse().read())
            assert ack["ok"] and ack["command_id"] == "h1"
            conn.close()
            # SSE stream carries the same records
            raw = socket.create_connection(("127.0.0.1", http_port), timeout=30)
            raw.sendall(b"GET /events HTTP/1.1\r\nHost: x\r\n\r\n")
            buf = raw.makefile("rb")
            saw_hello = saw_snapshot = False
            end = time.monotonic() + 30
            while time.monotonic() < end and not (saw_hello and saw_snapshot):
                line = buf.readline()
                if line.startswith(b"data: "):
                    rec = json.loads(line[6:])
                    saw_hello |= rec["type"] == "hello"
                    saw_snapshot |= rec["type"] == "snapshot"
            assert saw_hello and saw_snapshot
            raw.close()
        finally:
            h.shutdown()
