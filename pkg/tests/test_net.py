import asyncio
import json
import re
import struct
import subprocess
import sys
import time
from pathlib import Path

import pytest

from robotcenter.checker import check_jsonl, check_log
from robotcenter.framework import GreedyScheduler, SchedulerDriver
from robotcenter.master import MasterConfig
from robotcenter.net import MasterServer, framework_client, parse_addr, slave_client
from robotcenter.protocol import Envelope, FrameDecoder, encode
from robotcenter.resources import CrCapacity, Position, TaskSpec, WorkloadProfile
from robotcenter.slave import SlaveAgent, SlaveConfig

FAST = MasterConfig(round_interval_s=0.2, offer_ttl_s=5.0, liveness_timeout_s=2.0)


def test_parse_addr():
    assert parse_addr("10.0.0.1:5050") == ("10.0.0.1", 5050)
    with pytest.raises(ValueError):
        parse_addr("nohost")


def make_slave(sid, x, y, speed=5.0):
    cfg = SlaveConfig(sid, CrCapacity(4, 8192), "kinect:{ImageGen,LaserGen};", "wheel:{Move};",
                      Position(x, y), heartbeat_interval_s=0.2, speed_mps=speed)
    return lambda send: SlaveAgent(cfg, send=send)


def goal():
    return [
        TaskSpec("map", "", CrCapacity(2, 4096), frozenset({"LaserGen"}), frozenset({"Move"}),
                 Position(3, 4), WorkloadProfile(0.153, None, True)),
        TaskSpec("watch", "", CrCapacity(0, 0), frozenset({"ImageGen"}), frozenset(),
                 None, WorkloadProfile(0.131, 0.5, False)),
    ]


def settled(sched):
    want = {"map": "RUNNING", "watch": "FINISHED"}
    return all(p.status is not None and p.status.value == want[t] for t, p in sched.progress.items())


class TestInProcess:
    def test_end_to_end_over_tcp(self):
        async def scenario():
            async with MasterServer(FAST, port=0, tick_s=0.02) as server:
                clients = []
                for sid, x, y in (("S1", 3, 4), ("S2", 6, 8)):
                    _, c = slave_client(make_slave(sid, x, y), server.address, tick_s=0.02)
                    clients.append(c)
                sched = GreedyScheduler(goal())
                driver, fc = framework_client(
                    lambda send: SchedulerDriver(sched, "mapping", Position(0, 0), radius=12,
                                                 framework_id="F1", send=send), server.address, 0.02)
                slave_runs = [asyncio.ensure_future(c.run(timeout_s=10)) for c in clients]
                ok = await fc.run(until=lambda: settled(sched), timeout_s=10)
                for c in clients:
                    c.stopping = True
                for t in slave_runs:
                    t.cancel()
                return ok, sched, server.log.events

        ok, sched, events = asyncio.run(scenario())
        assert ok, sched.report()
        assert sched.progress["map"].slave_id == "S1"
        assert check_log(events) == []
        kinds = {e["event"] for e in events}
        assert {"slave_registered", "framework_registered", "offer_accepted"} <= kinds

    def test_client_buffers_until_master_appears(self):
        async def scenario():
            server = MasterServer(FAST, port=0, tick_s=0.02)
            await server.start()
            addr = server.address
            await server.stop()
            # nothing listens now; the slave keeps its registration in the outbox
            agent, client = slave_client(make_slave("S1", 0, 0), addr, tick_s=0.02)
            client.retry_s = 0.05
            run = asyncio.ensure_future(client.run(until=lambda: agent.registered, timeout_s=5))
            await asyncio.sleep(0.3)
            assert not agent.registered
            host, port = parse_addr(addr)
            async with MasterServer(FAST, host, port, tick_s=0.02) as again:
                ok = await run
                return ok, again.master.slaves

        ok, slaves = asyncio.run(scenario())
        assert ok and "S1" in slaves

    def test_disconnect_then_liveness_loss(self):
        async def scenario():
            async with MasterServer(FAST, port=0, tick_s=0.02) as server:
                agent, client = slave_client(make_slave("S1", 0, 0), server.address, tick_s=0.02)
                assert await client.run(until=lambda: agent.registered, timeout_s=5)
                deadline = time.monotonic() + 5
                while "S1" in server.master.slaves and time.monotonic() < deadline:
                    await asyncio.sleep(0.05)
                return server.log.events

        events = asyncio.run(scenario())
        assert [e["event"] for e in events].count("slave_lost") == 1
        assert check_log(events) == []


async def _raw_exchange(frames, read_for=0.5):
    async with MasterServer(FAST, port=0, tick_s=0.02) as server:
        host, port = parse_addr(server.address)
        reader, writer = await asyncio.open_connection(host, port)
        for f in frames:
            writer.write(f)
        await writer.drain()
        dec, got, closed = FrameDecoder(), [], False
        end = time.monotonic() + read_for
        while time.monotonic() < end:
            try:
                data = await asyncio.wait_for(reader.read(65536), 0.05)
            except asyncio.TimeoutError:
                continue
            if not data:
                closed = True
                break
            got += dec.feed(data)
        writer.close()
        return got, closed


class TestProtocolErrors:
    def test_unknown_kind_answered_and_connection_kept(self):
        payload = b'{"body":{},"kind":"FooBar","sender_id":"x","seq":4}'
        register = encode(Envelope("RegisterFramework", 5, "F9", {
            "framework_id": "F9", "name": "n", "position": {"x": 0, "y": 0}, "radius": None}))
        got, closed = asyncio.run(_raw_exchange([struct.pack(">I", len(payload)) + payload, register]))
        assert got[0].kind == "Error" and got[0].body["code"] == "unknown-kind"
        assert got[0].body["ref_seq"] == 4
        assert any(e.kind == "FrameworkRegistered" for e in got[1:])
        assert not closed

    def test_bad_json_answered(self):
        got, closed = asyncio.run(_raw_exchange([struct.pack(">I", 3) + b"{x}"]))
        assert got[0].kind == "Error" and got[0].body["code"] == "malformed-frame"
        assert not closed

    def test_oversize_prefix_closes_connection(self):
        got, closed = asyncio.run(_raw_exchange([struct.pack(">I", 1 << 30)]))
        assert got[0].kind == "Error"
        assert closed


ROOT = Path(__file__).resolve().parents[1]


def cli(*args):
    return [sys.executable, "-m", "robotcenter.cli", *args]


@pytest.fixture
def master_proc(tmp_path):
    log = tmp_path / "events.jsonl"
    p = subprocess.Popen(cli("master", "--listen", "127.0.0.1:0", "--round-interval-ms", "200",
                             "--liveness-timeout-ms", "3000", "--event-log", str(log), "--duration", "30"),
                         stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
    line = p.stdout.readline()
    m = re.search(r"listening on (\S+)", line)
    assert m, line + p.stderr.read()
    yield m.group(1), log
    p.terminate()
    p.wait(timeout=5)


class TestCli:
    def test_processes_reach_goal(self, master_proc, tmp_path):
        addr, log = master_proc
        slaves = [subprocess.Popen(cli("slave", "--master", addr, "--id", sid, "--sr_res",
                                       "kinect:{ImageGen,LaserGen};", "--ar_res", "wheel:{Move};",
                                       "--pos", pos, "--speed", "5", "--heartbeat-ms", "200",
                                       "--duration", "30"),
                                   stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
                  for sid, pos in (("S1", "3,4"), ("S2", "6,8"))]
        goal_file = tmp_path / "goal.json"
        goal_file.write_text(json.dumps({"tasks": [t.to_dict() for t in goal()]}))
        try:
            done = subprocess.run(cli("framework", "--master", addr, "--pos", "0,0", "--radius", "12",
                                      "--goal", str(goal_file), "--id", "F1", "--timeout", "20"),
                                  capture_output=True, text=True, timeout=40)
        finally:
            for s in slaves:
                s.terminate()
                s.wait(timeout=5)
        assert done.returncode == 0, done.stdout + done.stderr
        report = json.loads(done.stdout)["tasks"]
        assert report["map"]["status"] == "RUNNING" and report["watch"]["status"] == "FINISHED"
        text = log.read_text()
        assert check_jsonl(text) == []
        chk = subprocess.run(cli("check", str(log)), capture_output=True, text=True)
        assert chk.returncode == 0, chk.stdout

    def test_sim_exit_codes(self, tmp_path):
        shipped = ROOT / "src" / "robotcenter" / "scenarios" / "offer_example.json"
        ok = subprocess.run(cli("sim", "--scenario", str(shipped), "--out", str(tmp_path / "a")),
                            capture_output=True, text=True)
        assert ok.returncode == 0, ok.stderr
        assert {p.name for p in (tmp_path / "a").iterdir()} >= {"utilization.csv", "events.jsonl",
                                                                "outcome.json"}
        d = json.loads(shipped.read_text())
        d["frameworks"][0]["goal"][0]["expect"] = "FINISHED"
        (tmp_path / "unmet.json").write_text(json.dumps(d))
        unmet = subprocess.run(cli("sim", "--scenario", str(tmp_path / "unmet.json")),
                               capture_output=True, text=True)
        assert unmet.returncode == 1
        d["tick_ms"] = 0
        (tmp_path / "bad.json").write_text(json.dumps(d))
        bad = subprocess.run(cli("sim", "--scenario", str(tmp_path / "bad.json")),
                             capture_output=True, text=True)
        assert bad.returncode == 2 and "tick_ms" in bad.stderr

    def test_check_flags_tampered_log(self, tmp_path):
        out = tmp_path / "run"
        subprocess.run(cli("sim", "--scenario", "random", "--seed", "4", "--out", str(out)), check=True,
                       capture_output=True)
        lines = (out / "events.jsonl").read_text().splitlines()
        i = next(i for i, l in enumerate(lines) if '"offer_accepted"' in l)
        ev = json.loads(lines[i])
        ev["free_cr"]["cpus"] += 1
        lines[i] = json.dumps(ev)
        (tmp_path / "bad.jsonl").write_text("\n".join(lines) + "\n")
        r = subprocess.run(cli("check", str(tmp_path / "bad.jsonl")), capture_output=True, text=True)
        assert r.returncode == 1 and "master says free" in r.stdout
