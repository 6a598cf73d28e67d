"""Deterministic single-process simulation.

A :class:`World` wires one master, its slaves and its frameworks to a virtual
clock and an in-process message bus. Every message still goes through the
wire codec, so simulation exercises the same bytes TCP mode would send.
Nothing here reads the wall clock: a scenario and a seed fully determine the
event log and the metrics.
"""
from __future__ import annotations

import csv
import heapq
import io
import json
import math
import os
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from . import protocol
from .framework import SchedulerDriver, make_scheduler
from .master import EventLog, Master, MasterConfig
from .resources import CrCapacity, Position, ResourceError, TaskSpec, format_resource_spec
from .slave import SlaveAgent, SlaveConfig

MASTER = "master"


class ScenarioInvalid(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class RobotSpec:
    config: SlaveConfig
    fail_at_s: Optional[float] = None
    rejoin_at_s: Optional[float] = None


@dataclass
class FrameworkSpec:
    framework_id: str
    name: str
    position: Position
    goal: list[TaskSpec]
    radius: float = math.inf
    max_offers: Optional[int] = None
    start_s: float = 0.0
    scheduler: str = "greedy"
    options: dict = field(default_factory=dict)
    expect: dict = field(default_factory=dict)  # task_id -> status name, or None for "any"


@dataclass
class Scenario:
    robots: list[RobotSpec] = field(default_factory=list)
    frameworks: list[FrameworkSpec] = field(default_factory=list)
    tick_ms: int = 100
    end_s: float = 0.0
    sample_s: float = 1.0
    master: MasterConfig = field(default_factory=MasterConfig)
    latency_ms: dict = field(default_factory=dict)  # "master_slave" / "master_framework"
    name: str = "scenario"

    @classmethod
    def from_dict(cls, d: dict) -> Scenario:
        return _parse_scenario(d)

    @classmethod
    def load(cls, path: Union[str, os.PathLike]) -> Scenario:
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _default_expect(spec: TaskSpec) -> str:
    return "RUNNING" if spec.profile.duration_s is None else "FINISHED"


def _parse_scenario(d: dict) -> Scenario:
    def req(obj: dict, key: str, path: str):
        if key not in obj:
            raise ScenarioInvalid(f"{path}.{key}", "missing")
        return obj[key]

    try:
        tick_ms = int(d.get("tick_ms", 100))
        end_s = float(d.get("end_s", 0.0))
        if tick_ms <= 0:
            raise ScenarioInvalid("tick_ms", "must be > 0")
        if end_s < 0:
            raise ScenarioInvalid("end_s", "must be >= 0")
        sample_s = float(d.get("sample_s", 1.0))
        if sample_s <= 0 or round(sample_s * 1000) % tick_ms:
            raise ScenarioInvalid("sample_s", "must be a positive multiple of tick_ms")
        try:
            master = MasterConfig(**d.get("master", {}))
        except (TypeError, ValueError) as exc:
            raise ScenarioInvalid("master", str(exc)) from None
        latency = {k: int(v) for k, v in d.get("latency_ms", {}).items()}
        for k, v in latency.items():
            if k not in ("master_slave", "master_framework") or v < 0:
                raise ScenarioInvalid(f"latency_ms.{k}", "unknown link class or negative delay")

        robots = []
        seen = set()
        for i, r in enumerate(d.get("robots", [])):
            path = f"robots[{i}]"
            sid = req(r, "slave_id", path)
            if sid in seen or sid == MASTER:
                raise ScenarioInvalid(f"{path}.slave_id", f"duplicate id {sid!r}")
            seen.add(sid)
            try:
                cfg = SlaveConfig(
                    slave_id=sid,
                    total_cr=CrCapacity.from_dict(req(r, "total_cr", path)),
                    sr_res=r.get("sr_res", ""),
                    ar_res=r.get("ar_res", ""),
                    initial_position=Position.from_dict(r.get("position")),
                    heartbeat_interval_s=float(r.get("heartbeat_interval_s", 1.0)),
                    speed_mps=float(r.get("speed_mps", 0.5)),
                )
            except ScenarioInvalid:
                raise
            except (ResourceError, ValueError) as exc:
                raise ScenarioInvalid(path, str(exc)) from None
            fail_at, rejoin_at = r.get("fail_at_s"), r.get("rejoin_at_s")
            if rejoin_at is not None and (fail_at is None or rejoin_at <= fail_at):
                raise ScenarioInvalid(f"{path}.rejoin_at_s", "needs an earlier fail_at_s")
            robots.append(RobotSpec(cfg, fail_at, rejoin_at))

        frameworks = []
        for i, f in enumerate(d.get("frameworks", [])):
            path = f"frameworks[{i}]"
            fid = req(f, "framework_id", path)
            if fid in seen or fid == MASTER:
                raise ScenarioInvalid(f"{path}.framework_id", f"duplicate id {fid!r}")
            seen.add(fid)
            start_s = float(f.get("start_s", 0.0))
            if end_s and start_s >= end_s:
                raise ScenarioInvalid(f"{path}.start_s", "must be < end_s")
            goal, expect = [], {}
            for j, t in enumerate(f.get("goal", [])):
                try:
                    spec = TaskSpec.from_dict(t, framework_id=fid)
                except (KeyError, ResourceError, ValueError, TypeError) as exc:
                    raise ScenarioInvalid(f"{path}.goal[{j}]", str(exc)) from None
                goal.append(spec)
                expect[spec.task_id] = t.get("expect", _default_expect(spec))
            radius = f.get("radius")
            radius = math.inf if radius is None else float(radius)
            if not radius > 0:
                raise ScenarioInvalid(f"{path}.radius", "must be > 0")
            options = {}
            if "pins" in f:
                options["pins"] = dict(f["pins"])
            if "script" in f:
                options["script"] = [tuple(s) for s in f["script"]]
            if "retry_cap" in f:
                options["retry_cap"] = int(f["retry_cap"])
            scheduler = f.get("scheduler", "greedy")
            if scheduler not in ("greedy", "scripted", "silent"):
                raise ScenarioInvalid(f"{path}.scheduler", f"unknown scheduler {scheduler!r}")
            if scheduler == "greedy" and set(options) - {"retry_cap"}:
                raise ScenarioInvalid(f"{path}", "pins/script need the scripted scheduler")
            frameworks.append(FrameworkSpec(
                framework_id=fid, name=f.get("name", fid),
                position=Position.from_dict(req(f, "position", path)),
                goal=goal, radius=radius, max_offers=f.get("max_offers"),
                start_s=start_s, scheduler=scheduler, options=options, expect=expect))
    except ScenarioInvalid:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioInvalid("<root>", str(exc)) from None
    return Scenario(robots, frameworks, tick_ms, end_s, sample_s, master, latency,
                    d.get("name", "scenario"))


def scenario_to_dict(s: Scenario) -> dict:
    """Inverse of :meth:`Scenario.from_dict` (modulo defaults)."""
    m = s.master
    return {
        "name": s.name,
        "tick_ms": s.tick_ms,
        "end_s": s.end_s,
        "sample_s": s.sample_s,
        "master": {"round_interval_s": m.round_interval_s, "offer_ttl_s": m.offer_ttl_s,
                   "liveness_timeout_s": m.liveness_timeout_s, "policy": m.policy,
                   "max_offers": m.max_offers},
        "latency_ms": dict(s.latency_ms),
        "robots": [{
            "slave_id": r.config.slave_id,
            "total_cr": r.config.total_cr.to_dict(),
            "sr_res": format_resource_spec(r.config.sensors),
            "ar_res": format_resource_spec(r.config.actuators),
            "position": None if r.config.initial_position is None else r.config.initial_position.to_dict(),
            "heartbeat_interval_s": r.config.heartbeat_interval_s,
            "speed_mps": r.config.speed_mps,
            "fail_at_s": r.fail_at_s,
            "rejoin_at_s": r.rejoin_at_s,
        } for r in s.robots],
        "frameworks": [{
            "framework_id": f.framework_id, "name": f.name, "position": f.position.to_dict(),
            "radius": None if math.isinf(f.radius) else f.radius, "max_offers": f.max_offers,
            "start_s": f.start_s, "scheduler": f.scheduler,
            **({"pins": f.options["pins"]} if "pins" in f.options else {}),
            **({"script": [list(x) for x in f.options["script"]]} if "script" in f.options else {}),
            **({"retry_cap": f.options["retry_cap"]} if "retry_cap" in f.options else {}),
            "goal": [{**t.to_dict(), "expect": f.expect.get(t.task_id)} for t in f.goal],
        } for f in s.frameworks],
    }


@dataclass
class MetricsSeries:
    samples: list[tuple[float, str, float]] = field(default_factory=list)

    def robot(self, robot_id: str) -> list[tuple[float, float]]:
        return [(t, v) for t, r, v in self.samples if r == robot_id]

    def mean(self, robot_id: str, t0: float = -math.inf, t1: float = math.inf) -> float:
        """Mean utilization over samples with t0 <= t < t1."""
        vals = [v for t, v in self.robot(robot_id) if t0 <= t < t1]
        return sum(vals) / len(vals) if vals else 0.0

    def summary(self) -> dict:
        out = {}
        for rid in sorted({r for _, r, _ in self.samples}):
            vals = [v for _, v in self.robot(rid)]
            out[rid] = {"mean": sum(vals) / len(vals), "max": max(vals), "samples": len(vals)}
        return out


class World:
    def __init__(self, scenario: Scenario, seed: int = 0):
        self.scenario = scenario
        self.seed = seed
        self.rng = random.Random(seed)
        self.log = EventLog()
        self.metrics = MetricsSeries()
        self.tick_index = 0
        self._queue: list = []
        self._qseq = 0
        self.delivered = 0
        self.master = Master(scenario.master, send=self._from_master, log=self.log, master_id=MASTER)
        self.slaves: dict[str, SlaveAgent] = {}
        self._robot_specs = {r.config.slave_id: r for r in scenario.robots}
        self._fired: set[tuple[str, str]] = set()  # (slave_id, "fail" | "rejoin"), each fires once
        for r in scenario.robots:
            sid = r.config.slave_id
            self.slaves[sid] = SlaveAgent(r.config, send=self._sender(sid, "master_slave"))
        self.drivers: dict[str, SchedulerDriver] = {}
        for f in scenario.frameworks:
            sched = make_scheduler(f.scheduler, list(f.goal), **f.options)
            self.drivers[f.framework_id] = SchedulerDriver(
                sched, f.name, f.position, f.radius, f.max_offers, framework_id=f.framework_id,
                send=self._sender(f.framework_id, "master_framework"), start_at=f.start_s)
        self._link = {sid: "master_slave" for sid in self.slaves}
        self._link.update({fid: "master_framework" for fid in self.drivers})
        self._sample_ticks = round(scenario.sample_s * 1000) // scenario.tick_ms

    @property
    def now(self) -> float:
        return self.tick_index * self.scenario.tick_ms / 1000.0

    @property
    def now_ms(self) -> int:
        return self.tick_index * self.scenario.tick_ms

    def _enqueue(self, src: str, dst: str, link: str, env: protocol.Envelope) -> None:
        at = self.now_ms + self.scenario.latency_ms.get(link, 0)
        self._qseq += 1
        heapq.heappush(self._queue, (at, self._qseq, src, dst, protocol.encode(env)))

    def _sender(self, node: str, link: str):
        return lambda env: self._enqueue(node, MASTER, link, env)

    def _from_master(self, addr, env: protocol.Envelope) -> None:
        self._enqueue(MASTER, addr, self._link[addr], env)

    def _deliver(self) -> None:
        now, now_ms = self.now, self.now_ms
        while self._queue and self._queue[0][0] <= now_ms:
            _, _, src, dst, frame = heapq.heappop(self._queue)
            env = protocol.decode(frame)
            self.delivered += 1
            if dst == MASTER:
                self.master.handle(env, now, addr=src)
            elif dst in self.slaves:
                self.slaves[dst].handle(env, now)
            else:
                self.drivers[dst].handle(env, now)

    def step(self) -> None:
        """Run every timer due at the current instant, then deliver due messages."""
        now = self.now
        for sid, spec in self._robot_specs.items():
            slave = self.slaves[sid]
            if self._once(sid, "fail", spec.fail_at_s, now):
                slave.crash()
            if slave.crashed and self._once(sid, "rejoin", spec.rejoin_at_s, now):
                slave.restart(now)
        for slave in self.slaves.values():
            slave.tick(now)
        self.master.tick(now)
        for driver in self.drivers.values():
            driver.tick(now)
        self._deliver()
        if self.tick_index > 0 and self.tick_index % self._sample_ticks == 0:
            for sid, slave in self.slaves.items():
                self.metrics.samples.append((now, sid, 0.0 if slave.crashed else slave.utilization()))

    def _once(self, sid: str, what: str, at: Optional[float], now: float) -> bool:
        if at is None or (sid, what) in self._fired or not _due(now, at):
            return False
        self._fired.add((sid, what))
        return True

    def run(self, until_s: Optional[float] = None) -> None:
        end_ms = round((self.scenario.end_s if until_s is None else until_s) * 1000)
        if self.tick_index == 0 and not self.log.events and not self._queue:
            self.step()
        while self.now_ms + self.scenario.tick_ms <= end_ms:
            self.tick_index += 1
            self.step()

    def outcome(self) -> dict:
        """Final task states per framework, and whether each met its expectation."""
        result = {}
        for f in self.scenario.frameworks:
            sched = self.drivers[f.framework_id].scheduler
            tasks = {}
            for tid, p in sched.progress.items():
                final = "UNPLACED" if p.gave_up == "unplaceable" else (
                    None if p.status is None else p.status.value)
                expected = f.expect.get(tid)
                tasks[tid] = {"status": final, "expect": expected,
                              "ok": expected is None or expected == final}
            result[f.framework_id] = tasks
        return result

    def ok(self) -> bool:
        return all(t["ok"] for tasks in self.outcome().values() for t in tasks.values())


def _due(now: float, at: float) -> bool:
    return now * 1000 >= round(at * 1000)


@dataclass
class SimResult:
    world: World
    metrics: MetricsSeries
    log: EventLog

    @property
    def ok(self) -> bool:
        return self.world.ok()


def run_scenario(scenario: Scenario, seed: int = 0) -> SimResult:
    world = World(scenario, seed)
    if scenario.robots or scenario.frameworks:
        world.run()
    return SimResult(world, world.metrics, world.log)


def utilization_csv(series: MetricsSeries) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t_s", "robot_id", "fraction"])
    for t, rid, v in series.samples:
        w.writerow([f"{t:.3f}", rid, f"{v:.6f}"])
    return buf.getvalue()


def emit_metrics(result: SimResult, out_dir: Union[str, os.PathLike]) -> dict[str, Path]:
    """Write ``utilization.csv`` and ``events.jsonl`` into ``out_dir``."""
    out = Path(out_dir)
    paths = {"utilization": out / "utilization.csv", "events": out / "events.jsonl"}
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths["utilization"].write_text(utilization_csv(result.metrics), encoding="utf-8")
        paths["events"].write_text(result.log.dumps(), encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write metrics to {out}: {exc}") from exc
    return paths


# -- randomized scenarios ----------------------------------------------------

_SENSOR_POOL = [("kinect", ("ImageGen", "LaserGen")), ("cam", ("ImageGen",)),
                ("lidar", ("LaserGen",)), ("gps", ("Locate",))]
_ACTUATOR_POOL = [("wheel", ("Move",)), ("arm", ("Grasp",)), ("prop", ("Fly", "Move"))]


def random_scenario(seed: int, end_s: float = 40.0, tick_ms: int = 100) -> Scenario:
    """A scenario mixing task kinds, declines, kills, expiries and slave losses."""
    rng = random.Random(seed)
    robots = []
    for i in range(rng.randint(2, 5)):
        cloud = rng.random() < 0.15
        sensors = [] if cloud else rng.sample(_SENSOR_POOL, rng.randint(0, 2))
        actuators = [] if cloud else rng.sample(_ACTUATOR_POOL, rng.randint(0, 1))
        robots.append({
            "slave_id": f"S{i + 1}",
            "total_cr": {"cpus": float(rng.choice([1, 2, 4, 8])), "mem_mb": float(rng.choice([2048, 4096, 8192]))},
            "sr_res": "".join(f"{n}:{{{','.join(f)}}};" for n, f in sensors),
            "ar_res": "".join(f"{n}:{{{','.join(f)}}};" for n, f in actuators),
            "position": None if cloud else {"x": round(rng.uniform(0, 20), 2), "y": round(rng.uniform(0, 20), 2)},
            "speed_mps": round(rng.uniform(0.5, 2.0), 2),
            "fail_at_s": round(rng.uniform(5, end_s - 5), 1) if rng.random() < 0.25 else None,
        })
        if robots[-1]["fail_at_s"] is not None and rng.random() < 0.5:
            robots[-1]["rejoin_at_s"] = round(robots[-1]["fail_at_s"] + rng.uniform(12, 20), 1)
    frameworks = []
    for j in range(rng.randint(1, 4)):
        fid = f"F{j + 1}"
        goal = []
        for k in range(rng.randint(1, 5)):
            kind = rng.choice(["SR", "CR", "CR-SR", "AR-CR-SR", "AR"])
            cr = {"cpus": 0.0, "mem_mb": 0.0}
            if "CR" in kind:
                cr = {"cpus": rng.choice([0.5, 1.0, 2.0]), "mem_mb": float(rng.choice([256, 1024, 2048]))}
            sr = [rng.choice(["ImageGen", "LaserGen"])] if "SR" in kind else []
            ar = ["Move"] if "AR" in kind else []
            op = {"x": round(rng.uniform(0, 20), 2), "y": round(rng.uniform(0, 20), 2)}
            dur = rng.choice([None, round(rng.uniform(1, 15), 1)])
            goal.append({"task_id": f"t{k + 1}", "cr_demand": cr, "sr_required": sr,
                         "ar_required": ar, "operation_position": op,
                         "profile": {"cpu_fraction": round(rng.uniform(0.01, 0.4), 3),
                                     "duration_s": dur, "moves_robot": bool(ar)},
                         "expect": None})
        sched = rng.choice(["greedy", "greedy", "scripted", "silent"])
        fw = {"framework_id": fid, "name": f"fw{j + 1}",
              "position": {"x": round(rng.uniform(0, 20), 2), "y": round(rng.uniform(0, 20), 2)},
              "radius": rng.choice([None, 8.0, 15.0, 30.0]), "max_offers": rng.randint(1, 5),
              "start_s": round(rng.uniform(0, end_s / 2), 1), "scheduler": sched, "goal": goal}
        if sched == "scripted":
            fw["script"] = sorted([[round(rng.uniform(fw["start_s"], end_s), 1), "kill", t["task_id"]]
                                   for t in goal if rng.random() < 0.5])
            if rng.random() < 0.3:
                fw["script"].append([round(rng.uniform(fw["start_s"] + 1, end_s), 1), "set_filter", 40.0])
                fw["script"].sort()
        frameworks.append(fw)
    return Scenario.from_dict({"name": f"random-{seed}", "tick_ms": tick_ms, "end_s": end_s,
                               "robots": robots, "frameworks": frameworks})
