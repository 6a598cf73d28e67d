"""``robotcenter`` command line: run nodes over TCP, simulate, and reproduce experiments."""
from __future__ import annotations

import argparse
import asyncio
import json
import logging
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

from .checker import check_jsonl
from .framework import SchedulerDriver, make_scheduler
from .master import MasterConfig, TaskStatus
from .net import MasterServer, framework_client, parse_addr, slave_client
from .resources import CrCapacity, Position, ResourceError, TaskSpec
from .sim import Scenario, ScenarioInvalid, emit_metrics, random_scenario, run_scenario
from .slave import SlaveAgent, SlaveConfig


def load_goal(path: str) -> tuple[list[TaskSpec], dict[str, str]]:
    """Read a goal file: a list of task objects, or ``{"tasks": [...]}``.

    Each task may carry ``expect`` (the status that counts as success); the
    default is RUNNING for unbounded tasks and FINISHED otherwise.
    """
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    items = data["tasks"] if isinstance(data, dict) else data
    goal, expect = [], {}
    for t in items:
        spec = TaskSpec.from_dict(t, framework_id=t.get("framework_id", ""))
        goal.append(spec)
        expect[spec.task_id] = t.get("expect") or (
            "RUNNING" if spec.profile.duration_s is None else "FINISHED")
    return goal, expect


def goal_met(scheduler, expect: dict[str, str]) -> bool:
    for tid, p in scheduler.progress.items():
        if p.gave_up or p.status is None:
            return False
        want = TaskStatus(expect[tid])
        if p.status is not want:
            return False
    return True


def goal_settled(scheduler, expect: dict[str, str]) -> bool:
    """Every task reached its target or can no longer get there."""
    for tid, p in scheduler.progress.items():
        if p.gave_up:
            continue
        if p.status is None or (p.status is not TaskStatus(expect[tid]) and not p.status.terminal):
            return False
        if p.status.terminal and tid in scheduler.pending:
            return False
    return True


def _position(text: str) -> Position:
    try:
        return Position.parse(text)
    except (ResourceError, ValueError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _radius(text: str) -> float:
    r = float(text)
    if not r > 0:
        raise argparse.ArgumentTypeError("radius must be > 0")
    return r


# -- subcommands ---------------------------------------------------------------

def cmd_master(args) -> int:
    host, port = parse_addr(args.listen)
    config = MasterConfig(round_interval_s=args.round_interval_ms / 1000,
                          offer_ttl_s=args.offer_ttl_ms / 1000,
                          liveness_timeout_s=args.liveness_timeout_ms / 1000,
                          policy=args.policy)
    sink = open(args.event_log, "a", encoding="utf-8", buffering=1) if args.event_log else None
    server = MasterServer(config, host, port, event_sink=sink)
    try:
        asyncio.run(_serve_master(server, args.duration))
    except KeyboardInterrupt:
        pass
    finally:
        if sink is not None:
            sink.close()
    return 0


async def _serve_master(server: MasterServer, duration: Optional[float]) -> None:
    await server.start()
    print(f"listening on {server.address}", flush=True)
    try:
        if duration is None:
            await asyncio.Event().wait()
        else:
            await asyncio.sleep(duration)
    finally:
        await server.stop()


def cmd_slave(args) -> int:
    config = SlaveConfig(args.id, CrCapacity(args.cpus, args.mem_mb), args.sr_res, args.ar_res,
                         args.pos, args.heartbeat_ms / 1000, args.speed, args.master)
    agent, client = slave_client(lambda send: SlaveAgent(config, send=send), args.master)
    try:
        asyncio.run(client.run(timeout_s=args.duration))
    except KeyboardInterrupt:
        pass
    return 0


def cmd_framework(args) -> int:
    goal, expect = load_goal(args.goal)
    scheduler = make_scheduler("greedy", goal, retry_cap=args.retry_cap)
    name = args.name or Path(args.goal).stem
    driver, client = framework_client(
        lambda send: SchedulerDriver(scheduler, name, args.pos, args.radius, args.max_offers,
                                     framework_id=args.id, send=send),
        args.master)
    try:
        asyncio.run(client.run(until=lambda: goal_settled(scheduler, expect),
                               timeout_s=args.timeout))
    except KeyboardInterrupt:
        pass
    report = {"framework_id": driver.framework_id, "tasks": scheduler.report(),
              "ok": goal_met(scheduler, expect)}
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0 if report["ok"] else 1


def cmd_sim(args) -> int:
    try:
        if args.scenario == "random":
            scenario = random_scenario(args.seed)
        else:
            scenario = Scenario.load(args.scenario)
    except ScenarioInvalid as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return 2
    result = run_scenario(scenario, args.seed)
    outcome = result.world.outcome()
    if args.out:
        emit_metrics(result, args.out)
        Path(args.out, "outcome.json").write_text(
            json.dumps(outcome, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    bad = [f"{fid}/{tid}: {t['status']} (expected {t['expect']})"
           for fid, tasks in outcome.items() for tid, t in tasks.items() if not t["ok"]]
    for line in bad:
        print(line, file=sys.stderr)
    print(f"{scenario.name}: {len(result.log.events)} events, "
          f"{sum(len(t) for t in outcome.values()) - len(bad)}/{sum(len(t) for t in outcome.values())} tasks ok")
    return 0 if result.ok else 1


def cmd_exp(args) -> int:
    from .experiments import exp_rtt, exp_sharing, rtt_csv

    if args.which == "sharing":
        report = exp_sharing(args.out)
        print(json.dumps(report, indent=2, sort_keys=True))
        return 0 if report["all_tasks_ok"] else 1
    rows = exp_rtt(args.out, probes=args.probes, delay_s=args.delay_ms / 1000,
                   fast_probes=args.fast_probes)
    sys.stdout.write(rtt_csv(rows))
    return 0 if all(r["failures"] == 0 for r in rows) else 1


def cmd_check(args) -> int:
    violations = check_jsonl(Path(args.events).read_text(encoding="utf-8"))
    for v in violations:
        print(v)
    print(f"{len(violations)} violation(s)")
    return 0 if not violations else 1


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="robotcenter", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("master", help="run the master over TCP")
    m.add_argument("--listen", default="127.0.0.1:5050")
    m.add_argument("--round-interval-ms", type=int, default=1000)
    m.add_argument("--offer-ttl-ms", type=int, default=10000)
    m.add_argument("--liveness-timeout-ms", type=int, default=10000)
    m.add_argument("--policy", default="location")
    m.add_argument("--event-log", help="append events as JSON lines to this file")
    m.add_argument("--duration", type=float, help="exit after this many seconds")
    m.set_defaults(func=cmd_master)

    s = sub.add_parser("slave", help="run one robot's slave agent")
    s.add_argument("--master", default="127.0.0.1:5050")
    s.add_argument("--id", required=True)
    s.add_argument("--cpus", type=float, default=4.0)
    s.add_argument("--mem-mb", type=float, default=8192.0)
    s.add_argument("--sr_res", default="", help='e.g. "kinect:{ImageGen,LaserGen};"')
    s.add_argument("--ar_res", default="", help='e.g. "wheel:{Move};"')
    s.add_argument("--pos", type=_position, help="x,y in meters; omit for a compute-only node")
    s.add_argument("--speed", type=float, default=0.5)
    s.add_argument("--heartbeat-ms", type=int, default=1000)
    s.add_argument("--duration", type=float)
    s.set_defaults(func=cmd_slave)

    f = sub.add_parser("framework", help="run the greedy reference framework on a goal file")
    f.add_argument("--master", default="127.0.0.1:5050")
    f.add_argument("--pos", type=_position, required=True)
    f.add_argument("--radius", type=_radius, default=math.inf)
    f.add_argument("--max-offers", type=int)
    f.add_argument("--goal", required=True)
    f.add_argument("--id")
    f.add_argument("--name")
    f.add_argument("--retry-cap", type=int, default=3)
    f.add_argument("--timeout", type=float, default=60.0)
    f.set_defaults(func=cmd_framework)

    sm = sub.add_parser("sim", help="run a scenario in virtual time")
    sm.add_argument("--scenario", required=True, help="scenario file, or 'random'")
    sm.add_argument("--seed", type=int, default=0)
    sm.add_argument("--out")
    sm.set_defaults(func=cmd_sim)

    e = sub.add_parser("exp", help="reproduce an experiment")
    e.add_argument("which", choices=["sharing", "rtt"])
    e.add_argument("--out")
    e.add_argument("--probes", type=int, default=30)
    e.add_argument("--fast-probes", type=int, default=300)
    e.add_argument("--delay-ms", type=float, default=50.0)
    e.set_defaults(func=cmd_exp)

    c = sub.add_parser("check", help="replay an event log through the ledger checker")
    c.add_argument("events")
    c.set_defaults(func=cmd_check)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, ResourceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
