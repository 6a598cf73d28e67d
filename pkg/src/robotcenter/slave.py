"""Per-robot slave agent.

The agent registers with the master, reports its allocatable resources and
position every heartbeat interval, and runs launched tasks as execution
units. Like the master it is transport-agnostic: feed it envelopes with
:meth:`SlaveAgent.handle`, drive it with :meth:`SlaveAgent.tick`.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Protocol

from .master import TaskStatus
from .protocol import Envelope, Sequencer
from .resources import (
    ActuatorResource, CrCapacity, Position, ResourceError, RobotState, SensorResource,
    TaskSpec, WorkloadProfile, allocatable_view, apply_allocation, can_satisfy,
    devices_to_list, parse_resource_spec, release_allocation,
)

log = logging.getLogger(__name__)

_EPS = 1e-9


@dataclass
class SlaveConfig:
    slave_id: str
    total_cr: CrCapacity = CrCapacity(4.0, 8192.0)
    sr_res: str = ""
    ar_res: str = ""
    initial_position: Optional[Position] = None
    heartbeat_interval_s: float = 1.0
    speed_mps: float = 0.5
    master: str = "127.0.0.1:5050"

    def __post_init__(self):
        if not self.heartbeat_interval_s > 0:
            raise ValueError("heartbeat_interval_s must be > 0")
        self.sensors = parse_resource_spec(self.sr_res, SensorResource) if self.sr_res else frozenset()
        self.actuators = parse_resource_spec(self.ar_res, ActuatorResource) if self.ar_res else frozenset()
        if self.actuators and not self.speed_mps > 0:
            raise ValueError("speed_mps must be > 0 on a robot with actuators")


@dataclass
class ExecutionUnit:
    spec: TaskSpec
    started_at: float
    state: TaskStatus = TaskStatus.STAGING
    running_since: Optional[float] = None
    # straight-line trip for AR workloads that move the robot
    depart: Optional[Position] = None
    target: Optional[Position] = None
    depart_at: float = 0.0

    @property
    def profile(self) -> WorkloadProfile:
        return self.spec.profile

    @property
    def task_id(self) -> str:
        return self.spec.task_id


class ExecutionBackend(Protocol):
    """Container-like lifecycle for execution units."""

    def start(self, unit: ExecutionUnit, now: float) -> None: ...

    def kill(self, unit: ExecutionUnit, now: float) -> None: ...

    def finished(self, unit: ExecutionUnit, now: float) -> bool: ...


class SimulatedBackend:
    """Units are timers: a bounded workload finishes ``duration_s`` after it starts running."""

    def start(self, unit: ExecutionUnit, now: float) -> None:
        pass

    def kill(self, unit: ExecutionUnit, now: float) -> None:
        pass

    def finished(self, unit: ExecutionUnit, now: float) -> bool:
        d = unit.profile.duration_s
        return d is not None and unit.running_since is not None and now - unit.running_since >= d - _EPS


Send = Callable[[Envelope], None]


class SlaveAgent:
    def __init__(self, config: SlaveConfig, send: Optional[Send] = None,
                 backend: Optional[ExecutionBackend] = None):
        self.config = config
        self._send_fn: Send = send or (lambda env: None)
        self._seq = Sequencer(config.slave_id)
        self.backend = backend or SimulatedBackend()
        self.robot = RobotState(config.slave_id, config.total_cr, sensors=config.sensors,
                                actuators=config.actuators, position=config.initial_position)
        self.units: dict[str, ExecutionUnit] = {}
        self.registered = False
        self.crashed = False
        self._next_register: Optional[float] = None
        self._next_heartbeat: Optional[float] = None
        self.emitted: list[tuple[float, str, str, TaskStatus]] = []
        self.reports: list[tuple[float, dict]] = []

    @property
    def slave_id(self) -> str:
        return self.config.slave_id

    def _send(self, kind: str, body: dict) -> None:
        self._send_fn(self._seq(kind, body))

    # -- position ---------------------------------------------------------

    def position_at(self, now: float) -> Optional[Position]:
        for unit in self.units.values():
            if unit.target is not None and unit.state is TaskStatus.STAGING:
                return self._travel_position(unit, now)[0]
        return self.robot.position

    def _travel_position(self, unit: ExecutionUnit, now: float) -> tuple[Position, bool]:
        a, b = unit.depart, unit.target
        dist = math.hypot(b.x - a.x, b.y - a.y)
        covered = self.config.speed_mps * max(0.0, now - unit.depart_at)
        if covered >= dist - _EPS:
            return b, True
        f = covered / dist
        return Position(a.x + (b.x - a.x) * f, a.y + (b.y - a.y) * f), False

    # -- lifecycle --------------------------------------------------------

    def register(self, now: float) -> None:
        self._next_register = now + self.config.heartbeat_interval_s
        pos = self.position_at(now)
        self._send("RegisterSlave", {
            "slave_id": self.slave_id,
            "total_cr": self.robot.total_cr.to_dict(),
            "sensors": devices_to_list(self.robot.sensors),
            "actuators": devices_to_list(self.robot.actuators),
            "position": None if pos is None else pos.to_dict(),
        })

    def tick(self, now: float) -> None:
        if self.crashed:
            return
        if not self.registered:
            if self._next_register is None or now >= self._next_register - _EPS:
                self.register(now)
        self._advance(now)
        if self.registered and self._next_heartbeat is not None and now >= self._next_heartbeat - _EPS:
            self.heartbeat(now)
            self._next_heartbeat += self.config.heartbeat_interval_s

    def heartbeat(self, now: float) -> dict:
        cr, sensors, actuators = allocatable_view(self.robot)
        pos = self.position_at(now)
        body = {
            "slave_id": self.slave_id,
            "cr": cr.to_dict(),
            "sensors": devices_to_list(sensors),
            "actuators": devices_to_list(actuators),
            "position": None if pos is None else pos.to_dict(),
            "tasks": sorted(k for k, u in self.units.items() if not u.state.terminal),
        }
        self.reports.append((now, body))
        self._send("ResourceReport", body)
        return body

    def crash(self) -> None:
        """Stop responding entirely (simulated host failure)."""
        self.crashed = True

    def restart(self, now: float) -> None:
        """Come back as a fresh slave: local tasks are gone, registration starts over."""
        self.crashed = False
        self._reset()
        self.register(now)

    def _reset(self) -> None:
        for unit in self.units.values():
            if not unit.state.terminal:
                self.backend.kill(unit, 0.0)
        self.units.clear()
        self.robot = RobotState(self.slave_id, self.config.total_cr, sensors=self.config.sensors,
                                actuators=self.config.actuators, position=self.robot.position)
        self.registered = False
        self._next_heartbeat = None

    # -- messages ---------------------------------------------------------

    def handle(self, env: Envelope, now: float) -> None:
        if self.crashed:
            return
        kind, body = env.kind, env.body
        if kind == "SlaveRegistered":
            if not self.registered:
                self.registered = True
                self._next_heartbeat = now + self.config.heartbeat_interval_s
        elif kind == "LaunchTask":
            try:
                spec = TaskSpec.from_dict(body["task"])
            except (KeyError, TypeError, ValueError) as exc:
                self._send("Error", {"code": "invalid-task", "message": str(exc), "ref_seq": env.seq})
                return
            self.launch_task(spec, now)
        elif kind == "KillTask":
            self.kill_task(body["framework_id"], body["task_id"], now)
        elif kind == "Error":
            code = body.get("code")
            if code == "unknown-slave":
                # master forgot us (declared lost or restarted): start over
                log.warning("%s: master does not know us, re-registering", self.slave_id)
                self._reset()
                self.register(now)
            elif code != "duplicate-id":
                log.warning("%s: master error %s", self.slave_id, body)
        elif kind == "Heartbeat":
            self._send("Heartbeat", dict(body))
        else:
            log.warning("%s: ignoring unexpected %s", self.slave_id, kind)
            self._send("Error", {"code": "unexpected-kind", "message": kind, "ref_seq": env.seq})

    def _emit(self, spec: TaskSpec, status: TaskStatus, now: float, reason: Optional[str] = None) -> None:
        self.emitted.append((now, spec.framework_id, spec.task_id, status))
        body = {"framework_id": spec.framework_id, "task_id": spec.task_id,
                "slave_id": self.slave_id, "status": status.value}
        if reason:
            body["reason"] = reason
        self._send("StatusUpdate", body)

    def launch_task(self, spec: TaskSpec, now: float) -> None:
        live = self.units.get(spec.key)
        if (live is not None and not live.state.terminal) or not can_satisfy(self.robot, spec):
            self._emit(spec, TaskStatus.FAILED, now, reason="local-reject")
            return
        try:
            self.robot = apply_allocation(self.robot, spec)
        except ResourceError as exc:
            self._emit(spec, TaskStatus.FAILED, now, reason=f"local-reject: {exc}")
            return
        unit = ExecutionUnit(spec, now)
        self.units[spec.key] = unit
        self._emit(spec, TaskStatus.STAGING, now)
        here = self.position_at(now)
        if (spec.profile.moves_robot and spec.ar_required and spec.operation_position is not None
                and here is not None and here != spec.operation_position):
            unit.depart, unit.target, unit.depart_at = here, spec.operation_position, now
            self.backend.start(unit, now)
        else:
            self.backend.start(unit, now)
            self._run(unit, now)

    def _run(self, unit: ExecutionUnit, now: float) -> None:
        unit.state = TaskStatus.RUNNING
        unit.running_since = now
        self._emit(unit.spec, TaskStatus.RUNNING, now)
        if self.backend.finished(unit, now):
            self._finish(unit, TaskStatus.FINISHED, now)

    def _finish(self, unit: ExecutionUnit, status: TaskStatus, now: float,
                reason: Optional[str] = None) -> None:
        if unit.target is not None and unit.state is TaskStatus.STAGING:
            pos, _ = self._travel_position(unit, now)
            self.robot = _moved(self.robot, pos)
        unit.state = status
        self.robot = release_allocation(self.robot, unit.spec)
        self._emit(unit.spec, status, now, reason)
        del self.units[unit.spec.key]

    def _advance(self, now: float) -> None:
        for unit in list(self.units.values()):
            if unit.state is TaskStatus.STAGING and unit.target is not None:
                pos, arrived = self._travel_position(unit, now)
                if arrived:
                    self.robot = _moved(self.robot, pos)
                    unit.target = None
                    self._run(unit, now)
            elif unit.state is TaskStatus.RUNNING and self.backend.finished(unit, now):
                self._finish(unit, TaskStatus.FINISHED, now)

    def kill_task(self, framework_id: str, task_id: str, now: float) -> bool:
        unit = self.units.get(f"{framework_id}/{task_id}")
        if unit is None or unit.state.terminal:
            log.warning("%s: kill for unknown task %s/%s", self.slave_id, framework_id, task_id)
            return False
        self.backend.kill(unit, now)
        self._finish(unit, TaskStatus.KILLED, now)
        return True

    def utilization(self) -> float:
        total = sum(u.profile.cpu_fraction for u in self.units.values()
                    if u.state is TaskStatus.RUNNING)
        return min(1.0, total)


def _moved(robot: RobotState, pos: Position) -> RobotState:
    return RobotState(robot.slave_id, robot.total_cr, robot.used_cr, robot.sensors,
                      robot.actuators, robot.ar_holder, pos, robot.last_heartbeat,
                      robot.allocations)
