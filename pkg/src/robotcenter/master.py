"""The master: resource pool, offer lifecycle, task records and liveness.

The master is a pure event-driven state machine. Transports feed it decoded
envelopes through :meth:`Master.handle` and drive timers through
:meth:`Master.tick`; it answers through the ``send(addr, envelope)`` callable
given at construction. ``addr`` is whatever the transport uses to reach a
peer (a node name in simulation, a connection in TCP mode).

Every state change is written to an :class:`EventLog`. Resource-affecting
events carry ``free_cr``, the master's own view of the unreserved CR on the
affected slave, so an independent replay can cross-check the books.
"""
from __future__ import annotations

import io
import json
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Hashable, Iterable, Optional, TextIO

from .allocator import OFFERED, AllocationRequest, ScoredSlave, allocation_round, get_policy
from .protocol import Envelope, Sequencer
from .resources import (
    CrCapacity, Position, ResourceError, RobotState, TaskSpec, ZERO_CR,
    actuators_from_list, apply_allocation, classify_task, devices_to_list,
    release_allocation, sensors_from_list,
)

log = logging.getLogger(__name__)


class TaskStatus(str, Enum):
    STAGING = "STAGING"
    RUNNING = "RUNNING"
    FINISHED = "FINISHED"
    FAILED = "FAILED"
    KILLED = "KILLED"
    LOST = "LOST"

    @property
    def terminal(self) -> bool:
        return self in TERMINAL


TERMINAL = frozenset({TaskStatus.FINISHED, TaskStatus.FAILED, TaskStatus.KILLED, TaskStatus.LOST})

LEGAL_TRANSITIONS = {
    TaskStatus.STAGING: frozenset({TaskStatus.RUNNING, TaskStatus.FAILED, TaskStatus.LOST, TaskStatus.KILLED}),
    TaskStatus.RUNNING: frozenset({TaskStatus.FINISHED, TaskStatus.FAILED, TaskStatus.KILLED, TaskStatus.LOST}),
}


def legal_transition(old: TaskStatus, new: TaskStatus) -> bool:
    return new in LEGAL_TRANSITIONS.get(old, ())


class MasterError(Exception):
    def __init__(self, code: str, message: str = ""):
        super().__init__(f"{code}: {message}" if message else code)
        self.code = code


def _radius_to_wire(r: float) -> Optional[float]:
    return None if math.isinf(r) else r


def _radius_from_wire(r: Any, default: float) -> float:
    return default if r is None else float(r)


@dataclass(frozen=True)
class Offer:
    offer_id: str
    framework_id: str
    slave_id: str
    cr: CrCapacity
    sensors: frozenset
    actuators: frozenset
    position: Optional[Position]
    score: float
    issued_at: float
    ttl: float

    @property
    def sensor_functions(self) -> frozenset:
        return frozenset().union(*(s.functions for s in self.sensors))

    @property
    def actuator_functions(self) -> frozenset:
        return frozenset().union(*(a.functions for a in self.actuators))

    def expired(self, now: float) -> bool:
        return now - self.issued_at > self.ttl

    def to_dict(self) -> dict:
        return {
            "offer_id": self.offer_id,
            "framework_id": self.framework_id,
            "slave_id": self.slave_id,
            "cr": self.cr.to_dict(),
            "sensors": devices_to_list(self.sensors),
            "actuators": devices_to_list(self.actuators),
            "position": None if self.position is None else self.position.to_dict(),
            "score": None if math.isinf(self.score) else self.score,
            "issued_at": self.issued_at,
            "ttl": self.ttl,
        }

    @classmethod
    def from_dict(cls, d: dict) -> Offer:
        return cls(
            offer_id=d["offer_id"],
            framework_id=d["framework_id"],
            slave_id=d["slave_id"],
            cr=CrCapacity.from_dict(d["cr"]),
            sensors=sensors_from_list(d["sensors"]),
            actuators=actuators_from_list(d["actuators"]),
            position=Position.from_dict(d.get("position")),
            score=math.inf if d.get("score") is None else float(d["score"]),
            issued_at=float(d["issued_at"]),
            ttl=float(d["ttl"]),
        )


@dataclass
class FrameworkInfo:
    framework_id: str
    name: str
    operation_position: Position
    search_radius: float = math.inf
    max_offers: int = 5
    registered_at: float = 0.0

    def request(self) -> AllocationRequest:
        return AllocationRequest(self.framework_id, self.operation_position,
                                 self.search_radius, self.max_offers)


@dataclass
class TaskRecord:
    task_id: str
    framework_id: str
    slave_id: str
    spec: TaskSpec
    status: TaskStatus = TaskStatus.STAGING
    last_update: float = 0.0


@dataclass
class MasterConfig:
    round_interval_s: float = 1.0
    offer_ttl_s: float = 10.0
    liveness_timeout_s: float = 10.0
    policy: str = "location"
    max_offers: int = 5
    default_radius: float = math.inf
    # how long a declined slave stays hidden from the decliner; None = one round
    decline_refuse_s: Optional[float] = None

    def __post_init__(self):
        for name in ("round_interval_s", "offer_ttl_s", "liveness_timeout_s"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        get_policy(self.policy)

    @property
    def refuse_s(self) -> float:
        return self.round_interval_s if self.decline_refuse_s is None else self.decline_refuse_s


class EventLog:
    """Append-only structured log, one JSON object per event."""

    def __init__(self, sink: Optional[TextIO] = None):
        self.events: list[dict] = []
        self._seq = 0
        self._sink = sink

    def emit(self, t: float, event: str, **fields: Any) -> dict:
        self._seq += 1
        record = {"seq": self._seq, "t": round(t, 6), "event": event, **fields}
        self.events.append(record)
        if self._sink is not None:
            self._sink.write(self.line(record))
            self._sink.flush()
        return record

    @staticmethod
    def line(record: dict) -> str:
        return json.dumps(record, sort_keys=True, separators=(",", ":"), allow_nan=False) + "\n"

    def dumps(self) -> str:
        buf = io.StringIO()
        for record in self.events:
            buf.write(self.line(record))
        return buf.getvalue()

    def of(self, *events: str) -> list[dict]:
        return [e for e in self.events if e["event"] in events]


Send = Callable[[Hashable, Envelope], None]


class Master:
    def __init__(self, config: Optional[MasterConfig] = None, send: Optional[Send] = None,
                 log: Optional[EventLog] = None, master_id: str = "master"):
        self.config = config or MasterConfig()
        self.log = log if log is not None else EventLog()
        self._send_fn: Send = send or (lambda addr, env: None)
        self._seq = Sequencer(master_id)
        self._policy = get_policy(self.config.policy)

        self.slaves: dict[str, RobotState] = {}
        self.frameworks: dict[str, FrameworkInfo] = {}  # insertion order = FIFO
        self.offers: dict[str, Offer] = {}
        self.tasks: dict[tuple[str, str], TaskRecord] = {}
        self._slave_addr: dict[str, Hashable] = {}
        self._fw_addr: dict[str, Hashable] = {}
        self._last_seen: dict[str, float] = {}
        self._filters: dict[tuple[str, str], float] = {}
        self._announce: set[str] = set()
        self._next_offer = 1
        self._next_fw = 1
        self._last_timer_round: Optional[float] = None
        self._round_wanted: Optional[str] = None

    # -- plumbing ---------------------------------------------------------

    def _send(self, addr: Hashable, kind: str, body: dict) -> None:
        if addr is None:
            return
        self._send_fn(addr, self._seq(kind, body))

    def _to_framework(self, fid: str, kind: str, body: dict) -> None:
        self._send(self._fw_addr.get(fid), kind, body)

    def _error(self, addr: Hashable, code: str, message: str = "", **extra: Any) -> None:
        self._send(addr, "Error", {"code": code, "message": message, **extra})

    def _want_round(self, trigger: str) -> None:
        if self._round_wanted is None:
            self._round_wanted = trigger

    def offered_cr(self, slave_id: str) -> CrCapacity:
        total = ZERO_CR
        for o in self.offers.values():
            if o.slave_id == slave_id:
                total = total + o.cr
        return total

    def free_cr(self, slave_id: str) -> CrCapacity:
        robot = self.slaves[slave_id]
        return robot.total_cr - robot.used_cr - self.offered_cr(slave_id)

    def _free(self, slave_id: str) -> Optional[dict]:
        return self.free_cr(slave_id).to_dict() if slave_id in self.slaves else None

    def snapshot(self, slave_id: str) -> RobotState:
        """The slave's state with CR and AR held by outstanding offers reserved."""
        robot = self.slaves[slave_id]
        held = [o for o in self.offers.values() if o.slave_id == slave_id]
        cr = robot.used_cr
        ar_holder = robot.ar_holder
        for o in held:
            cr = cr + o.cr
            if o.actuators and ar_holder is None:
                ar_holder = OFFERED
        return RobotState(robot.slave_id, robot.total_cr, cr, robot.sensors, robot.actuators,
                          ar_holder, robot.position, robot.last_heartbeat)

    # -- entry points -----------------------------------------------------

    def handle(self, env: Envelope, now: float, addr: Hashable = None) -> None:
        """Process one inbound envelope, then any allocation round it triggered."""
        handler = getattr(self, "_on_" + env.kind, None)
        if handler is None:
            log.warning("master: no handler for %s from %s", env.kind, env.sender_id)
            self._error(addr, "unexpected-kind", env.kind, ref_seq=env.seq)
            return
        try:
            handler(env, env.body, now, addr)
        except MasterError as exc:
            self._error(addr, exc.code, str(exc), ref_seq=env.seq)
        except (ResourceError, KeyError, TypeError, ValueError) as exc:
            log.warning("master: bad %s from %s: %s", env.kind, env.sender_id, exc)
            self._error(addr, "invalid-message", str(exc), ref_seq=env.seq)
        self._flush_round(now)

    def tick(self, now: float) -> None:
        self.rescind_expired_offers(now)
        self.detect_lost_slaves(now)
        if (self._last_timer_round is None
                or now - self._last_timer_round >= self.config.round_interval_s - 1e-9):
            self._last_timer_round = now
            self._want_round("timer")
        self._flush_round(now)

    def _flush_round(self, now: float) -> None:
        # A round can trigger nothing further synchronously, so one pass suffices.
        if self._round_wanted is not None:
            trigger, self._round_wanted = self._round_wanted, None
            self.run_round(now, trigger)

    # -- slaves -----------------------------------------------------------

    def register_slave(self, descriptor: RobotState, now: float, addr: Hashable = None) -> str:
        sid = descriptor.slave_id
        if sid in self.slaves:
            self.log.emit(now, "slave_rejected", slave_id=sid, reason="duplicate-id")
            raise MasterError("duplicate-id", f"slave {sid} already registered")
        # pre-used CR at registration is treated as permanently unavailable
        robot = RobotState(sid, descriptor.total_cr - descriptor.used_cr, ZERO_CR,
                           descriptor.sensors, descriptor.actuators, None,
                           descriptor.position, now)
        self.slaves[sid] = robot
        self._slave_addr[sid] = addr
        self._last_seen[sid] = now
        self.log.emit(now, "slave_registered", slave_id=sid,
                      total_cr=robot.total_cr.to_dict(),
                      sensors=devices_to_list(robot.sensors),
                      actuators=devices_to_list(robot.actuators),
                      position=None if robot.position is None else robot.position.to_dict(),
                      free_cr=self._free(sid))
        self._send(addr, "SlaveRegistered", {"slave_id": sid})
        self._want_round("slave-registered")
        return sid

    def _on_RegisterSlave(self, env, body, now, addr):
        try:
            descriptor = RobotState(
                slave_id=body["slave_id"],
                total_cr=CrCapacity.from_dict(body["total_cr"]),
                used_cr=CrCapacity.from_dict(body.get("used_cr")),
                sensors=sensors_from_list(body["sensors"]),
                actuators=actuators_from_list(body["actuators"]),
                position=Position.from_dict(body.get("position")),
            )
        except ResourceError as exc:
            self.log.emit(now, "slave_rejected", slave_id=body.get("slave_id"), reason=str(exc))
            raise MasterError("invalid-descriptor", str(exc)) from None
        self.register_slave(descriptor, now, addr)

    def _on_ResourceReport(self, env, body, now, addr):
        sid = body["slave_id"]
        if sid not in self.slaves:
            raise MasterError("unknown-slave", sid)
        self._slave_addr[sid] = addr
        self._last_seen[sid] = now
        pos = Position.from_dict(body.get("position"))
        robot = self.slaves[sid]
        if pos != robot.position or robot.last_heartbeat != now:
            self.slaves[sid] = RobotState(robot.slave_id, robot.total_cr, robot.used_cr,
                                          robot.sensors, robot.actuators, robot.ar_holder,
                                          pos, now, robot.allocations)

    def detect_lost_slaves(self, now: float) -> list[str]:
        lost = [sid for sid in sorted(self.slaves)
                if now - self._last_seen[sid] > self.config.liveness_timeout_s]
        for sid in lost:
            self._lose_slave(sid, now)
        return lost

    def _lose_slave(self, sid: str, now: float) -> None:
        for oid in [o for o, offer in self.offers.items() if offer.slave_id == sid]:
            self._rescind(oid, now, "slave-lost")
        for key in [k for k, rec in self.tasks.items() if rec.slave_id == sid]:
            self._transition(self.tasks[key], TaskStatus.LOST, now, reason="slave-lost")
        del self.slaves[sid]
        self._last_seen.pop(sid, None)
        self._slave_addr.pop(sid, None)
        for key in [k for k in self._filters if k[1] == sid]:
            del self._filters[key]
        self.log.emit(now, "slave_lost", slave_id=sid)
        for fid in self.frameworks:
            self._to_framework(fid, "SlaveLost", {"slave_id": sid})

    # -- frameworks -------------------------------------------------------

    def register_framework(self, info: FrameworkInfo, now: float, addr: Hashable = None) -> str:
        if not info.framework_id:
            while f"fw-{self._next_fw:04d}" in self.frameworks:
                self._next_fw += 1
            info.framework_id = f"fw-{self._next_fw:04d}"
            self._next_fw += 1
        fid = info.framework_id
        if fid in self.frameworks:
            raise MasterError("duplicate-id", f"framework {fid} already registered")
        info.request()  # validates radius and max_offers
        info.registered_at = now
        self.frameworks[fid] = info
        self._fw_addr[fid] = addr
        self._announce.add(fid)
        self.log.emit(now, "framework_registered", framework_id=fid, name=info.name,
                      position=info.operation_position.to_dict(),
                      radius=_radius_to_wire(info.search_radius), max_offers=info.max_offers)
        self._send(addr, "FrameworkRegistered", {"framework_id": fid})
        self._want_round("framework-registered")
        return fid

    def _on_RegisterFramework(self, env, body, now, addr):
        info = FrameworkInfo(
            framework_id=body.get("framework_id") or "",
            name=body["name"],
            operation_position=Position.from_dict(body.get("position")) or Position(0.0, 0.0),
            search_radius=_radius_from_wire(body.get("radius"), self.config.default_radius),
            max_offers=int(body.get("max_offers") or self.config.max_offers),
        )
        self.register_framework(info, now, addr)

    def _on_UpdateFramework(self, env, body, now, addr):
        fid = body["framework_id"]
        info = self.frameworks.get(fid)
        if info is None:
            raise MasterError("unknown-framework", fid)
        if "position" in body:
            info.operation_position = Position.from_dict(body["position"])
        if "radius" in body:
            radius = _radius_from_wire(body["radius"], math.inf)
            if not radius > 0:
                raise MasterError("invalid-radius", str(radius))
            info.search_radius = radius
        self._fw_addr[fid] = addr
        self._announce.add(fid)
        self.log.emit(now, "framework_updated", framework_id=fid,
                      position=info.operation_position.to_dict(),
                      radius=_radius_to_wire(info.search_radius))
        self._want_round("framework-updated")

    def _on_UnregisterFramework(self, env, body, now, addr):
        fid = body["framework_id"]
        if fid not in self.frameworks:
            raise MasterError("unknown-framework", fid)
        for oid in [o for o, offer in self.offers.items() if offer.framework_id == fid]:
            self._rescind(oid, now, "framework-removed", notify=False)
        for rec in [r for r in self.tasks.values() if r.framework_id == fid]:
            self._send(self._slave_addr.get(rec.slave_id), "KillTask",
                       {"framework_id": fid, "task_id": rec.task_id})
        del self.frameworks[fid]
        self._fw_addr.pop(fid, None)
        self._announce.discard(fid)
        self.log.emit(now, "framework_unregistered", framework_id=fid)
        self._want_round("framework-removed")

    # -- allocation -------------------------------------------------------

    def _available(self, fid: str) -> bool:
        return not any(o.framework_id == fid for o in self.offers.values())

    def run_round(self, now: float, trigger: str = "manual") -> dict[str, list[Offer]]:
        eligible = [f for f in self.frameworks.values() if self._available(f.framework_id)]
        if not eligible:
            return {}
        for key in [k for k, until in self._filters.items() if now >= until]:
            del self._filters[key]
        snapshots = [self.snapshot(sid) for sid in sorted(self.slaves)]
        result = allocation_round(
            [f.request() for f in eligible], snapshots, policy=self._policy,
            exclude=lambda fid, sid: (fid, sid) in self._filters)
        issued: dict[str, list[Offer]] = {}
        emitted_round = False
        for fid, entries in result.items():
            if not entries and fid not in self._announce:
                continue
            if not emitted_round:
                self.log.emit(now, "round", trigger=trigger,
                              frameworks=[f.framework_id for f in eligible])
                emitted_round = True
            self._announce.discard(fid)
            offers = [self._issue(fid, entry, now) for entry in entries]
            issued[fid] = offers
            self._to_framework(fid, "ResourceOffers", {"offers": [o.to_dict() for o in offers]})
        return issued

    def _issue(self, fid: str, entry: ScoredSlave, now: float) -> Offer:
        cr, sensors, actuators = entry.allocatable
        offer = Offer(f"o-{self._next_offer}", fid, entry.slave_id, cr, sensors, actuators,
                      entry.position, entry.score, now, self.config.offer_ttl_s)
        self._next_offer += 1
        self.offers[offer.offer_id] = offer
        self.log.emit(now, "offer", offer_id=offer.offer_id, framework_id=fid,
                      slave_id=entry.slave_id, cr=cr.to_dict(),
                      sr=sorted(offer.sensor_functions), ar=sorted(offer.actuator_functions),
                      score=None if math.isinf(entry.score) else entry.score,
                      ttl=offer.ttl, free_cr=self._free(entry.slave_id))
        return offer

    def _rescind(self, oid: str, now: float, reason: str, notify: bool = True) -> Offer:
        offer = self.offers.pop(oid)
        if reason == "expired":
            # silence counts as a decline so the slice goes to someone else first
            self._filters[(offer.framework_id, offer.slave_id)] = now + offer.ttl
        self.log.emit(now, "offer_rescinded", offer_id=oid, framework_id=offer.framework_id,
                      slave_id=offer.slave_id, reason=reason, free_cr=self._free(offer.slave_id))
        if notify:
            self._to_framework(offer.framework_id, "RescindOffer", {"offer_id": oid, "reason": reason})
        self._want_round("rescind")
        return offer

    def rescind_expired_offers(self, now: float) -> list[str]:
        expired = [oid for oid, o in self.offers.items() if o.expired(now)]
        for oid in expired:
            self._rescind(oid, now, "expired")
        return expired

    def _on_OfferResponse(self, env, body, now, addr):
        tasks = [TaskSpec.from_dict(t, framework_id=body["framework_id"])
                 for t in body.get("tasks", ())]
        self.handle_offer_response(body["framework_id"], body["offer_id"], body["action"],
                                   tasks, now, refuse_s=body.get("refuse_s"))

    def handle_offer_response(self, fid: str, offer_id: str, action: str,
                              tasks: Iterable[TaskSpec] = (), now: float = 0.0,
                              refuse_s: Optional[float] = None) -> list[TaskRecord]:
        offer = self.offers.get(offer_id)
        if offer is not None and offer.expired(now):
            self._rescind(offer_id, now, "expired")
            offer = None
        if offer is None or offer.framework_id != fid:
            self.log.emit(now, "offer_response_ignored", offer_id=offer_id,
                          framework_id=fid, reason="unknown-offer")
            raise MasterError("unknown-offer", offer_id)

        if action == "DECLINE":
            del self.offers[offer_id]
            refuse = self.config.refuse_s if refuse_s is None else float(refuse_s)
            if refuse > 0:
                self._filters[(fid, offer.slave_id)] = now + refuse
            self.log.emit(now, "offer_declined", offer_id=offer_id, framework_id=fid,
                          slave_id=offer.slave_id, free_cr=self._free(offer.slave_id))
            self._want_round("decline")
            return []
        if action != "ACCEPT":
            raise MasterError("invalid-action", str(action))

        tasks = [t if t.framework_id == fid else TaskSpec(t.task_id, fid, t.cr_demand,
                 t.sr_required, t.ar_required, t.operation_position, t.profile) for t in tasks]
        problem = self._check_accept(offer, tasks)
        if problem is not None:
            code, message = problem
            self.log.emit(now, "offer_rejected", offer_id=offer_id, framework_id=fid,
                          slave_id=offer.slave_id, reason=code)
            self._rescind(offer_id, now, "rejected")
            raise MasterError(code, message)

        del self.offers[offer_id]
        sid = offer.slave_id
        records = []
        for spec in tasks:
            self.slaves[sid] = apply_allocation(self.slaves[sid], spec)
            rec = TaskRecord(spec.task_id, fid, sid, spec, TaskStatus.STAGING, now)
            self.tasks[(fid, spec.task_id)] = rec
            records.append(rec)
        self.log.emit(now, "offer_accepted", offer_id=offer_id, framework_id=fid, slave_id=sid,
                      tasks=[{"task_id": t.task_id, "cr": t.cr_demand.to_dict(),
                              "sr": sorted(t.sr_required), "ar": sorted(t.ar_required)}
                             for t in tasks],
                      free_cr=self._free(sid))
        for rec in records:
            self._send(self._slave_addr.get(sid), "LaunchTask",
                       {"slave_id": sid, "task": rec.spec.to_dict()})
            self._to_framework(fid, "StatusUpdate",
                               {"framework_id": fid, "task_id": rec.task_id, "slave_id": sid,
                                "status": TaskStatus.STAGING.value})
        return records

    def _check_accept(self, offer: Offer, tasks: list[TaskSpec]) -> Optional[tuple[str, str]]:
        seen = set()
        total = ZERO_CR
        ar_tasks = 0
        for t in tasks:
            try:
                classify_task(t)
            except ResourceError as exc:
                return "invalid-task", str(exc)
            if t.task_id in seen or (offer.framework_id, t.task_id) in self.tasks:
                return "duplicate-task", t.task_id
            seen.add(t.task_id)
            total = total + t.cr_demand
            if not t.sr_required <= offer.sensor_functions:
                return "over-subscription", f"{t.task_id}: SR not in offer"
            if t.ar_required:
                ar_tasks += 1
                if not t.ar_required <= offer.actuator_functions:
                    return "over-subscription", f"{t.task_id}: AR not in offer"
        if not offer.cr.covers(total):
            return "over-subscription", f"CR demand {total.to_dict()} exceeds {offer.cr.to_dict()}"
        if ar_tasks > 1:
            return "over-subscription", "more than one AR task on one robot"
        return None

    # -- tasks ------------------------------------------------------------

    def _transition(self, rec: TaskRecord, status: TaskStatus, now: float,
                    reason: Optional[str] = None) -> None:
        prev = rec.status
        rec.status = status
        rec.last_update = now
        if status.terminal:
            del self.tasks[(rec.framework_id, rec.task_id)]
            if rec.slave_id in self.slaves:
                self.slaves[rec.slave_id] = release_allocation(self.slaves[rec.slave_id], rec.spec)
            self._want_round("task-terminal")
        fields = dict(framework_id=rec.framework_id, task_id=rec.task_id, slave_id=rec.slave_id,
                      status=status.value, prev=prev.value)
        if reason:
            fields["reason"] = reason
        if status.terminal:
            fields["free_cr"] = self._free(rec.slave_id)
        self.log.emit(now, "task_status", **fields)
        body = {"framework_id": rec.framework_id, "task_id": rec.task_id,
                "slave_id": rec.slave_id, "status": status.value}
        if reason:
            body["reason"] = reason
        self._to_framework(rec.framework_id, "StatusUpdate", body)

    def handle_status_update(self, slave_id: str, fid: str, task_id: str,
                             status: TaskStatus, now: float, reason: Optional[str] = None) -> bool:
        """Apply a slave-reported status. Returns True if the record changed."""
        if slave_id in self._last_seen:
            self._last_seen[slave_id] = now
        rec = self.tasks.get((fid, task_id))
        if rec is None or rec.slave_id != slave_id:
            self.log.emit(now, "status_dropped", framework_id=fid, task_id=task_id,
                          slave_id=slave_id, status=status.value, reason="unknown-task")
            return False
        if status == rec.status:
            return False
        if not legal_transition(rec.status, status):
            self.log.emit(now, "status_dropped", framework_id=fid, task_id=task_id,
                          slave_id=slave_id, status=status.value, reason="illegal-transition")
            return False
        self._transition(rec, status, now, reason)
        return True

    def _on_StatusUpdate(self, env, body, now, addr):
        self.handle_status_update(body.get("slave_id") or env.sender_id, body["framework_id"],
                                  body["task_id"], TaskStatus(body["status"]), now,
                                  body.get("reason"))

    def kill_task(self, fid: str, task_id: str, now: float) -> None:
        rec = self.tasks.get((fid, task_id))
        if rec is None:
            if any(t == task_id for (_, t) in self.tasks):
                self.log.emit(now, "kill_rejected", framework_id=fid, task_id=task_id,
                              reason="not-owner")
                raise MasterError("not-owner", task_id)
            self.log.emit(now, "kill_rejected", framework_id=fid, task_id=task_id,
                          reason="unknown-task")
            raise MasterError("unknown-task", task_id)
        self.log.emit(now, "kill_forwarded", framework_id=fid, task_id=task_id,
                      slave_id=rec.slave_id)
        self._send(self._slave_addr.get(rec.slave_id), "KillTask",
                   {"framework_id": fid, "task_id": task_id})

    def _on_KillTask(self, env, body, now, addr):
        self.kill_task(body["framework_id"], body["task_id"], now)

    # -- misc -------------------------------------------------------------

    def _on_Heartbeat(self, env, body, now, addr):
        self._send(addr, "Heartbeat", dict(body))

    def _on_Error(self, env, body, now, addr):
        log.warning("master: error from %s: %s", env.sender_id, body)

    def disconnected(self, addr: Hashable) -> None:
        """Forget a transport address; liveness still decides when a slave is lost."""
        for table in (self._slave_addr, self._fw_addr):
            for key in [k for k, a in table.items() if a is addr]:
                table[key] = None
