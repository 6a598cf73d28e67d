"""Framework SDK: the upper scheduling level.

A framework subclasses :class:`Scheduler` and implements its callbacks; the
:class:`SchedulerDriver` turns master messages into callbacks and exposes the
actions a scheduler may take. Callback and action names follow the
established scheduler API (``resourceOffers``, ``statusUpdate``,
``setFilter`` ...), hence the camelCase.

Two reference schedulers ship here: :class:`GreedyScheduler` places tasks
first-fit onto the nearest satisfying offer, and :class:`ScriptedScheduler`
adds pinned placements and timed actions for experiments.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

from .master import Offer, TaskStatus
from .protocol import Envelope, Sequencer
from .resources import CrCapacity, Position, TaskSpec

log = logging.getLogger(__name__)


class Scheduler:
    """Callbacks a framework implements. Invoked serially, in master-event order."""

    def registered(self, driver: SchedulerDriver, framework_id: str) -> None:
        pass

    def resourceOffers(self, driver: SchedulerDriver, offers: list[Offer]) -> None:
        pass

    def statusUpdate(self, driver: SchedulerDriver, task_id: str, status: TaskStatus) -> None:
        pass

    def offerRescinded(self, driver: SchedulerDriver, offer_id: str) -> None:
        pass

    def slaveLost(self, driver: SchedulerDriver, slave_id: str) -> None:
        pass

    def error(self, driver: SchedulerDriver, code: str, message: str) -> None:
        log.warning("framework %s: %s %s", driver.framework_id, code, message)

    def tick(self, driver: SchedulerDriver, now: float) -> None:
        """Called on every driver tick once registered."""


class NotRegistered(RuntimeError):
    pass


Send = Callable[[Envelope], None]


class SchedulerDriver:
    def __init__(self, scheduler: Scheduler, name: str, position: Position,
                 radius: float = math.inf, max_offers: Optional[int] = None,
                 framework_id: Optional[str] = None, send: Optional[Send] = None,
                 start_at: float = 0.0, register_retry_s: float = 2.0):
        if not radius > 0:
            raise ValueError(f"radius must be > 0, got {radius}")
        self.scheduler = scheduler
        self.name = name
        self.position = position
        self.radius = radius
        self.max_offers = max_offers
        self.requested_id = framework_id
        self.framework_id: Optional[str] = None
        self.start_at = start_at
        self.register_retry_s = register_retry_s
        self.offers: dict[str, Offer] = {}
        self.stopped = False
        self.now = 0.0
        self._send_fn: Send = send or (lambda env: None)
        self._seq = Sequencer(framework_id or name)
        self._next_register: Optional[float] = None

    @property
    def registered(self) -> bool:
        return self.framework_id is not None

    def _send(self, kind: str, body: dict) -> None:
        self._send_fn(self._seq(kind, body))

    def _require(self) -> str:
        if self.framework_id is None:
            raise NotRegistered("framework is not registered yet")
        if self.stopped:
            raise NotRegistered("framework has stopped")
        return self.framework_id

    def register(self, now: float) -> None:
        self._next_register = now + self.register_retry_s
        body = {"name": self.name, "position": self.position.to_dict(),
                "radius": None if math.isinf(self.radius) else self.radius}
        if self.requested_id:
            body["framework_id"] = self.requested_id
        if self.max_offers:
            body["max_offers"] = self.max_offers
        self._send("RegisterFramework", body)

    def tick(self, now: float) -> None:
        self.now = now
        if self.stopped:
            return
        if self.framework_id is None:
            due = self._next_register if self._next_register is not None else self.start_at
            if now >= due - 1e-9:
                self.register(now)
            return
        self.scheduler.tick(self, now)

    def handle(self, env: Envelope, now: float) -> None:
        self.now = now
        if self.stopped:
            return
        kind, body = env.kind, env.body
        if kind == "FrameworkRegistered":
            if self.framework_id is None:
                self.framework_id = body["framework_id"]
                self.scheduler.registered(self, self.framework_id)
        elif kind == "ResourceOffers":
            offers = [Offer.from_dict(d) for d in body["offers"]]
            for o in offers:
                self.offers[o.offer_id] = o
            self.scheduler.resourceOffers(self, offers)
        elif kind == "RescindOffer":
            self.offers.pop(body["offer_id"], None)
            self.scheduler.offerRescinded(self, body["offer_id"])
        elif kind == "StatusUpdate":
            self.scheduler.statusUpdate(self, body["task_id"], TaskStatus(body["status"]))
        elif kind == "SlaveLost":
            self.scheduler.slaveLost(self, body["slave_id"])
        elif kind == "Error":
            self.scheduler.error(self, body.get("code", ""), body.get("message", ""))
        elif kind == "Heartbeat":
            pass
        else:
            log.warning("framework %s: ignoring %s", self.framework_id, kind)

    # -- actions ----------------------------------------------------------

    def setPosition(self, position: Position) -> None:
        fid = self._require()
        self.position = position
        self._send("UpdateFramework", {"framework_id": fid, "position": position.to_dict()})

    def setFilter(self, radius: float) -> None:
        if not radius > 0:
            raise ValueError(f"radius must be > 0, got {radius}")
        fid = self._require()
        self.radius = radius
        self._send("UpdateFramework", {"framework_id": fid,
                                       "radius": None if math.isinf(radius) else radius})

    def acceptOffer(self, offer_id: str, tasks: Sequence[TaskSpec]) -> None:
        fid = self._require()
        self.offers.pop(offer_id, None)
        self._send("OfferResponse", {
            "framework_id": fid, "offer_id": offer_id, "action": "ACCEPT",
            "tasks": [TaskSpec(t.task_id, fid, t.cr_demand, t.sr_required, t.ar_required,
                               t.operation_position, t.profile).to_dict() for t in tasks],
        })

    def declineOffer(self, offer_id: str, refuse_s: Optional[float] = None) -> None:
        fid = self._require()
        self.offers.pop(offer_id, None)
        body = {"framework_id": fid, "offer_id": offer_id, "action": "DECLINE"}
        if refuse_s is not None:
            body["refuse_s"] = refuse_s
        self._send("OfferResponse", body)

    def killTask(self, task_id: str) -> None:
        fid = self._require()
        self._send("KillTask", {"framework_id": fid, "task_id": task_id})

    def stop(self) -> None:
        fid = self._require()
        self._send("UnregisterFramework", {"framework_id": fid})
        self.stopped = True


@dataclass
class _Slice:
    offer: Offer
    cr: CrCapacity
    ar_free: bool
    tasks: list = field(default_factory=list)

    def fits(self, spec: TaskSpec) -> bool:
        if not self.cr.covers(spec.cr_demand):
            return False
        if not spec.sr_required <= self.offer.sensor_functions:
            return False
        if spec.ar_required and not (self.ar_free and spec.ar_required <= self.offer.actuator_functions):
            return False
        return True

    def take(self, spec: TaskSpec) -> None:
        self.cr = self.cr - spec.cr_demand
        if spec.ar_required:
            self.ar_free = False
        self.tasks.append(spec)


@dataclass
class TaskProgress:
    spec: TaskSpec
    status: Optional[TaskStatus] = None
    attempts: int = 0
    unplaced_rounds: int = 0
    offer_id: Optional[str] = None
    slave_id: Optional[str] = None
    gave_up: Optional[str] = None


class GreedyScheduler(Scheduler):
    """First-fit onto the lowest-score satisfying offer, in goal order."""

    def __init__(self, goal: Iterable[TaskSpec], retry_cap: int = 3, max_unplaced_rounds: int = 60,
                 idle_refuse_s: float = 5.0):
        self.progress: dict[str, TaskProgress] = {}
        for spec in goal:
            if spec.task_id in self.progress:
                raise ValueError(f"duplicate task_id {spec.task_id!r} in goal")
            self.progress[spec.task_id] = TaskProgress(spec)
        self.pending: list[str] = list(self.progress)
        self.retry_cap = retry_cap
        self.max_unplaced_rounds = max_unplaced_rounds
        # with nothing left to place, hide declined slaves longer than one round
        self.idle_refuse_s = idle_refuse_s
        self.accepts: list[tuple[str, list[str]]] = []

    def candidate_offers(self, offers: list[Offer]) -> list[Offer]:
        return sorted(offers, key=lambda o: (o.score, o.slave_id))

    def allowed(self, spec: TaskSpec, offer: Offer) -> bool:
        return True

    def resourceOffers(self, driver, offers):
        slices = [_Slice(o, o.cr, bool(o.actuators)) for o in self.candidate_offers(offers)]
        still_pending = []
        for tid in self.pending:
            spec = self.progress[tid].spec
            target = next((s for s in slices if self.allowed(spec, s.offer) and s.fits(spec)), None)
            if target is None:
                still_pending.append(tid)
                continue
            target.take(spec)
            p = self.progress[tid]
            p.offer_id, p.slave_id, p.unplaced_rounds = target.offer.offer_id, target.offer.slave_id, 0
        self.pending = []
        for tid in still_pending:
            p = self.progress[tid]
            if offers:
                p.unplaced_rounds += 1
            if p.unplaced_rounds > self.max_unplaced_rounds:
                p.gave_up = "unplaceable"
                log.warning("framework %s: giving up on %s after %d rounds",
                            driver.framework_id, tid, p.unplaced_rounds - 1)
            else:
                self.pending.append(tid)
        for s in slices:
            if s.tasks:
                self.accepts.append((s.offer.offer_id, [t.task_id for t in s.tasks]))
                driver.acceptOffer(s.offer.offer_id, s.tasks)
            else:
                driver.declineOffer(s.offer.offer_id,
                                    refuse_s=None if self.pending else self.idle_refuse_s)

    def statusUpdate(self, driver, task_id, status):
        p = self.progress.get(task_id)
        if p is None:
            return
        p.status = status
        if status is TaskStatus.STAGING:
            p.offer_id = None
        elif status in (TaskStatus.FAILED, TaskStatus.LOST):
            if p.attempts < self.retry_cap:
                p.attempts += 1
                p.slave_id = None
                self.pending.append(task_id)
            else:
                p.gave_up = "retries-exhausted"

    def offerRescinded(self, driver, offer_id):
        # an accept the master refused: the tasks in it were never launched
        for tid, p in self.progress.items():
            if p.offer_id == offer_id:
                p.offer_id = None
                p.slave_id = None
                if tid not in self.pending:
                    self.pending.append(tid)

    @property
    def done(self) -> bool:
        return all(p.gave_up or (p.status is not None and p.status.terminal
                                 and p.offer_id is None and tid not in self.pending)
                   for tid, p in self.progress.items())

    def report(self) -> dict:
        return {tid: {"status": None if p.status is None else p.status.value,
                      "attempts": p.attempts, "slave_id": p.slave_id, "gave_up": p.gave_up}
                for tid, p in self.progress.items()}


class ScriptedScheduler(GreedyScheduler):
    """Greedy placement plus pins, timed actions, and an optional silent mode.

    ``pins`` maps task_id to the only slave it may run on. ``script`` is a list
    of ``(t, action, arg)`` with action one of ``kill``, ``set_position``,
    ``set_filter`` or ``stop``. A ``silent`` scheduler receives offers and never
    answers them.
    """

    def __init__(self, goal: Iterable[TaskSpec], pins: Optional[dict] = None,
                 script: Sequence[tuple] = (), silent: bool = False, **kw):
        super().__init__(goal, **kw)
        self.pins = dict(pins or {})
        self.script = sorted(script, key=lambda s: s[0])
        self.silent = silent
        self.held: list[Offer] = []

    def allowed(self, spec, offer):
        pin = self.pins.get(spec.task_id)
        return pin is None or pin == offer.slave_id

    def resourceOffers(self, driver, offers):
        if self.silent:
            self.held.extend(offers)
            return
        super().resourceOffers(driver, offers)

    def tick(self, driver, now):
        while self.script and self.script[0][0] <= now + 1e-9:
            _, action, arg = self.script.pop(0)
            if action == "kill":
                driver.killTask(arg)
            elif action == "set_position":
                driver.setPosition(Position(*arg))
            elif action == "set_filter":
                driver.setFilter(arg)
            elif action == "stop":
                driver.stop()
                return
            else:
                raise ValueError(f"unknown scripted action {action!r}")


def make_scheduler(kind: str, goal: list[TaskSpec], **options) -> GreedyScheduler:
    if kind == "greedy":
        return GreedyScheduler(goal, **options)
    if kind == "scripted":
        return ScriptedScheduler(goal, **options)
    if kind == "silent":
        return ScriptedScheduler(goal, silent=True, **options)
    raise ValueError(f"unknown scheduler kind {kind!r}")
