"""Independent replay checker for master event logs.

Rebuilds the per-slave books from the event stream alone and verifies, after
every event:

* closure: total CR = free + offered + allocated, with free never negative,
  and free matching the ``free_cr`` the master logged;
* AR exclusivity: at most one live AR task per slave, and AR is never offered
  while held or offered twice;
* offer hygiene: offer ids strictly increase, and every response or rescind
  refers to an outstanding offer, so no offer is spent twice.

This module deliberately shares no code with the master or resource model.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Union

EPS = 1e-6
TERMINAL = {"FINISHED", "FAILED", "KILLED", "LOST"}


@dataclass
class _Slave:
    total: tuple
    allocated: dict = field(default_factory=dict)  # (fid, task_id) -> (cpus, mem, has_ar)
    offers: dict = field(default_factory=dict)     # offer_id -> (cpus, mem, has_ar)


@dataclass
class Violation:
    seq: int
    event: str
    message: str

    def __str__(self) -> str:
        return f"#{self.seq} {self.event}: {self.message}"


def _cr(d) -> tuple:
    return (float(d["cpus"]), float(d["mem_mb"]))


def _offer_num(oid: str) -> int:
    return int(oid.rsplit("-", 1)[1])


class LedgerChecker:
    def __init__(self):
        self.slaves: dict[str, _Slave] = {}
        self.offer_owner: dict[str, str] = {}   # outstanding offer -> slave
        self.spent: set[str] = set()
        self.last_offer = 0
        self.last_seq = 0
        self.violations: list[Violation] = []
        self.steps = 0

    def _bad(self, ev: dict, msg: str) -> None:
        self.violations.append(Violation(ev.get("seq", -1), ev.get("event", "?"), msg))

    def free(self, sid: str) -> tuple:
        s = self.slaves[sid]
        cpus, mem = s.total
        for c, m, _ in list(s.allocated.values()) + list(s.offers.values()):
            cpus -= c
            mem -= m
        return cpus, mem

    def _check_slave(self, ev: dict, sid: str) -> None:
        s = self.slaves[sid]
        free = self.free(sid)
        if free[0] < -EPS or free[1] < -EPS:
            self._bad(ev, f"{sid}: allocated + offered exceeds total (free={free})")
        if sum(1 for *_, ar in s.allocated.values() if ar) > 1:
            self._bad(ev, f"{sid}: two live AR tasks")
        held = sum(1 for *_, ar in s.allocated.values() if ar)
        offered = sum(1 for *_, ar in s.offers.values() if ar)
        if held + offered > 1:
            self._bad(ev, f"{sid}: AR held by {held} task(s) and {offered} offer(s)")
        logged = ev.get("free_cr")
        if logged is not None:
            lc, lm = _cr(logged)
            # the master floors free CR at zero; compare against the same view
            if abs(max(free[0], 0.0) - lc) > EPS or abs(max(free[1], 0.0) - lm) > EPS:
                self._bad(ev, f"{sid}: master says free={logged}, replay says {free}")

    def feed(self, ev: dict) -> None:
        self.steps += 1
        seq = ev.get("seq", 0)
        if seq <= self.last_seq:
            self._bad(ev, f"event seq {seq} not after {self.last_seq}")
        self.last_seq = seq
        kind = ev["event"]
        handler = getattr(self, "_ev_" + kind, None)
        if handler is not None:
            handler(ev)

    def _ev_slave_registered(self, ev):
        sid = ev["slave_id"]
        if sid in self.slaves:
            self._bad(ev, f"{sid} registered twice")
        self.slaves[sid] = _Slave(_cr(ev["total_cr"]))
        self._check_slave(ev, sid)

    def _ev_slave_lost(self, ev):
        sid = ev["slave_id"]
        s = self.slaves.pop(sid, None)
        if s is None:
            self._bad(ev, f"unknown slave {sid} lost")
        elif s.offers or s.allocated:
            self._bad(ev, f"{sid} removed with {len(s.offers)} offers, {len(s.allocated)} tasks")

    def _ev_offer(self, ev):
        oid, sid = ev["offer_id"], ev["slave_id"]
        n = _offer_num(oid)
        if n <= self.last_offer:
            self._bad(ev, f"offer id {oid} not after o-{self.last_offer}")
        self.last_offer = max(self.last_offer, n)
        if sid not in self.slaves:
            self._bad(ev, f"offer on unknown slave {sid}")
            return
        cpus, mem = _cr(ev["cr"])
        self.slaves[sid].offers[oid] = (cpus, mem, bool(ev["ar"]))
        self.offer_owner[oid] = sid
        self._check_slave(ev, sid)

    def _take_offer(self, ev) -> Union[tuple, None]:
        oid = ev["offer_id"]
        if oid in self.spent:
            self._bad(ev, f"offer {oid} already spent")
            return None
        sid = self.offer_owner.pop(oid, None)
        if sid is None or sid not in self.slaves:
            self._bad(ev, f"offer {oid} is not outstanding")
            return None
        self.spent.add(oid)
        return sid, self.slaves[sid].offers.pop(oid)

    def _ev_offer_declined(self, ev):
        taken = self._take_offer(ev)
        if taken:
            self._check_slave(ev, taken[0])

    _ev_offer_rescinded = _ev_offer_declined

    def _ev_offer_accepted(self, ev):
        taken = self._take_offer(ev)
        if not taken:
            return
        sid, (oc, om, oar) = taken
        s = self.slaves[sid]
        cpus = sum(float(t["cr"]["cpus"]) for t in ev["tasks"])
        mem = sum(float(t["cr"]["mem_mb"]) for t in ev["tasks"])
        if cpus > oc + EPS or mem > om + EPS:
            self._bad(ev, f"accepted CR ({cpus}, {mem}) exceeds offer ({oc}, {om})")
        ar_tasks = [t for t in ev["tasks"] if t["ar"]]
        if ar_tasks and not oar:
            self._bad(ev, "AR task accepted on an offer without AR")
        for t in ev["tasks"]:
            key = (ev["framework_id"], t["task_id"])
            if key in s.allocated:
                self._bad(ev, f"task {key} allocated twice")
            s.allocated[key] = (float(t["cr"]["cpus"]), float(t["cr"]["mem_mb"]), bool(t["ar"]))
        self._check_slave(ev, sid)

    def _ev_task_status(self, ev):
        sid = ev["slave_id"]
        key = (ev["framework_id"], ev["task_id"])
        s = self.slaves.get(sid)
        if s is None or key not in s.allocated:
            self._bad(ev, f"status for task {key} not live on {sid}")
            return
        if ev["status"] in TERMINAL:
            del s.allocated[key]
        self._check_slave(ev, sid)

    def replay(self, events: Iterable[dict]) -> list[Violation]:
        for ev in events:
            self.feed(ev)
        return self.violations


def check_log(events: Iterable[dict]) -> list[Violation]:
    return LedgerChecker().replay(events)


def check_jsonl(text: str) -> list[Violation]:
    return check_log(json.loads(line) for line in text.splitlines() if line.strip())
