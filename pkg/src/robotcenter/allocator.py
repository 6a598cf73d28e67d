"""Location-based resource offer policy.

Robots are scored by straight-line distance to a framework's operation
position, filtered by the framework's search radius, sorted nearest first and
capped. Positionless (cloud, CR-only) slaves skip the range filter and rank
after every positioned robot.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Protocol, Sequence

from .resources import CrCapacity, Position, RobotState, allocatable_view

DEFAULT_MAX_OFFERS = 5

# Reservation marker placed in ar_holder of a snapshot whose AR was offered.
OFFERED = "<offered>"


@dataclass(frozen=True)
class ScoredSlave:
    slave_id: str
    score: float  # inf for positionless slaves
    allocatable: tuple[CrCapacity, frozenset, frozenset]
    position: Optional[Position] = None


@dataclass(frozen=True)
class AllocationRequest:
    framework_id: str
    operation_position: Position
    search_radius: float = math.inf
    max_offers: int = DEFAULT_MAX_OFFERS

    def __post_init__(self):
        if not self.search_radius > 0:
            raise ValueError(f"search_radius must be > 0, got {self.search_radius}")
        if self.max_offers < 1:
            raise ValueError(f"max_offers must be >= 1, got {self.max_offers}")


def score(robot_pos: Position, op_pos: Position) -> float:
    # the plain formula rather than math.hypot, so scores are reproducible anywhere
    dx, dy = robot_pos.x - op_pos.x, robot_pos.y - op_pos.y
    return math.sqrt(dx * dx + dy * dy)


def _offerable(view: tuple[CrCapacity, frozenset, frozenset]) -> bool:
    cr, sensors, actuators = view
    return bool(cr) or bool(sensors) or bool(actuators)


def build_offer_list(robots: Iterable[RobotState], req: AllocationRequest) -> list[ScoredSlave]:
    positioned = []
    cloud = []
    for robot in robots:
        view = allocatable_view(robot)
        if robot.position is None:
            if view[0]:
                cloud.append(ScoredSlave(robot.slave_id, math.inf, view))
            continue
        if not _offerable(view):
            continue
        d = score(robot.position, req.operation_position)
        if d <= req.search_radius:
            positioned.append(ScoredSlave(robot.slave_id, d, view, robot.position))
    positioned.sort(key=lambda s: (s.score, s.slave_id))
    cloud.sort(key=lambda s: s.slave_id)
    return (positioned + cloud)[:req.max_offers]


def reserve(robot: RobotState, entry: ScoredSlave) -> RobotState:
    """Snapshot of ``robot`` with the offered slice of ``entry`` held back.

    SR is shareable and stays visible to later frameworks; CR and AR do not.
    """
    cr, _, actuators = entry.allocatable
    return dataclasses.replace(
        robot,
        used_cr=robot.used_cr + cr,
        ar_holder=OFFERED if actuators else robot.ar_holder,
    )


class AllocationPolicy(Protocol):
    def __call__(self, robots: Iterable[RobotState], req: AllocationRequest) -> list[ScoredSlave]:
        ...


POLICIES: dict[str, AllocationPolicy] = {"location": build_offer_list}


def get_policy(name: str) -> AllocationPolicy:
    try:
        return POLICIES[name]
    except KeyError:
        raise ValueError(f"unknown allocation policy {name!r}; known: {sorted(POLICIES)}") from None


def allocation_round(
    frameworks: Sequence[AllocationRequest],
    robots: Iterable[RobotState],
    *,
    policy: AllocationPolicy = build_offer_list,
    exclude: Optional[Callable[[str, str], bool]] = None,
) -> dict[str, list[ScoredSlave]]:
    """Serve ``frameworks`` in order against a shared pool of snapshots.

    ``exclude(framework_id, slave_id)`` hides a slave from one framework
    (decline filters). Whatever is offered to one framework is withheld from
    the frameworks after it.
    """
    pool: dict[str, RobotState] = {r.slave_id: r for r in robots}
    result: dict[str, list[ScoredSlave]] = {}
    for req in frameworks:
        candidates = [r for sid, r in pool.items()
                      if exclude is None or not exclude(req.framework_id, sid)]
        offers = policy(candidates, req)
        for entry in offers:
            pool[entry.slave_id] = reserve(pool[entry.slave_id], entry)
        result[req.framework_id] = offers
    return result

