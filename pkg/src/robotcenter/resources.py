"""Robot resource model.

Resources on a robot fall into three classes:

* CR (computation): divisible quantities, accounted per task.
* SR (sensory): read access that any number of tasks may share.
* AR (action): actuators, held exclusively by one task for the whole robot.

All operations here are value transformations on frozen dataclasses; nothing
mutates in place, so the module is safe to call from anywhere.
"""
from __future__ import annotations

import dataclasses
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping, Optional

# Quantization applied to CR arithmetic so apply/release round-trips exactly.
_CR_DIGITS = 9
_EPS = 1e-9


class ResourceError(ValueError):
    """Base class for resource-model errors."""


class InvalidSpec(ResourceError):
    pass


class UnsatisfiableDemand(ResourceError):
    pass


class UnknownTask(ResourceError):
    pass


class ParseError(ResourceError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte {offset}")
        self.offset = offset


class ResourceClass(str, Enum):
    CR = "CR"
    SR = "SR"
    AR = "AR"


@dataclass(frozen=True)
class CrCapacity:
    cpus: float = 0.0
    mem_mb: float = 0.0

    def __post_init__(self):
        for name in ("cpus", "mem_mb"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ResourceError(f"{name} must be finite and >= 0, got {v!r}")
            object.__setattr__(self, name, round(float(v), _CR_DIGITS) + 0.0)

    def __add__(self, other: CrCapacity) -> CrCapacity:
        return CrCapacity(self.cpus + other.cpus, self.mem_mb + other.mem_mb)

    def __sub__(self, other: CrCapacity) -> CrCapacity:
        """Component-wise difference, floored at zero."""
        return CrCapacity(max(0.0, self.cpus - other.cpus),
                          max(0.0, self.mem_mb - other.mem_mb))

    def covers(self, other: CrCapacity) -> bool:
        return (self.cpus + _EPS >= other.cpus
                and self.mem_mb + _EPS >= other.mem_mb)

    def __bool__(self) -> bool:
        return self.cpus > 0 or self.mem_mb > 0

    def to_dict(self) -> dict:
        return {"cpus": self.cpus, "mem_mb": self.mem_mb}

    @classmethod
    def from_dict(cls, d: Optional[Mapping[str, Any]]) -> CrCapacity:
        if not d:
            return cls()
        return cls(float(d.get("cpus", 0.0)), float(d.get("mem_mb", 0.0)))


ZERO_CR = CrCapacity()


@dataclass(frozen=True)
class _Device:
    name: str
    functions: frozenset

    def __post_init__(self):
        if not self.name:
            raise ResourceError("device name must be nonempty")
        object.__setattr__(self, "functions", frozenset(self.functions))
        if not self.functions:
            raise ResourceError(f"device {self.name!r} has no functions")

    def to_dict(self) -> dict:
        return {"name": self.name, "functions": sorted(self.functions)}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]):
        return cls(d["name"], frozenset(d["functions"]))


class SensorResource(_Device):
    pass


class ActuatorResource(_Device):
    pass


@dataclass(frozen=True)
class Position:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ResourceError(f"non-finite position ({self.x}, {self.y})")
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y}

    @classmethod
    def from_dict(cls, d: Optional[Mapping[str, Any]]) -> Optional[Position]:
        if d is None:
            return None
        return cls(float(d["x"]), float(d["y"]))

    @classmethod
    def parse(cls, text: str) -> Position:
        x, y = text.split(",")
        return cls(float(x), float(y))


@dataclass(frozen=True)
class WorkloadProfile:
    """Synthetic stand-in for a real robotics workload."""

    cpu_fraction: float = 0.0
    duration_s: Optional[float] = None  # None = runs until killed
    moves_robot: bool = False

    def __post_init__(self):
        if not 0.0 <= self.cpu_fraction <= 1.0:
            raise InvalidSpec(f"cpu_fraction {self.cpu_fraction} outside [0, 1]")
        if self.duration_s is not None and not self.duration_s > 0:
            raise InvalidSpec(f"duration_s must be > 0, got {self.duration_s}")

    def to_dict(self) -> dict:
        return {"cpu_fraction": self.cpu_fraction, "duration_s": self.duration_s,
                "moves_robot": self.moves_robot}

    @classmethod
    def from_dict(cls, d: Optional[Mapping[str, Any]]) -> WorkloadProfile:
        if not d:
            return cls()
        dur = d.get("duration_s")
        return cls(float(d.get("cpu_fraction", 0.0)),
                   None if dur is None else float(dur),
                   bool(d.get("moves_robot", False)))


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    framework_id: str = ""
    cr_demand: CrCapacity = ZERO_CR
    sr_required: frozenset = frozenset()
    ar_required: frozenset = frozenset()
    operation_position: Optional[Position] = None
    profile: WorkloadProfile = WorkloadProfile()

    def __post_init__(self):
        object.__setattr__(self, "sr_required", frozenset(self.sr_required))
        object.__setattr__(self, "ar_required", frozenset(self.ar_required))
        if not self.task_id:
            raise InvalidSpec("task_id must be nonempty")

    @property
    def key(self) -> str:
        """Robot-unique allocation key; task ids are only unique per framework."""
        return f"{self.framework_id}/{self.task_id}"

    def to_dict(self) -> dict:
        op = self.operation_position
        return {
            "task_id": self.task_id,
            "framework_id": self.framework_id,
            "cr_demand": self.cr_demand.to_dict(),
            "sr_required": sorted(self.sr_required),
            "ar_required": sorted(self.ar_required),
            "operation_position": None if op is None else op.to_dict(),
            "profile": self.profile.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any], framework_id: Optional[str] = None) -> TaskSpec:
        return cls(
            task_id=str(d["task_id"]),
            framework_id=framework_id if framework_id is not None else str(d.get("framework_id", "")),
            cr_demand=CrCapacity.from_dict(d.get("cr_demand")),
            sr_required=frozenset(d.get("sr_required", ())),
            ar_required=frozenset(d.get("ar_required", ())),
            operation_position=Position.from_dict(d.get("operation_position")),
            profile=WorkloadProfile.from_dict(d.get("profile")),
        )


@dataclass(frozen=True)
class RobotState:
    slave_id: str
    total_cr: CrCapacity
    used_cr: CrCapacity = ZERO_CR
    sensors: frozenset = frozenset()
    actuators: frozenset = frozenset()
    ar_holder: Optional[str] = None
    position: Optional[Position] = None
    last_heartbeat: float = 0.0
    # allocation key -> TaskSpec for every live allocation on this robot
    allocations: Mapping[str, TaskSpec] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "sensors", frozenset(self.sensors))
        object.__setattr__(self, "actuators", frozenset(self.actuators))
        if not self.slave_id:
            raise ResourceError("slave_id must be nonempty")
        if not self.total_cr.covers(self.used_cr):
            raise ResourceError(f"{self.slave_id}: used_cr exceeds total_cr")
        for group in (self.sensors, self.actuators):
            names = [d.name for d in group]
            if len(names) != len(set(names)):
                raise ResourceError(f"{self.slave_id}: duplicate device names")

    @property
    def sensor_functions(self) -> frozenset:
        return frozenset().union(*(s.functions for s in self.sensors))

    @property
    def actuator_functions(self) -> frozenset:
        return frozenset().union(*(a.functions for a in self.actuators))


def classify_task(spec: TaskSpec) -> frozenset:
    flags = set()
    if spec.cr_demand:
        flags.add(ResourceClass.CR)
    if spec.sr_required:
        flags.add(ResourceClass.SR)
    if spec.ar_required:
        flags.add(ResourceClass.AR)
    if not flags:
        raise InvalidSpec(f"task {spec.task_id!r} demands no resources")
    return frozenset(flags)


def can_satisfy(robot: RobotState, spec: TaskSpec) -> bool:
    if not (robot.total_cr - robot.used_cr).covers(spec.cr_demand):
        return False
    if not spec.sr_required <= robot.sensor_functions:
        return False
    if spec.ar_required:
        if robot.ar_holder is not None:
            return False
        if not spec.ar_required <= robot.actuator_functions:
            return False
    return True


def apply_allocation(robot: RobotState, spec: TaskSpec) -> RobotState:
    classes = classify_task(spec)
    if spec.key in robot.allocations:
        raise UnsatisfiableDemand(f"{spec.key} already allocated on {robot.slave_id}")
    if not can_satisfy(robot, spec):
        raise UnsatisfiableDemand(f"{robot.slave_id} cannot satisfy {spec.key}")
    allocations = dict(robot.allocations)
    allocations[spec.key] = spec
    return dataclasses.replace(
        robot,
        used_cr=robot.used_cr + spec.cr_demand,
        ar_holder=spec.key if ResourceClass.AR in classes else robot.ar_holder,
        allocations=allocations,
    )


def release_allocation(robot: RobotState, spec: TaskSpec) -> RobotState:
    if spec.key not in robot.allocations:
        raise UnknownTask(f"{spec.key} not allocated on {robot.slave_id}")
    allocations = dict(robot.allocations)
    held = allocations.pop(spec.key)
    return dataclasses.replace(
        robot,
        used_cr=robot.used_cr - held.cr_demand,
        ar_holder=None if robot.ar_holder == spec.key else robot.ar_holder,
        allocations=allocations,
    )


def allocatable_view(robot: RobotState) -> tuple[CrCapacity, frozenset, frozenset]:
    actuators = robot.actuators if robot.ar_holder is None else frozenset()
    return robot.total_cr - robot.used_cr, robot.sensors, actuators


# Name:{Fn1,Fn2};Name2:{Fn3};  -- whitespace tolerated around tokens
_IDENT = re.compile(rb"\s*([A-Za-z0-9_.\-/]+)\s*")


def parse_resource_spec(text: str, kind: type = SensorResource) -> frozenset:
    """Parse the ``--sr_res``/``--ar_res`` flag syntax into devices of ``kind``.

    Repeated names are merged into one device carrying the union of their
    functions. Errors report the byte offset into the UTF-8 encoded text.
    """
    data = text.encode("utf-8")
    merged: dict[str, set] = {}
    order: list[str] = []
    pos = 0
    n = len(data)

    def skip_ws(p: int) -> int:
        while p < n and data[p:p + 1].isspace():
            p += 1
        return p

    def ident(p: int, what: str) -> tuple[str, int]:
        m = _IDENT.match(data, p)
        if not m:
            raise ParseError(f"expected {what}", skip_ws(p))
        return m.group(1).decode("ascii"), m.end()

    pos = skip_ws(pos)
    while pos < n:
        name, pos = ident(pos, "device name")
        if data[pos:pos + 1] != b":":
            raise ParseError("expected ':'", pos)
        pos = skip_ws(pos + 1)
        if data[pos:pos + 1] != b"{":
            raise ParseError("expected '{'", pos)
        pos = skip_ws(pos + 1)
        if data[pos:pos + 1] == b"}":
            raise ParseError(f"empty function list for {name!r}", pos)
        fns = []
        while True:
            fn, pos = ident(pos, "function name")
            fns.append(fn)
            c = data[pos:pos + 1]
            if c == b",":
                pos += 1
            elif c == b"}":
                pos += 1
                break
            else:
                raise ParseError("expected ',' or '}'", pos)
        pos = skip_ws(pos)
        if data[pos:pos + 1] == b";":
            pos = skip_ws(pos + 1)
        elif pos < n:
            raise ParseError("expected ';'", pos)
        if name not in merged:
            merged[name] = set()
            order.append(name)
        merged[name].update(fns)
    return frozenset(kind(name, frozenset(merged[name])) for name in order)


def format_resource_spec(devices: Iterable[_Device]) -> str:
    return "".join(f"{d.name}:{{{','.join(sorted(d.functions))}}};"
                   for d in sorted(devices, key=lambda d: d.name))


def devices_to_list(devices: Iterable[_Device]) -> list[dict]:
    return [d.to_dict() for d in sorted(devices, key=lambda d: d.name)]


def sensors_from_list(items: Iterable[Mapping[str, Any]]) -> frozenset:
    return frozenset(SensorResource.from_dict(d) for d in items)


def actuators_from_list(items: Iterable[Mapping[str, Any]]) -> frozenset:
    return frozenset(ActuatorResource.from_dict(d) for d in items)
