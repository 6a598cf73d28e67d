import random

import pytest
from hypothesis import given, settings, strategies as st

from robotcenter.resources import (
    ActuatorResource, CrCapacity, InvalidSpec, ParseError, Position, ResourceClass,
    ResourceError, RobotState, SensorResource, TaskSpec, UnknownTask, UnsatisfiableDemand,
    WorkloadProfile, allocatable_view, apply_allocation, can_satisfy, classify_task,
    format_resource_spec, parse_resource_spec, release_allocation,
)

KINECT = SensorResource("kinect", {"ImageGen", "LaserGen"})
WHEEL = ActuatorResource("wheel", {"Move"})


def robot(cpus=4.0, mem=8192.0, **kw):
    return RobotState("S1", CrCapacity(cpus, mem), sensors={KINECT}, actuators={WHEEL},
                      position=Position(3, 4), **kw)


def task(tid="t", cpus=0.0, mem=0.0, sr=(), ar=(), fid="F1"):
    return TaskSpec(tid, fid, CrCapacity(cpus, mem), frozenset(sr), frozenset(ar))


MONITOR = task("monitor", sr={"ImageGen"})
GMAPPING = task("gmapping", 2, 4096, sr={"LaserGen"}, ar={"Move"})


class TestCrCapacity:
    def test_rejects_negative_and_nonfinite(self):
        for bad in (-1.0, float("nan"), float("inf")):
            with pytest.raises(ResourceError):
                CrCapacity(bad, 0)

    def test_subtraction_floors_at_zero(self):
        assert CrCapacity(1, 100) - CrCapacity(2, 50) == CrCapacity(0, 50)

    def test_decimal_sums_round_trip(self):
        c = CrCapacity(0.1, 0) + CrCapacity(0.2, 0)
        assert c.cpus == 0.3
        assert (c - CrCapacity(0.2, 0)).cpus == 0.1

    def test_truthiness(self):
        assert not CrCapacity()
        assert CrCapacity(0, 1)


class TestClassify:
    def test_monitoring_is_sr(self):
        assert classify_task(MONITOR) == {ResourceClass.SR}

    def test_gmapping_is_ar_cr_sr(self):
        assert classify_task(GMAPPING) == {ResourceClass.AR, ResourceClass.CR, ResourceClass.SR}

    def test_empty_demand_is_invalid(self):
        with pytest.raises(InvalidSpec):
            classify_task(task())

    def test_memory_only_counts_as_cr(self):
        assert classify_task(task(mem=1)) == {ResourceClass.CR}


class TestCanSatisfy:
    def test_sr_task_on_cr_exhausted_robot(self):
        assert can_satisfy(robot(used_cr=CrCapacity(4, 8192)), MONITOR)

    def test_ar_held_blocks_ar_task(self):
        assert not can_satisfy(robot(ar_holder="F9/x"), task(ar={"Move"}))

    def test_cpu_over_capacity(self):
        assert not can_satisfy(robot(), task(cpus=5))

    def test_memory_over_capacity(self):
        assert not can_satisfy(robot(), task(cpus=1, mem=9000))

    def test_missing_sensor_function(self):
        assert not can_satisfy(robot(), task(sr={"Thermal"}))

    def test_missing_actuator_function(self):
        assert not can_satisfy(robot(), task(ar={"Grasp"}))

    def test_functions_may_come_from_different_sensors(self):
        r = RobotState("S", CrCapacity(1, 1), sensors={SensorResource("a", {"X"}),
                                                        SensorResource("b", {"Y"})})
        assert can_satisfy(r, task(sr={"X", "Y"}))


class TestApplyRelease:
    def test_apply_ar_cr_task(self):
        r = apply_allocation(robot(), GMAPPING)
        assert r.used_cr.cpus == 2 and r.used_cr.mem_mb == 4096
        assert r.ar_holder == GMAPPING.key
        assert r.sensors == robot().sensors

    def test_pure_sr_changes_only_bookkeeping(self):
        before = robot()
        after = apply_allocation(before, MONITOR)
        assert (after.used_cr, after.ar_holder, after.sensors, after.actuators) == \
            (before.used_cr, before.ar_holder, before.sensors, before.actuators)
        assert MONITOR.key in after.allocations

    def test_apply_then_release_is_identity(self):
        r = robot()
        assert release_allocation(apply_allocation(r, GMAPPING), GMAPPING) == r

    def test_release_clears_ar(self):
        r = release_allocation(apply_allocation(robot(), GMAPPING), GMAPPING)
        assert r.used_cr.cpus == 0 and r.ar_holder is None

    def test_release_unknown(self):
        with pytest.raises(UnknownTask):
            release_allocation(robot(), GMAPPING)

    def test_apply_unsatisfiable(self):
        with pytest.raises(UnsatisfiableDemand):
            apply_allocation(robot(), task(cpus=8))

    def test_second_ar_task_rejected(self):
        r = apply_allocation(robot(), GMAPPING)
        with pytest.raises(UnsatisfiableDemand):
            apply_allocation(r, task("other", ar={"Move"}))

    def test_same_task_id_in_two_frameworks(self):
        r = apply_allocation(robot(), task("x", 1, fid="A"))
        r = apply_allocation(r, task("x", 1, fid="B"))
        assert r.used_cr.cpus == 2

    def test_used_over_total_rejected(self):
        with pytest.raises(ResourceError):
            robot(used_cr=CrCapacity(5, 0))

    def test_random_interleaving_returns_to_start(self):
        rng = random.Random(7)
        start = robot(cpus=8, mem=16384)
        for trial in range(200):
            r, live = start, {}
            for step in range(40):
                if live and rng.random() < 0.4:
                    spec = live.pop(rng.choice(sorted(live)))
                    r = release_allocation(r, spec)
                else:
                    spec = task(f"t{trial}-{step}", rng.choice([0, 0.5, 1, 2]),
                                rng.choice([0, 512, 1024]),
                                sr=rng.choice([(), ("ImageGen",)]),
                                ar=rng.choice([(), (), ("Move",)]))
                    if not (spec.cr_demand or spec.sr_required or spec.ar_required):
                        continue
                    if can_satisfy(r, spec):
                        r = apply_allocation(r, spec)
                        live[spec.key] = spec
                # oracle: CR conservation and AR exclusivity against the live multiset
                assert r.used_cr.cpus == pytest.approx(sum(s.cr_demand.cpus for s in live.values()))
                assert r.used_cr.mem_mb == pytest.approx(sum(s.cr_demand.mem_mb for s in live.values()))
                assert sum(1 for s in live.values() if s.ar_required) <= 1
                assert allocatable_view(r)[1] == start.sensors
            for spec in list(live.values()):
                r = release_allocation(r, spec)
            assert r == start


class TestAllocatableView:
    def test_after_ar_cr_task(self):
        cr, sensors, actuators = allocatable_view(apply_allocation(robot(), GMAPPING))
        assert cr == CrCapacity(2, 4096)
        assert sensors == {KINECT}
        assert actuators == frozenset()

    def test_idle_robot(self):
        assert allocatable_view(robot()) == (CrCapacity(4, 8192), {KINECT}, {WHEEL})

    def test_exhausted(self):
        cr, sensors, _ = allocatable_view(robot(used_cr=CrCapacity(4, 8192)))
        assert not cr and sensors == {KINECT}


class TestParseResourceSpec:
    def test_kinect(self):
        assert parse_resource_spec("kinect:{ImageGen,LaserGen};") == {KINECT}

    def test_actuators(self):
        assert parse_resource_spec("wheel:{Move};", ActuatorResource) == {WHEEL}

    def test_duplicate_names_merge(self):
        got = parse_resource_spec("cam:{A};cam:{B};")
        assert got == {SensorResource("cam", {"A", "B"})}

    def test_whitespace_and_missing_final_semicolon(self):
        got = parse_resource_spec(" kinect : { ImageGen , LaserGen } ; lidar:{Scan}")
        assert got == {KINECT, SensorResource("lidar", {"Scan"})}

    def test_empty_string(self):
        assert parse_resource_spec("") == frozenset()

    @pytest.mark.parametrize("text, offset", [
        ("kinect{ImageGen};", 6),
        ("kinect:ImageGen;", 7),
        ("kinect:{};", 8),
        ("kinect:{A,};", 10),
        ("kinect:{A B};", 10),
        ("kinect:{A} lidar:{B};", 11),
        (":{A};", 0),
    ])
    def test_errors_report_offset(self, text, offset):
        with pytest.raises(ParseError) as ei:
            parse_resource_spec(text)
        assert ei.value.offset == offset

    def test_offset_counts_utf8_bytes(self):
        with pytest.raises(ParseError) as ei:
            parse_resource_spec("é:{A};")
        assert ei.value.offset == 0

    @given(st.dictionaries(
        st.from_regex(r"[a-z][a-z0-9_]{0,6}", fullmatch=True),
        st.frozensets(st.from_regex(r"[A-Z][A-Za-z]{0,6}", fullmatch=True), min_size=1, max_size=4),
        max_size=5))
    @settings(max_examples=200)
    def test_format_parse_round_trip(self, spec):
        devices = frozenset(SensorResource(n, f) for n, f in spec.items())
        assert parse_resource_spec(format_resource_spec(devices)) == devices


class TestTaskSpecValidation:
    def test_cpu_fraction_bounds(self):
        with pytest.raises(InvalidSpec):
            WorkloadProfile(cpu_fraction=1.5)

    def test_duration_positive(self):
        with pytest.raises(InvalidSpec):
            WorkloadProfile(duration_s=0)

    def test_dict_round_trip(self):
        spec = TaskSpec("t", "F", CrCapacity(1, 2), {"A"}, {"Move"}, Position(1, 2),
                        WorkloadProfile(0.2, 3.0, True))
        assert TaskSpec.from_dict(spec.to_dict()) == spec

    def test_position_parse(self):
        assert Position.parse("3.0,4.5") == Position(3.0, 4.5)
        with pytest.raises(ResourceError):
            Position(float("nan"), 0)
