import csv
import io
import json
import time

import pytest

from robotcenter.experiments import (
    PROFILES, exp_sharing, shipped_scenario, shipped_scenario_dict, single_workload_scenario,
)
from robotcenter.sim import (
    Scenario, ScenarioInvalid, World, emit_metrics, random_scenario, run_scenario,
    scenario_to_dict, utilization_csv,
)


def tiny():
    return {
        "end_s": 5.0,
        "robots": [{"slave_id": "S1", "total_cr": {"cpus": 4, "mem_mb": 8192},
                    "sr_res": "cam:{ImageGen};", "position": {"x": 0, "y": 0}}],
        "frameworks": [{"framework_id": "F1", "position": {"x": 0, "y": 0}, "goal": [
            {"task_id": "t", "cr_demand": {"cpus": 1, "mem_mb": 0}, "sr_required": ["ImageGen"],
             "profile": {"cpu_fraction": 0.25, "duration_s": 2.0}}]}],
    }


class TestScenarioFile:
    @pytest.mark.parametrize("mutate, path", [
        (lambda d: d.update(tick_ms=0), "tick_ms"),
        (lambda d: d.update(end_s=-1), "end_s"),
        (lambda d: d.update(sample_s=0.15), "sample_s"),
        (lambda d: d["robots"].append(dict(d["robots"][0])), "robots[1].slave_id"),
        (lambda d: d["robots"][0].pop("total_cr"), "robots[0].total_cr"),
        (lambda d: d["robots"][0].update(sr_res="cam:{"), "robots[0]"),
        (lambda d: d["frameworks"][0].update(framework_id="S1"), "frameworks[0].framework_id"),
        (lambda d: d["frameworks"][0].update(start_s=9.0), "frameworks[0].start_s"),
        (lambda d: d["frameworks"][0].update(radius=0), "frameworks[0].radius"),
        (lambda d: d["frameworks"][0].update(scheduler="magic"), "frameworks[0].scheduler"),
        (lambda d: d["frameworks"][0]["goal"][0].update(cr_demand={"cpus": -1, "mem_mb": 0}),
         "frameworks[0].goal[0]"),
        (lambda d: d.update(latency_ms={"slave_slave": 3}), "latency_ms.slave_slave"),
        (lambda d: d.update(master={"round_interval_s": 0}), "master"),
        (lambda d: d["robots"][0].update(rejoin_at_s=3.0), "robots[0].rejoin_at_s"),
        (lambda d: d["robots"][0].update(fail_at_s=3.0, rejoin_at_s=2.0), "robots[0].rejoin_at_s"),
    ])
    def test_invalid_reports_field_path(self, mutate, path):
        d = tiny()
        mutate(d)
        with pytest.raises(ScenarioInvalid) as ei:
            Scenario.from_dict(d)
        assert ei.value.path == path

    @pytest.mark.parametrize("name", ["offer_example", "exp_sharing"])
    def test_to_dict_round_trip(self, name):
        s = shipped_scenario(name)
        again = Scenario.from_dict(json.loads(json.dumps(scenario_to_dict(s))))
        assert scenario_to_dict(again) == scenario_to_dict(s)
        assert run_scenario(again).log.dumps() == run_scenario(s).log.dumps()

    def test_load_from_file(self, tmp_path):
        p = tmp_path / "s.json"
        p.write_text(json.dumps(tiny()))
        assert Scenario.load(p).robots[0].config.slave_id == "S1"


class TestRun:
    def test_empty_scenario(self):
        result = run_scenario(Scenario())
        assert result.metrics.samples == [] and result.log.events == [] and result.ok

    def test_tiny_scenario_finishes(self):
        result = run_scenario(Scenario.from_dict(tiny()))
        assert result.ok
        events = [e["event"] for e in result.log.of("offer_accepted", "task_status")]
        statuses = [e["status"] for e in result.log.of("task_status")]
        # STAGING is implied by the accept itself
        assert events[0] == "offer_accepted"
        assert statuses == ["RUNNING", "FINISHED"]

    def test_unmet_expectation_is_reported(self):
        d = tiny()
        d["frameworks"][0]["goal"][0]["expect"] = "KILLED"
        result = run_scenario(Scenario.from_dict(d))
        assert not result.ok
        assert result.world.outcome()["F1"]["t"] == {"status": "FINISHED", "expect": "KILLED", "ok": False}

    def test_samples_every_second_in_range(self):
        result = run_scenario(Scenario.from_dict(tiny()))
        rows = result.metrics.robot("S1")
        assert [t for t, _ in rows] == [1.0, 2.0, 3.0, 4.0, 5.0]
        assert all(0.0 <= v <= 1.0 for _, v in rows)

    def test_latency_delays_delivery(self):
        d = tiny()
        d["latency_ms"] = {"master_slave": 300, "master_framework": 200}
        fast = run_scenario(Scenario.from_dict(tiny())).log.of("task_status")
        slow = run_scenario(Scenario.from_dict(d)).log.of("task_status")
        assert [e["status"] for e in slow] == [e["status"] for e in fast]
        assert slow[1]["t"] > fast[1]["t"]

    def test_crash_loses_tasks_and_rejoin_reregisters(self):
        d = tiny()
        d["end_s"] = 40.0
        d["robots"][0].update(fail_at_s=1.5, rejoin_at_s=20.0)
        d["frameworks"][0]["goal"][0]["profile"]["duration_s"] = None
        result = run_scenario(Scenario.from_dict(d))
        events = [e["event"] for e in result.log.events]
        assert "slave_lost" in events
        statuses = [e["status"] for e in result.log.of("task_status")]
        assert "LOST" in statuses
        assert statuses[-1] == "RUNNING"
        assert events.count("slave_registered") == 2
        assert events.count("slave_lost") == 1
        assert "slave_rejected" not in events


class TestDeterminism:
    @pytest.mark.parametrize("seed", [0, 7, 31])
    def test_identical_runs(self, seed):
        a = run_scenario(random_scenario(seed))
        b = run_scenario(random_scenario(seed))
        assert a.log.dumps() == b.log.dumps()
        assert utilization_csv(a.metrics) == utilization_csv(b.metrics)

    def test_chunked_execution_changes_nothing(self):
        s = random_scenario(3)
        whole = run_scenario(s).log.dumps()
        w = World(s)
        t = 0.0
        while t < s.end_s:
            t = round(t + 0.7, 3)
            w.run(min(t, s.end_s))
        assert w.log.dumps() == whole

    def test_wall_clock_speed_changes_nothing(self, monkeypatch):
        expected = run_scenario(random_scenario(5)).log.dumps()
        real = {n: getattr(time, n) for n in ("time", "monotonic", "perf_counter")}
        for name, fn in real.items():
            # a clock running 10x fast from an arbitrary epoch
            monkeypatch.setattr(time, name, lambda fn=fn: 1e6 + 10 * fn())
        monkeypatch.setattr(time, "sleep", lambda s: None)
        assert run_scenario(random_scenario(5)).log.dumps() == expected

    def test_re_emit_is_byte_identical(self, tmp_path):
        result = run_scenario(shipped_scenario("offer_example"))
        a = emit_metrics(result, tmp_path / "a")
        b = emit_metrics(result, tmp_path / "b")
        for key in a:
            assert a[key].read_bytes() == b[key].read_bytes()

    def test_emit_reports_path_on_failure(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        with pytest.raises(OSError, match="file"):
            emit_metrics(run_scenario(Scenario()), blocker / "sub")


class TestSharing:
    def test_single_scenario_keeps_one_framework(self):
        s = single_workload_scenario("recognition")
        assert [f.framework_id for f in s.frameworks] == ["recognition"]
        assert s.frameworks[0].start_s == 0.0

    def test_third_framework_arrives_mid_run(self):
        d = shipped_scenario_dict("exp_sharing")
        assert {f["framework_id"]: f.get("start_s", 0.0) for f in d["frameworks"]} == {
            "gmapping": 0.0, "monitoring": 0.0, "recognition": 165.0}

    def test_emits_300_rows_per_robot(self, tmp_path):
        exp_sharing(tmp_path)
        for sub in ["mixed"] + [f"single-{w}" for w in PROFILES]:
            rows = list(csv.DictReader(io.StringIO((tmp_path / sub / "utilization.csv").read_text())))
            assert len(rows) == 300
            assert all(0.0 <= float(r["fraction"]) <= 1.0 for r in rows)
        report = json.loads((tmp_path / "sharing.json").read_text())
        assert report["all_tasks_ok"]
