"""Desk-scale reproductions of the utilization and round-trip experiments."""
from __future__ import annotations

import asyncio
import copy
import csv
import io
import json
import os
from importlib import resources
from pathlib import Path
from statistics import mean
from typing import Optional, Union

from .rtt import PATHS, PAYLOAD_SIZES, measure
from .sim import Scenario, emit_metrics, run_scenario

# CPU fractions of the three reference workloads run alone on a 4-core robot.
PROFILES = {"gmapping": 0.153, "monitoring": 0.131, "recognition": 0.517}
THIRD_ARRIVAL_S = 165.0
# Measured on real hardware with real workloads; the additive model does not reach them.
MEASURED_MIXED_PCT = {"before": 69.66, "after": 98.38}

GAP_NOTE = ("Utilization is modeled additively from per-workload CPU fractions; "
            "co-location overheads of real workloads are not simulated, so the "
            "measured 69.66% / 98.38% exceed the modeled 28.4% / 80.1%.")


def shipped_scenario_dict(name: str) -> dict:
    with resources.files(__package__).joinpath("scenarios", f"{name}.json").open(encoding="utf-8") as fh:
        return json.load(fh)


def shipped_scenario(name: str) -> Scenario:
    return Scenario.from_dict(shipped_scenario_dict(name))


def single_workload_scenario(workload: str) -> Scenario:
    """The sharing scenario reduced to one framework running alone from t=0."""
    d = copy.deepcopy(shipped_scenario_dict("exp_sharing"))
    d["frameworks"] = [f for f in d["frameworks"] if f["framework_id"] == workload]
    d["frameworks"][0]["start_s"] = 0.0
    d["name"] = f"exp-sharing-single-{workload}"
    return Scenario.from_dict(d)


def exp_sharing(out_dir: Optional[Union[str, os.PathLike]] = None) -> dict:
    singles = {}
    for workload in PROFILES:
        result = run_scenario(single_workload_scenario(workload))
        singles[workload] = result.metrics.mean("turtlebot")
        if out_dir is not None:
            emit_metrics(result, Path(out_dir) / f"single-{workload}")

    mixed = run_scenario(shipped_scenario("exp_sharing"))
    before = mixed.metrics.mean("turtlebot", 0.0, THIRD_ARRIVAL_S)
    after = mixed.metrics.mean("turtlebot", THIRD_ARRIVAL_S)
    if out_dir is not None:
        emit_metrics(mixed, Path(out_dir) / "mixed")

    single_vals = list(singles.values())
    single_pcts = [v * 100 for v in PROFILES.values()]
    report = {
        "singles": singles,
        "mixed_before": before,
        "mixed_after": after,
        "mixed_mean": after,
        "ratio_vs_mean_single": after / mean(single_vals),
        "ratio_vs_min_single": after / min(single_vals),
        "measured_identity": {
            "ratio_vs_mean_single": MEASURED_MIXED_PCT["after"] / mean(single_pcts),
            "ratio_vs_min_single": MEASURED_MIXED_PCT["after"] / min(single_pcts),
        },
        "measured_mixed_pct": MEASURED_MIXED_PCT,
        "note": GAP_NOTE,
        "all_tasks_ok": mixed.ok,
    }
    if out_dir is not None:
        Path(out_dir, "sharing.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


def exp_rtt(out_dir: Optional[Union[str, os.PathLike]] = None, probes: int = 30,
            sizes=PAYLOAD_SIZES, delay_s: float = 0.05, timeout_s: float = 5.0,
            fast_probes: Optional[int] = 300) -> list[dict]:
    """RTT table for all paths and sizes.

    ``probes`` applies to the delayed path, where each probe costs ~100 ms. The
    undelayed paths differ by about a millisecond at 1 MiB, so they get
    ``fast_probes`` (at least ``probes``) to keep that gap above the noise.
    """
    async def run() -> list[dict]:
        # the fast paths share a rotation; the delay path sleeps ~100 ms per
        # probe, which would leave the others running on a cold cpu
        fast = [p for p in PATHS if p != "loopback+delay"]
        rows = await measure(fast, sizes, max(probes, fast_probes or 0), delay_s, timeout_s)
        return rows + await measure(["loopback+delay"], sizes, probes, delay_s, timeout_s)

    rows = asyncio.run(run())
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        Path(out_dir, "rtt.csv").write_text(rtt_csv(rows))
    return rows


def rtt_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    fields = ["path", "payload_bytes", "probes", "failures", "median_ms", "p95_ms"]
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{r[k]:.4f}" if k.endswith("_ms") and r[k] is not None else r[k])
                    for k in fields})
    return buf.getvalue()
