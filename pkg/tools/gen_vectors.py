"""Regenerate the golden wire vectors in ``vectors/``.

Each ``NAME.json`` holds an envelope as a plain object and ``NAME.frame`` the
exact bytes the codec must produce for it. Vectors listed in HAND_WRITTEN are
authored byte by byte and never overwritten here; run with ``--check`` to
verify instead of write.
"""
import argparse
import json
import sys
from pathlib import Path

from robotcenter.protocol import Envelope, encode

ROOT = Path(__file__).resolve().parents[1] / "vectors"
HAND_WRITTEN = {"heartbeat_handwritten"}

KINECT = {"name": "kinect", "functions": ["ImageGen", "LaserGen"]}
WHEEL = {"name": "wheel", "functions": ["Move"]}
TASK = {
    "task_id": "task1", "framework_id": "F1",
    "cr_demand": {"cpus": 2.0, "mem_mb": 4096.0},
    "sr_required": ["LaserGen"], "ar_required": ["Move"],
    "operation_position": {"x": 3.0, "y": 4.0},
    "profile": {"cpu_fraction": 0.153, "duration_s": None, "moves_robot": True},
}

VECTORS = {
    "register_slave": Envelope("RegisterSlave", 1, "S1", {
        "slave_id": "S1", "total_cr": {"cpus": 4.0, "mem_mb": 8192.0},
        "sensors": [KINECT], "actuators": [WHEEL], "position": {"x": 3.0, "y": 4.0}}),
    "register_slave_cloud": Envelope("RegisterSlave", 1, "edge-1", {
        "slave_id": "edge-1", "total_cr": {"cpus": 16.0, "mem_mb": 65536.0},
        "sensors": [], "actuators": [], "position": None}),
    "slave_registered": Envelope("SlaveRegistered", 7, "master", {"slave_id": "S1"}),
    "register_framework": Envelope("RegisterFramework", 1, "F1", {
        "name": "mapper", "position": {"x": 0.0, "y": 0.0}, "radius": 12.5, "max_offers": 3}),
    "register_framework_unbounded": Envelope("RegisterFramework", 1, "F2", {
        "name": "monitor", "position": {"x": -1.5, "y": 2.25}, "radius": None}),
    "framework_registered": Envelope("FrameworkRegistered", 2, "master", {"framework_id": "fw-0001"}),
    "update_framework": Envelope("UpdateFramework", 5, "F1", {
        "framework_id": "F1", "position": {"x": 10.0, "y": 0.5}}),
    "unregister_framework": Envelope("UnregisterFramework", 9, "F1", {"framework_id": "F1"}),
    "resource_report": Envelope("ResourceReport", 42, "S1", {
        "slave_id": "S1", "cr": {"cpus": 2.0, "mem_mb": 4096.0}, "sensors": [KINECT],
        "actuators": [], "position": {"x": 3.0, "y": 4.0}, "tasks": ["F1/task1"]}),
    "resource_offers": Envelope("ResourceOffers", 11, "master", {"offers": [
        {"offer_id": "o-5", "framework_id": "F2", "slave_id": "S1", "score": 5.0,
         "cr": {"cpus": 2.0, "mem_mb": 4096.0}, "sensors": [KINECT], "actuators": [],
         "position": {"x": 3.0, "y": 4.0}, "issued_at": 2.5, "ttl_s": 10.0},
        {"offer_id": "o-6", "framework_id": "F2", "slave_id": "cloud", "score": None,
         "cr": {"cpus": 8.0, "mem_mb": 16384.0}, "sensors": [], "actuators": [],
         "position": None, "issued_at": 2.5, "ttl_s": 10.0}]}),
    "resource_offers_empty": Envelope("ResourceOffers", 3, "master", {"offers": []}),
    "offer_accept": Envelope("OfferResponse", 4, "F1", {
        "framework_id": "F1", "offer_id": "o-1", "action": "ACCEPT", "tasks": [TASK]}),
    "offer_decline": Envelope("OfferResponse", 5, "F1", {
        "framework_id": "F1", "offer_id": "o-2", "action": "DECLINE", "refuse_s": 5.0}),
    "rescind_offer": Envelope("RescindOffer", 30, "master", {"offer_id": "o-2", "reason": "expired"}),
    "launch_task": Envelope("LaunchTask", 12, "master", {"task": TASK}),
    "kill_task": Envelope("KillTask", 6, "F1", {"framework_id": "F1", "task_id": "task1"}),
    "status_update": Envelope("StatusUpdate", 3, "S1", {
        "framework_id": "F1", "task_id": "task1", "status": "RUNNING"}),
    "status_update_failed": Envelope("StatusUpdate", 4, "S2", {
        "framework_id": "F1", "task_id": "task2", "status": "FAILED", "reason": "local-reject"}),
    "slave_lost": Envelope("SlaveLost", 50, "master", {"slave_id": "S2"}),
    "heartbeat": Envelope("Heartbeat", 100, "probe", {"payload": "xxxx"}),
    "error": Envelope("Error", 8, "master", {"code": "unknown-kind", "message": "unknown message kind 'Bogus'",
                                               "ref_seq": 3}),
    "unicode_and_floats": Envelope("RegisterFramework", 2**40, "Fé", {
        "name": "カメラ \"quoted\" \\ tab\t", "position": {"x": 0.1, "y": -1e-07}, "radius": 1e+300}),
}

# Frames the decoder must reject, with the error class name expected.
INVALID = {
    "truncated_payload": (b"\x00\x00\x00\x10" + b'{"kind":', "MalformedFrame"),
    "not_json": (b"\x00\x00\x00\x05hello", "MalformedFrame"),
    "unknown_kind": (None, "UnknownKind"),
    "missing_body_key": (None, "InvariantViolation"),
    "nan_value": (None, "MalformedFrame"),
    "oversize_prefix": (b"\x01\x00\x00\x01" + b"{}", "MalformedFrame"),
}


def _raw(payload: bytes) -> bytes:
    return len(payload).to_bytes(4, "big") + payload


def invalid_frames() -> dict:
    out = {}
    for name, (frame, err) in INVALID.items():
        if frame is None:
            payload = {
                "unknown_kind": b'{"body":{},"kind":"Bogus","sender_id":"x","seq":1}',
                "missing_body_key": b'{"body":{},"kind":"KillTask","sender_id":"F1","seq":1}',
                "nan_value": b'{"body":{"v":NaN},"kind":"Heartbeat","sender_id":"x","seq":1}',
            }[name]
            frame = _raw(payload)
        out[name] = (frame, err)
    return out


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--check", action="store_true")
    args = ap.parse_args()
    stale = []
    for name, env in VECTORS.items():
        expected_json = json.dumps(env.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"
        files = {ROOT / f"{name}.json": expected_json.encode("utf-8"), ROOT / f"{name}.frame": encode(env)}
        for path, data in files.items():
            if args.check:
                if not path.exists() or path.read_bytes() != data:
                    stale.append(path.name)
            else:
                path.write_bytes(data)
    for name, (frame, err) in invalid_frames().items():
        path = ROOT / "invalid" / f"{name}.frame"
        if args.check:
            if not path.exists() or path.read_bytes() != frame:
                stale.append(path.name)
        else:
            path.write_bytes(frame)
    if not args.check:
        (ROOT / "invalid" / "expected.json").write_text(
            json.dumps({n: e for n, (_, e) in invalid_frames().items()}, indent=2, sort_keys=True) + "\n")
    for s in stale:
        print(f"stale: {s}", file=sys.stderr)
    return 1 if stale else 0


if __name__ == "__main__":
    sys.exit(main())
