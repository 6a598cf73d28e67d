"""Internal wire protocol.

Each message is an :class:`Envelope` serialized as canonical JSON (sorted
keys, no insignificant whitespace, shortest round-trip floats) and prefixed
with a 4-byte big-endian length. :class:`FrameDecoder` reassembles frames
from arbitrary chunks of a byte stream.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Any, Optional, Protocol, Union

MAX_FRAME = 16 * 1024 * 1024
_LEN = struct.Struct(">I")

KINDS = frozenset({
    "RegisterSlave", "SlaveRegistered", "RegisterFramework", "FrameworkRegistered",
    "UpdateFramework", "UnregisterFramework",
    "ResourceReport", "ResourceOffers", "OfferResponse", "RescindOffer",
    "LaunchTask", "KillTask", "StatusUpdate", "SlaveLost", "Heartbeat", "Error",
})

# Body keys every message of a kind must carry.
REQUIRED = {
    "RegisterSlave": ("slave_id", "total_cr", "sensors", "actuators"),
    "SlaveRegistered": ("slave_id",),
    "RegisterFramework": ("name",),
    "FrameworkRegistered": ("framework_id",),
    "UpdateFramework": ("framework_id",),
    "UnregisterFramework": ("framework_id",),
    "ResourceReport": ("slave_id", "cr", "sensors", "actuators", "tasks"),
    "ResourceOffers": ("offers",),
    "OfferResponse": ("framework_id", "offer_id", "action"),
    "RescindOffer": ("offer_id",),
    "LaunchTask": ("task",),
    "KillTask": ("framework_id", "task_id"),
    "StatusUpdate": ("framework_id", "task_id", "status"),
    "SlaveLost": ("slave_id",),
    "Heartbeat": (),
    "Error": ("code",),
}


class ProtocolError(Exception):
    code = "protocol-error"


class MalformedFrame(ProtocolError):
    code = "malformed-frame"


class OversizeFrame(ProtocolError):
    code = "oversize-frame"


class UnknownKind(ProtocolError):
    code = "unknown-kind"

    def __init__(self, kind: str, seq: Any = None, sender_id: Any = None):
        super().__init__(f"unknown message kind {kind!r}")
        self.kind = kind
        self.seq = seq
        self.sender_id = sender_id


class InvariantViolation(ProtocolError):
    code = "invariant-violation"


@dataclass(frozen=True)
class Envelope:
    kind: str
    seq: int
    sender_id: str
    body: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "seq": self.seq, "sender_id": self.sender_id, "body": self.body}


def canonical_json(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=False, allow_nan=False).encode("utf-8")


def validate(env: Envelope) -> None:
    if env.kind not in KINDS:
        raise UnknownKind(env.kind, env.seq, env.sender_id)
    if not isinstance(env.seq, int) or isinstance(env.seq, bool) or env.seq < 0:
        raise InvariantViolation(f"seq must be a non-negative integer, got {env.seq!r}")
    if not isinstance(env.sender_id, str) or not env.sender_id:
        raise InvariantViolation("sender_id must be a nonempty string")
    if not isinstance(env.body, dict):
        raise InvariantViolation("body must be an object")
    missing = [k for k in REQUIRED[env.kind] if k not in env.body]
    if missing:
        raise InvariantViolation(f"{env.kind} body missing {missing}")


def encode(env: Envelope) -> bytes:
    validate(env)
    try:
        payload = canonical_json(env.to_dict())
    except (TypeError, ValueError) as exc:
        raise InvariantViolation(f"unserializable body: {exc}") from exc
    if len(payload) > MAX_FRAME:
        raise OversizeFrame(f"payload of {len(payload)} bytes exceeds {MAX_FRAME}")
    return _LEN.pack(len(payload)) + payload


def _reject_constant(name: str):
    raise ValueError(f"non-finite number {name}")


def decode_payload(payload: bytes) -> Envelope:
    try:
        obj = json.loads(payload.decode("utf-8"), parse_constant=_reject_constant)
    except (UnicodeDecodeError, ValueError, RecursionError) as exc:
        raise MalformedFrame(f"bad payload: {exc}") from None
    if not isinstance(obj, dict) or set(obj) != {"kind", "seq", "sender_id", "body"}:
        raise MalformedFrame("payload is not an envelope object")
    if not isinstance(obj["kind"], str):
        raise MalformedFrame("kind must be a string")
    env = Envelope(obj["kind"], obj["seq"], obj["sender_id"], obj["body"])
    validate(env)
    return env


def decode(data: bytes) -> Envelope:
    """Decode exactly one complete frame."""
    if len(data) < _LEN.size:
        raise MalformedFrame("truncated length prefix")
    (length,) = _LEN.unpack_from(data)
    if length > MAX_FRAME:
        raise MalformedFrame(f"declared length {length} exceeds {MAX_FRAME}")
    if len(data) != _LEN.size + length:
        raise MalformedFrame(f"declared length {length}, got {len(data) - _LEN.size} bytes")
    return decode_payload(bytes(data[_LEN.size:]))


class FrameDecoder:
    """Incremental decoder for one connection.

    :meth:`feed` returns the frames completed so far, in order. Each item is an
    :class:`Envelope` or, for a frame whose boundary was intact but whose
    content was rejected, the :class:`ProtocolError` describing it; the stream
    remains usable after such errors. A bad length prefix desynchronizes the
    stream and raises :class:`MalformedFrame`.
    """

    def __init__(self, check_seq: bool = False):
        self._buf = bytearray()
        self._check_seq = check_seq
        self._last_seq: dict[str, int] = {}
        self.broken = False

    def feed(self, data: bytes) -> list[Union[Envelope, ProtocolError]]:
        if self.broken:
            raise MalformedFrame("stream already desynchronized")
        self._buf += data
        out: list[Union[Envelope, ProtocolError]] = []
        while len(self._buf) >= _LEN.size:
            (length,) = _LEN.unpack_from(self._buf)
            if length > MAX_FRAME:
                self.broken = True
                raise MalformedFrame(f"declared length {length} exceeds {MAX_FRAME}")
            end = _LEN.size + length
            if len(self._buf) < end:
                break
            payload = bytes(self._buf[_LEN.size:end])
            del self._buf[:end]
            try:
                env = decode_payload(payload)
                if self._check_seq:
                    last = self._last_seq.get(env.sender_id)
                    if last is not None and env.seq <= last:
                        raise InvariantViolation(
                            f"seq {env.seq} from {env.sender_id} not after {last}")
                    self._last_seq[env.sender_id] = env.seq
                out.append(env)
            except ProtocolError as exc:
                out.append(exc)
        return out

    @property
    def pending(self) -> int:
        return len(self._buf)

    def close(self) -> None:
        """Signal end of stream; leftover bytes mean a truncated frame."""
        if self._buf:
            n = len(self._buf)
            self._buf.clear()
            raise MalformedFrame(f"stream closed with {n} bytes of an incomplete frame")


class Codec(Protocol):
    def encode(self, env: Envelope) -> bytes: ...

    def decode(self, data: bytes) -> Envelope: ...


class JsonCodec:
    """Default codec; a binary codec can be substituted with the same surface."""

    encode = staticmethod(encode)
    decode = staticmethod(decode)


class Sequencer:
    """Stamps outgoing envelopes with a strictly increasing sequence number."""

    def __init__(self, sender_id: str, start: int = 1):
        self.sender_id = sender_id
        self._next = start

    def __call__(self, kind: str, body: Optional[dict] = None) -> Envelope:
        env = Envelope(kind, self._next, self.sender_id, body or {})
        self._next += 1
        return env


def error_envelope(seq: Sequencer, exc: ProtocolError, ref_seq: Any = None) -> Envelope:
    body = {"code": exc.code, "message": str(exc)}
    if isinstance(ref_seq, int):
        body["ref_seq"] = ref_seq
    return seq("Error", body)
