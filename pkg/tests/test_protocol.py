import json
import random
import struct
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from robotcenter.protocol import (
    KINDS, MAX_FRAME, REQUIRED, Envelope, FrameDecoder, InvariantViolation, JsonCodec,
    MalformedFrame, OversizeFrame, ProtocolError, Sequencer, UnknownKind, decode, encode,
    error_envelope,
)

VECTORS = Path(__file__).resolve().parents[1] / "vectors"

json_scalars = (st.none() | st.booleans() | st.integers(-2**63, 2**63)
                | st.floats(allow_nan=False, allow_infinity=False) | st.text(max_size=20))
json_values = st.recursive(json_scalars,
                           lambda kids: st.lists(kids, max_size=4)
                           | st.dictionaries(st.text(max_size=8), kids, max_size=4),
                           max_leaves=12)


@st.composite
def envelopes(draw):
    kind = draw(st.sampled_from(sorted(KINDS)))
    body = draw(st.dictionaries(st.text(max_size=8), json_values, max_size=4))
    for key in REQUIRED[kind]:
        body.setdefault(key, draw(json_values))
    return Envelope(kind, draw(st.integers(0, 2**53)), draw(st.text(min_size=1, max_size=12)), body)


def golden_names():
    return sorted(p.stem for p in VECTORS.glob("*.frame"))


class TestRoundTrip:
    @given(envelopes())
    @settings(max_examples=300)
    def test_decode_inverts_encode(self, env):
        assert decode(encode(env)) == env

    @given(envelopes())
    @settings(max_examples=100)
    def test_encoding_is_canonical(self, env):
        frame = encode(env)
        assert encode(decode(frame)) == frame

    def test_key_order_does_not_matter(self):
        a = Envelope("Heartbeat", 1, "x", {"b": 1, "a": {"z": 0, "y": 1}})
        b = Envelope("Heartbeat", 1, "x", {"a": {"y": 1, "z": 0}, "b": 1})
        assert encode(a) == encode(b)

    def test_codec_interface(self):
        env = Envelope("SlaveLost", 3, "master", {"slave_id": "S1"})
        assert JsonCodec.decode(JsonCodec.encode(env)) == env


class TestGoldenVectors:
    def test_there_are_vectors_for_every_kind(self):
        kinds = {json.loads((VECTORS / f"{n}.json").read_text())["kind"] for n in golden_names()}
        assert kinds == KINDS

    @pytest.mark.parametrize("name", golden_names())
    def test_vector_bit_exact(self, name):
        expected = json.loads((VECTORS / f"{name}.json").read_text(encoding="utf-8"))
        frame = (VECTORS / f"{name}.frame").read_bytes()
        env = Envelope(**expected)
        assert encode(env) == frame
        assert decode(frame) == env
        assert struct.unpack(">I", frame[:4])[0] == len(frame) - 4

    @pytest.mark.parametrize("name", json.loads((VECTORS / "invalid" / "expected.json").read_text()))
    def test_invalid_vectors_rejected(self, name):
        expected = json.loads((VECTORS / "invalid" / "expected.json").read_text())[name]
        frame = (VECTORS / "invalid" / f"{name}.frame").read_bytes()
        with pytest.raises(ProtocolError) as ei:
            decode(frame)
        assert type(ei.value).__name__ == expected


class TestValidation:
    def test_unknown_kind_keeps_envelope_fields(self):
        payload = b'{"body":{},"kind":"Bogus","sender_id":"F1","seq":9}'
        frame = struct.pack(">I", len(payload)) + payload
        with pytest.raises(UnknownKind) as ei:
            decode(frame)
        assert (ei.value.kind, ei.value.seq, ei.value.sender_id) == ("Bogus", 9, "F1")

    def test_encode_validates(self):
        with pytest.raises(InvariantViolation):
            encode(Envelope("KillTask", 1, "F", {"task_id": "t"}))
        with pytest.raises(UnknownKind):
            encode(Envelope("Nope", 1, "F", {}))
        with pytest.raises(InvariantViolation):
            encode(Envelope("Heartbeat", -1, "F", {}))
        with pytest.raises(InvariantViolation):
            encode(Envelope("Heartbeat", 1, "", {}))
        with pytest.raises(InvariantViolation):
            encode(Envelope("Heartbeat", 1, "F", {"x": float("nan")}))

    def test_extra_envelope_field_rejected(self):
        payload = b'{"body":{},"extra":1,"kind":"Heartbeat","sender_id":"x","seq":1}'
        with pytest.raises(MalformedFrame):
            decode(struct.pack(">I", len(payload)) + payload)

    def test_non_finite_literals_rejected(self):
        for lit in (b"NaN", b"Infinity", b"-Infinity"):
            payload = b'{"body":{"v":' + lit + b'},"kind":"Heartbeat","sender_id":"x","seq":1}'
            with pytest.raises(MalformedFrame):
                decode(struct.pack(">I", len(payload)) + payload)


class TestFraming:
    def test_chunked_stream_any_split(self):
        envs = [Envelope("Heartbeat", i, "x", {"n": "y" * (i * 37 % 200)}) for i in range(1, 30)]
        stream = b"".join(encode(e) for e in envs)
        rng = random.Random(5)
        for _ in range(50):
            dec, got, pos = FrameDecoder(), [], 0
            while pos < len(stream):
                step = rng.randint(1, 64)
                got += dec.feed(stream[pos:pos + step])
                pos += step
            assert got == envs
            assert dec.pending == 0
            dec.close()

    def test_byte_at_a_time(self):
        env = Envelope("SlaveLost", 1, "m", {"slave_id": "S"})
        dec = FrameDecoder()
        out = []
        for b in encode(env):
            out += dec.feed(bytes([b]))
        assert out == [env]

    def test_truncated_stream_detected_on_close(self):
        frame = encode(Envelope("Heartbeat", 1, "x", {}))
        for cut in range(1, len(frame)):
            dec = FrameDecoder()
            assert dec.feed(frame[:cut]) == []
            with pytest.raises(MalformedFrame):
                dec.close()

    def test_decode_rejects_truncation_and_trailing_bytes(self):
        frame = encode(Envelope("Heartbeat", 1, "x", {}))
        for cut in range(len(frame)):
            with pytest.raises(MalformedFrame):
                decode(frame[:cut])
        with pytest.raises(MalformedFrame):
            decode(frame + b"\x00")

    def test_bad_frame_does_not_poison_stream(self):
        bad = struct.pack(">I", 3) + b"{x}"
        good = Envelope("Heartbeat", 2, "x", {})
        out = FrameDecoder().feed(bad + encode(good))
        assert isinstance(out[0], MalformedFrame) and out[1] == good

    def test_oversize_prefix_breaks_stream(self):
        dec = FrameDecoder()
        with pytest.raises(MalformedFrame):
            dec.feed(struct.pack(">I", MAX_FRAME + 1))
        assert dec.broken
        with pytest.raises(MalformedFrame):
            dec.feed(b"")

    def test_oversize_encode(self):
        with pytest.raises(OversizeFrame):
            encode(Envelope("Heartbeat", 1, "x", {"p": "x" * MAX_FRAME}))

    def test_one_mebibyte_payload(self):
        env = Envelope("Heartbeat", 1, "x", {"payload": "x" * (1 << 20)})
        frame = encode(env)
        dec = FrameDecoder()
        out = []
        for i in range(0, len(frame), 65536):
            out += dec.feed(frame[i:i + 65536])
        assert out == [env]

    def test_sequence_check(self):
        dec = FrameDecoder(check_seq=True)
        out = dec.feed(encode(Envelope("Heartbeat", 2, "x", {})) + encode(Envelope("Heartbeat", 2, "x", {})))
        assert isinstance(out[0], Envelope) and isinstance(out[1], InvariantViolation)


class TestFuzz:
    def test_random_bytes_fail_gracefully(self):
        rng = random.Random(99)
        for _ in range(3000):
            blob = rng.randbytes(rng.randint(0, 80))
            try:
                decode(blob)
            except ProtocolError:
                pass

    def test_mutated_frames_fail_gracefully(self):
        rng = random.Random(100)
        seeds = [p.read_bytes() for p in VECTORS.glob("*.frame")]
        for _ in range(3000):
            frame = bytearray(rng.choice(seeds))
            for _ in range(rng.randint(1, 4)):
                i = rng.randrange(len(frame))
                frame[i] = rng.randrange(256)
            try:
                decode(bytes(frame))
            except ProtocolError:
                pass
            dec = FrameDecoder()
            try:
                for item in dec.feed(bytes(frame)):
                    assert isinstance(item, (Envelope, ProtocolError))
            except MalformedFrame:
                pass


class TestHelpers:
    def test_sequencer_increases(self):
        s = Sequencer("S1")
        assert [s("Heartbeat").seq for _ in range(3)] == [1, 2, 3]

    def test_error_envelope(self):
        env = error_envelope(Sequencer("m"), UnknownKind("X", 4), ref_seq=4)
        assert env.body == {"code": "unknown-kind", "message": "unknown message kind 'X'", "ref_seq": 4}
