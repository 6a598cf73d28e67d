"""Round-trip measurements over the internal protocol.

Three paths, each carrying a ``Heartbeat`` envelope with an opaque payload to
an echo responder and back through the real codec:

``in-process``
    two asyncio queues in one event loop (container-to-container analog)
``loopback``
    a TCP connection over 127.0.0.1 (framework-to-slave analog)
``loopback+delay``
    loopback with a fixed delay injected on each direction (robot-to-cloud
    analog); the delay is applied after a frame fully arrives.
"""
from __future__ import annotations

import asyncio
import statistics
import time
from typing import Optional

from .protocol import Envelope, FrameDecoder, decode, encode

PATHS = ("in-process", "loopback", "loopback+delay")
PAYLOAD_SIZES = (1024, 10 * 1024, 100 * 1024, 1024 * 1024)


class RttTimeout(TimeoutError):
    pass


async def precise_sleep(seconds: float) -> None:
    """Sleep with sub-millisecond accuracy: coarse sleep, then spin.

    The spin margin is wide because a late event-loop wakeup would skip the
    spin entirely and add its lateness to the measurement.
    """
    deadline = time.perf_counter() + seconds
    coarse = seconds - 0.01
    if coarse > 0:
        await asyncio.sleep(coarse)
    while time.perf_counter() < deadline:
        pass


def _echo(env: Envelope, seq: int) -> Envelope:
    return Envelope("Heartbeat", seq, "echo", env.body)


class RttHarness:
    """Holds one echo endpoint open so repeated probes measure only the round trip."""

    def __init__(self, path: str, delay_s: float = 0.05, timeout_s: float = 5.0):
        if path not in PATHS:
            raise ValueError(f"unknown path {path!r}; expected one of {PATHS}")
        self.path = path
        self.delay_s = delay_s if path == "loopback+delay" else 0.0
        self.timeout_s = timeout_s
        self._seq = 0
        self._server: Optional[asyncio.AbstractServer] = None
        self._reader = self._writer = None
        self._decoder = FrameDecoder()
        self._tasks: list[asyncio.Task] = []

    async def __aenter__(self) -> RttHarness:
        if self.path == "in-process":
            self._to_echo: asyncio.Queue = asyncio.Queue()
            self._from_echo: asyncio.Queue = asyncio.Queue()
            self._tasks.append(asyncio.ensure_future(self._queue_echo()))
        else:
            self._server = await asyncio.start_server(self._tcp_echo, "127.0.0.1", 0)
            port = self._server.sockets[0].getsockname()[1]
            self._reader, self._writer = await asyncio.open_connection("127.0.0.1", port)
        return self

    async def __aexit__(self, *exc) -> None:
        for t in self._tasks:
            t.cancel()
        if self._writer is not None:
            self._writer.close()
            try:
                await self._writer.wait_closed()
            except ConnectionError:
                pass
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()

    async def _queue_echo(self) -> None:
        seq = 0
        while True:
            frame = await self._to_echo.get()
            seq += 1
            await self._from_echo.put(encode(_echo(decode(frame), seq)))

    async def _tcp_echo(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        decoder = FrameDecoder()
        seq = 0
        try:
            while True:
                data = await reader.read(1 << 20)
                if not data:
                    break
                for item in decoder.feed(data):
                    if not isinstance(item, Envelope):
                        continue
                    if self.delay_s:
                        await precise_sleep(self.delay_s)
                    seq += 1
                    writer.write(encode(_echo(item, seq)))
                    await writer.drain()
        except (ConnectionError, asyncio.CancelledError):
            pass
        finally:
            writer.close()

    async def _roundtrip(self, frame: bytes) -> Envelope:
        if self.path == "in-process":
            await self._to_echo.put(frame)
            return decode(await self._from_echo.get())
        self._writer.write(frame)
        await self._writer.drain()
        while True:
            data = await self._reader.read(1 << 20)
            if not data:
                raise ConnectionError("echo connection closed")
            items = self._decoder.feed(data)
            if items:
                reply = items[0]
                if self.delay_s:
                    await precise_sleep(self.delay_s)
                return reply

    async def probe(self, payload_size: int) -> float:
        """One round trip of a ``payload_size``-byte payload, in seconds."""
        self._seq += 1
        env = Envelope("Heartbeat", self._seq, "probe", {"payload": "x" * payload_size})
        start = time.perf_counter()
        try:
            reply = await asyncio.wait_for(self._roundtrip(encode(env)), self.timeout_s)
        except asyncio.TimeoutError:
            raise RttTimeout(f"{self.path} probe of {payload_size} bytes timed out") from None
        elapsed = time.perf_counter() - start
        if len(reply.body.get("payload", "")) != payload_size:
            raise ConnectionError("echo returned a different payload")
        return elapsed


def rtt_probe(path: str, payload_size: int, *, delay_s: float = 0.05,
              timeout_s: float = 5.0, warmup: int = 1) -> float:
    """Measure a single round trip on a fresh endpoint (after ``warmup`` probes)."""

    async def run() -> float:
        async with RttHarness(path, delay_s, timeout_s) as h:
            for _ in range(warmup):
                await h.probe(payload_size)
            return await h.probe(payload_size)

    return asyncio.run(run())


def percentile(values: list[float], q: float) -> float:
    """Nearest-rank percentile, q in [0, 100]."""
    ordered = sorted(values)
    k = max(0, min(len(ordered) - 1, int(-(-q * len(ordered) // 100)) - 1))
    return ordered[k]


async def measure(paths=PATHS, sizes=PAYLOAD_SIZES, probes: int = 30, delay_s: float = 0.05,
                  timeout_s: float = 5.0, warmup: int = 3) -> list[dict]:
    """Median and p95 per (path, payload size), one row each, in path-major order.

    Every round probes each size once, so slow drift of the machine lands on all
    sizes alike. Each timed probe is preceded by an untimed one of the same size:
    the probe right after a 1 MiB one pays for freeing that buffer, and without
    the settle probe that cost inverts the small sizes. The given paths take
    turns probe by probe, in reversed order every other round, for the same reason.
    """
    if isinstance(paths, str):
        paths = (paths,)
    samples = {(p, s): [] for p in paths for s in sizes}
    failures = {k: 0 for k in samples}
    harnesses = [RttHarness(p, delay_s, timeout_s) for p in paths]
    for h in harnesses:
        await h.__aenter__()
    try:
        for s in sizes:
            for h in harnesses:
                for _ in range(warmup):
                    await h.probe(s)
        for i in range(probes):
            order = harnesses if i % 2 == 0 else harnesses[::-1]
            for s in sizes:
                for h in order:
                    try:
                        await h.probe(s)
                        samples[h.path, s].append(await h.probe(s))
                    except (RttTimeout, ConnectionError):
                        failures[h.path, s] += 1
    finally:
        for h in harnesses:
            await h.__aexit__(None, None, None)
    rows = []
    for (p, s), vals in samples.items():
        rows.append({
            "path": p, "payload_bytes": s, "probes": len(vals), "failures": failures[p, s],
            "median_ms": statistics.median(vals) * 1000 if vals else None,
            "p95_ms": percentile(vals, 95) * 1000 if vals else None,
        })
    return rows
