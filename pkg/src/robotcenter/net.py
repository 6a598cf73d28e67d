"""TCP mode: the same master, slave and framework state machines on asyncio.

Each process owns one node. Inbound frames and timer ticks are funneled into
a single coroutine per node, so node code never runs concurrently with
itself, exactly as in simulation. Time is wall-clock seconds since the node
started.
"""
from __future__ import annotations

import asyncio
import itertools
import logging
from typing import Callable, Optional, TextIO

from .framework import SchedulerDriver
from .master import EventLog, Master, MasterConfig
from .protocol import (
    Envelope, FrameDecoder, MalformedFrame, ProtocolError, Sequencer, encode, error_envelope,
)
from .slave import SlaveAgent

log = logging.getLogger(__name__)

READ_CHUNK = 1 << 16


def parse_addr(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"expected host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


class _Clock:
    def __init__(self):
        self._t0 = asyncio.get_running_loop().time()

    def __call__(self) -> float:
        return asyncio.get_running_loop().time() - self._t0


class _Conn:
    _ids = itertools.count(1)

    def __init__(self, writer: asyncio.StreamWriter):
        self.id = next(self._ids)
        self.writer = writer

    def __repr__(self) -> str:
        return f"<conn {self.id}>"


class MasterServer:
    """Serves one :class:`Master` on a listening socket."""

    def __init__(self, config: Optional[MasterConfig] = None, host: str = "127.0.0.1",
                 port: int = 5050, event_sink: Optional[TextIO] = None, tick_s: float = 0.05):
        self.host, self.port = host, port
        self.tick_s = tick_s
        self.log = EventLog(event_sink)
        self.master = Master(config, send=self._send, log=self.log)
        self._seq = Sequencer("master")
        self._inbox: asyncio.Queue = asyncio.Queue()
        self._server: Optional[asyncio.AbstractServer] = None
        self._tasks: list[asyncio.Task] = []
        self._conns: set[_Conn] = set()

    @property
    def address(self) -> str:
        return f"{self.host}:{self.port}"

    def _send(self, conn: _Conn, env: Envelope) -> None:
        if conn in self._conns and not conn.writer.is_closing():
            conn.writer.write(encode(env))

    async def start(self) -> None:
        self._clock = _Clock()
        self._server = await asyncio.start_server(self._serve, self.host, self.port)
        self.port = self._server.sockets[0].getsockname()[1]
        self._tasks = [asyncio.ensure_future(self._loop()), asyncio.ensure_future(self._timer())]
        log.info("master listening on %s", self.address)

    async def stop(self) -> None:
        for t in self._tasks:
            t.cancel()
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
        for conn in list(self._conns):
            conn.writer.close()

    async def __aenter__(self) -> MasterServer:
        await self.start()
        return self

    async def __aexit__(self, *exc) -> None:
        await self.stop()

    async def serve_forever(self) -> None:
        await self.start()
        try:
            await asyncio.gather(*self._tasks)
        finally:
            await self.stop()

    async def _timer(self) -> None:
        while True:
            await asyncio.sleep(self.tick_s)
            await self._inbox.put(("tick", None, None))

    async def _loop(self) -> None:
        while True:
            what, conn, item = await self._inbox.get()
            now = self._clock()
            if what == "tick":
                self.master.tick(now)
            elif what == "env":
                self.master.handle(item, now, addr=conn)
            elif what == "gone":
                self.master.disconnected(conn)

    async def _serve(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        conn = _Conn(writer)
        self._conns.add(conn)
        decoder = FrameDecoder()
        try:
            while True:
                data = await reader.read(READ_CHUNK)
                if not data:
                    break
                try:
                    items = decoder.feed(data)
                except MalformedFrame as exc:
                    writer.write(encode(error_envelope(self._seq, exc)))
                    break
                for item in items:
                    if isinstance(item, ProtocolError):
                        writer.write(encode(error_envelope(self._seq, item, getattr(item, "seq", None))))
                    else:
                        await self._inbox.put(("env", conn, item))
                await writer.drain()
        except ConnectionError:
            pass
        finally:
            self._conns.discard(conn)
            await self._inbox.put(("gone", conn, None))
            writer.close()


class NodeClient:
    """Connects one node to the master, reconnecting with a buffered outbox.

    ``handle(env, now)`` and ``tick(now)`` are the node's entry points; the
    node sends through :meth:`send`, which buffers while disconnected.
    ``on_connect`` runs after every successful (re)connection.
    """

    def __init__(self, master: str, handle: Callable[[Envelope, float], None],
                 tick: Callable[[float], None], tick_s: float = 0.05,
                 on_connect: Optional[Callable[[bool], None]] = None, retry_s: float = 0.5):
        self.host, self.port = parse_addr(master)
        self._handle, self._tick = handle, tick
        self.tick_s = tick_s
        self.retry_s = retry_s
        self.on_connect = on_connect
        self._outbox: list[bytes] = []
        self._writer: Optional[asyncio.StreamWriter] = None
        self._inbox: asyncio.Queue = asyncio.Queue()
        self.connects = 0
        self.stopping = False

    def send(self, env: Envelope) -> None:
        frame = encode(env)
        if self._writer is None or self._writer.is_closing():
            self._outbox.append(frame)
        else:
            self._writer.write(frame)

    async def _connection(self) -> None:
        while not self.stopping:
            try:
                reader, writer = await asyncio.open_connection(self.host, self.port)
            except OSError:
                await asyncio.sleep(self.retry_s)
                continue
            self._writer = writer
            self.connects += 1
            pending, self._outbox = self._outbox, []
            for frame in pending:
                writer.write(frame)
            await self._inbox.put(("connected", self.connects > 1))
            decoder = FrameDecoder()
            try:
                while True:
                    data = await reader.read(READ_CHUNK)
                    if not data:
                        break
                    for item in decoder.feed(data):
                        if isinstance(item, Envelope):
                            await self._inbox.put(("env", item))
                        else:
                            log.warning("dropping bad frame from master: %s", item)
                    await writer.drain()
            except (ConnectionError, MalformedFrame) as exc:
                log.warning("connection to master lost: %s", exc)
            self._writer = None
            writer.close()
            if not self.stopping:
                await asyncio.sleep(self.retry_s)

    async def _timer(self) -> None:
        while True:
            await asyncio.sleep(self.tick_s)
            await self._inbox.put(("tick", None))

    async def run(self, until: Optional[Callable[[], bool]] = None,
                  timeout_s: Optional[float] = None) -> bool:
        """Run until ``until()`` holds (returns True) or ``timeout_s`` passes (False)."""
        clock = _Clock()
        tasks = [asyncio.ensure_future(self._connection()), asyncio.ensure_future(self._timer())]
        self._tick(0.0)
        try:
            while True:
                if until is not None and until():
                    return True
                if timeout_s is not None and clock() >= timeout_s:
                    return False
                try:
                    what, item = await asyncio.wait_for(self._inbox.get(), self.tick_s * 2)
                except asyncio.TimeoutError:
                    continue
                now = clock()
                if what == "tick":
                    self._tick(now)
                elif what == "env":
                    self._handle(item, now)
                elif what == "connected" and self.on_connect is not None:
                    self.on_connect(item)
                if self._writer is not None:
                    await self._writer.drain()
        finally:
            self.stopping = True
            if self._writer is not None:
                try:
                    await self._writer.drain()
                except ConnectionError:
                    pass
                self._writer.close()
            for t in tasks:
                t.cancel()


def slave_client(agent_factory: Callable[[Callable[[Envelope], None]], SlaveAgent],
                 master: str, tick_s: float = 0.05) -> tuple[SlaveAgent, NodeClient]:
    holder: dict = {}
    client = NodeClient(master, lambda env, now: holder["agent"].handle(env, now),
                        lambda now: holder["agent"].tick(now), tick_s)
    holder["agent"] = agent = agent_factory(client.send)
    return agent, client


def framework_client(driver_factory: Callable[[Callable[[Envelope], None]], SchedulerDriver],
                     master: str, tick_s: float = 0.05) -> tuple[SchedulerDriver, NodeClient]:
    holder: dict = {}

    def reconnected(again: bool) -> None:
        # an update rebinds this framework to the new connection on the master
        d = holder["driver"]
        if again and d.registered and not d.stopped:
            d.setPosition(d.position)

    client = NodeClient(master, lambda env, now: holder["driver"].handle(env, now),
                        lambda now: holder["driver"].tick(now), tick_s, on_connect=reconnected)
    holder["driver"] = driver = driver_factory(client.send)
    return driver, client
