"""The single central broadcast node.

Emitters publish labeled flakes; sinks receive, per tick, every flake
whose label matches one of their subscriptions.  STATE flakes coalesce to
the last value per (scope, label, origin) within a tick; EVENT flakes are
queued and delivered exactly once each.  Nothing is delivered mid-tick,
and a node never receives its own flakes back.

The routing core (``Router``) is transport-free and single-writer; the
network layer wraps it with a length-framed TCP endpoint and a WebSocket
endpoint carrying identical packets, both serialized onto one asyncio
event loop.  A client's first packet must be an EVENT flake labeled
``sys.register`` whose TEXT payload is the registration JSON (see
docs/formats.md); the relay answers with ``sys.ack``.
"""

from __future__ import annotations

import asyncio
import contextlib
import json
import logging
import time
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

from websockets.asyncio.server import serve as ws_serve
from websockets.exceptions import ConnectionClosed

from .wire import (
    DecodeError,
    DeliveryClass,
    Flake,
    Payload,
    StreamDecoder,
    decode_flake,
    encode_flake,
)

log = logging.getLogger(__name__)

DEFAULT_PORT = 9090
DEFAULT_WS_PORT = 9091
DEFAULT_TICK_HZ = 60.0
OUTBOX_CAP = 1024

REGISTER_LABEL = "sys.register"
ACK_LABEL = "sys.ack"
ERROR_LABEL = "sys.error"
SYS_PREFIX = "sys."
RELAY_NAME = "relay"


class RelayError(Exception):
    pass


class DuplicateName(RelayError):
    pass


class EmptyRoles(RelayError):
    pass


class RoleViolation(RelayError):
    pass


class OriginSpoof(RelayError):
    pass


class AddressInUse(RelayError):
    pass


class SingleRelayViolation(AddressInUse):
    """Another relay already owns the endpoint; there can be only one."""


class NodeRole(Enum):
    EMITTER = "EMITTER"
    SINK = "SINK"


class PublishResult(Enum):
    ACCEPTED = "ACCEPTED"
    DROPPED_STALE = "DROPPED_STALE"


@dataclass(frozen=True)
class NodeRegistration:
    name: str
    roles: frozenset[NodeRole]
    subscriptions: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("node name must be nonempty")
        object.__setattr__(self, "roles", frozenset(NodeRole(r) for r in self.roles))
        object.__setattr__(self, "subscriptions", frozenset(self.subscriptions))

    @classmethod
    def from_json(cls, text: str) -> "NodeRegistration":
        rec = json.loads(text)
        return cls(
            name=rec["name"],
            roles=frozenset(NodeRole(r) for r in rec["roles"]),
            subscriptions=frozenset(rec.get("subscriptions", ())),
        )

    def to_json(self) -> str:
        return json.dumps(
            {
                "name": self.name,
                "roles": sorted(r.value for r in self.roles),
                "subscriptions": sorted(self.subscriptions),
            },
            sort_keys=True,
        )


def label_matches(label: str, pattern: str) -> bool:
    """Exact label, or trailing-star prefix pattern ('pose.*')."""
    if pattern.endswith("*"):
        return label.startswith(pattern[:-1])
    return label == pattern


@dataclass
class NodeSession:
    """A registered node's routing state plus its capped outbound queue."""

    reg: NodeRegistration
    outbox: deque = field(default_factory=deque)
    dropped_states: int = 0
    notify: object | None = None  # optional callable, poked after enqueue

    @property
    def name(self) -> str:
        return self.reg.name

    def is_sink(self) -> bool:
        return NodeRole.SINK in self.reg.roles

    def is_emitter(self) -> bool:
        return NodeRole.EMITTER in self.reg.roles

    def wants(self, label: str) -> bool:
        return any(label_matches(label, p) for p in self.reg.subscriptions)

    def enqueue(self, flakes: list[Flake]) -> None:
        """Append deliveries under the backpressure cap: oldest STATE
        packets fall out first, EVENTs are never dropped."""
        for f in flakes:
            if len(self.outbox) >= OUTBOX_CAP:
                victim = next(
                    (i for i, q in enumerate(self.outbox) if q.delivery is DeliveryClass.STATE),
                    None,
                )
                if victim is not None:
                    del self.outbox[victim]
                    self.dropped_states += 1
                elif f.delivery is DeliveryClass.STATE:
                    self.dropped_states += 1
                    continue  # queue is all EVENTs; drop the incoming STATE
            self.outbox.append(f)
        if flakes and self.notify is not None:
            self.notify()


class Router:
    """Transport-free routing core: registration, publish, per-tick flush.

    All mutations must come from one logical writer (the relay runs every
    handler on a single event loop; the harness calls it from one thread).
    """

    def __init__(self) -> None:
        self.nodes: dict[str, NodeSession] = {}
        self.coalesced: dict[tuple[str, str, str], Flake] = {}
        self.events: list[tuple[int, Flake]] = []
        self.last_seq: dict[str, int] = {}
        self.frame_no = 0
        self.stale_drops = 0
        self._arrival = 0

    def register(self, reg: NodeRegistration) -> NodeSession:
        if not reg.roles:
            raise EmptyRoles(reg.name)
        if reg.name in self.nodes or reg.name == RELAY_NAME:
            raise DuplicateName(reg.name)
        session = NodeSession(reg)
        self.nodes[reg.name] = session
        return session

    def unregister(self, name: str) -> None:
        self.nodes.pop(name, None)

    def publish(self, node: NodeSession, f: Flake) -> PublishResult:
        """Accept a flake for routing at the next tick.

        STATE flakes overwrite the coalesced slot for their key; EVENTs
        append to the queue.  A STATE flake whose seq is not newer than the
        origin's last seen is dropped with a warning.
        """
        if not node.is_emitter():
            raise RoleViolation(f"{node.name} is not an EMITTER")
        if f.origin != node.name:
            raise OriginSpoof(f"node {node.name!r} published origin {f.origin!r}")
        last = self.last_seq.get(f.origin, -1)
        if f.delivery is DeliveryClass.STATE:
            if f.seq <= last:
                self.stale_drops += 1
                log.warning("stale STATE from %s: seq %d <= %d", f.origin, f.seq, last)
                return PublishResult.DROPPED_STALE
            self.coalesced[(f.scope, f.label, f.origin)] = f
        else:
            self.events.append((self._arrival, f))
            self._arrival += 1
        if f.seq > last:
            self.last_seq[f.origin] = f.seq
        return PublishResult.ACCEPTED

    def run_tick(self) -> dict[str, list[Flake]]:
        """Flush the tick: deliver matching flakes to every sink, never back
        to their origin.  EVENTs first (seq order, arrival breaking ties),
        then STATEs label-sorted.  Clears the tick state."""
        events = [f for _, f in sorted(self.events, key=lambda p: (p[1].seq, p[0]))]
        states = [self.coalesced[k] for k in sorted(self.coalesced)]
        ordered = events + states
        deliveries: dict[str, list[Flake]] = {}
        for name, node in self.nodes.items():
            if not node.is_sink():
                continue
            mine = [f for f in ordered if f.origin != name and node.wants(f.label)]
            if mine:
                deliveries[name] = mine
                node.enqueue(mine)
        self.events.clear()
        self.coalesced.clear()
        self.frame_no += 1
        return deliveries


# ---------------------------------------------------------------------------
# network relay
# ---------------------------------------------------------------------------


@dataclass
class RelayConfig:
    host: str = "127.0.0.1"
    port: int = DEFAULT_PORT
    ws_port: int = DEFAULT_WS_PORT
    tick_hz: float = DEFAULT_TICK_HZ
    scope: str = "mirrorboard"
    log_path: str | None = None


def make_register_flake(reg: NodeRegistration, scope: str = "mirrorboard") -> Flake:
    return Flake(
        scope=scope,
        label=REGISTER_LABEL,
        origin=reg.name,
        delivery=DeliveryClass.EVENT,
        seq=1,
        payload=Payload.text(reg.to_json()),
    )


class Relay:
    """Network front of the router: framed TCP + WebSocket endpoints and the
    tick loop, all on one event loop (the single logical writer)."""

    def __init__(self, config: RelayConfig | None = None) -> None:
        self.config = config or RelayConfig()
        self.router = Router()
        self.tick_times: list[float] = []
        self.decode_errors = 0
        self._server: asyncio.Server | None = None
        self._ws_server = None
        self._tick_task: asyncio.Task | None = None
        self._log_file = None
        self._sys_seq = 0

    # -- lifecycle -----------------------------------------------------------

    async def start(self) -> None:
        cfg = self.config
        if cfg.log_path:
            self._log_file = open(cfg.log_path, "a", buffering=1)
        try:
            self._server = await asyncio.start_server(
                self._serve_tcp, cfg.host, cfg.port, reuse_address=False
            )
        except OSError as exc:
            self._close_log()
            raise SingleRelayViolation(
                f"endpoint {cfg.host}:{cfg.port} already bound ({exc})"
            ) from exc
        try:
            self._ws_server = await ws_serve(
                self._serve_ws,
                cfg.host,
                cfg.ws_port,
                process_request=self._ws_gate,
                max_size=2**24,
            )
        except OSError as exc:
            self._server.close()
            await self._server.wait_closed()
            self._close_log()
            raise SingleRelayViolation(
                f"endpoint {cfg.host}:{cfg.ws_port} already bound ({exc})"
            ) from exc
        self._tick_task = asyncio.get_running_loop().create_task(self._tick_loop())
        self._log({"event": "listen", "port": cfg.port, "ws_port": cfg.ws_port, "tick_hz": cfg.tick_hz})

    async def stop(self) -> None:
        if self._tick_task:
            self._tick_task.cancel()
            with contextlib.suppress(asyncio.CancelledError):
                await self._tick_task
        if self._server:
            self._server.close()
            await self._server.wait_closed()
        if self._ws_server:
            self._ws_server.close()
            await self._ws_server.wait_closed()
        self._close_log()

    def _close_log(self) -> None:
        if self._log_file:
            self._log_file.close()
            self._log_file = None

    def _log(self, rec: dict) -> None:
        if self._log_file:
            self._log_file.write(json.dumps(rec, sort_keys=True) + "\n")

    # -- tick loop -------------------------------------------------------------

    async def _tick_loop(self) -> None:
        period = 1.0 / self.config.tick_hz
        loop = asyncio.get_running_loop()
        next_at = loop.time() + period
        while True:
            await asyncio.sleep(max(0.0, next_at - loop.time()))
            self.tick_times.append(time.monotonic())
            self.router.run_tick()
            next_at += period
            # If we fell far behind (debugger, suspended VM), resync instead
            # of emitting a catch-up burst.
            if next_at < loop.time() - 1.0:
                next_at = loop.time() + period

    # -- shared connection logic ---------------------------------------------

    def _sys_flake(self, label: str, payload: dict) -> bytes:
        self._sys_seq += 1
        return encode_flake(
            Flake(
                scope=self.config.scope,
                label=label,
                origin=RELAY_NAME,
                delivery=DeliveryClass.EVENT,
                seq=self._sys_seq,
                payload=Payload.text(json.dumps(payload, sort_keys=True)),
            )
        )

    def _register_from_packet(self, f: Flake) -> NodeSession:
        if f.label != REGISTER_LABEL or f.delivery is not DeliveryClass.EVENT:
            raise RelayError(f"first packet must be a {REGISTER_LABEL} EVENT")
        try:
            reg = NodeRegistration.from_json(f.payload.data)
        except (ValueError, KeyError, TypeError) as exc:
            raise RelayError(f"bad registration payload: {exc}") from exc
        if not reg.roles:
            raise EmptyRoles(reg.name)
        return self.router.register(reg)

    def _handle_packet(self, session: NodeSession, packet: bytes) -> bytes | None:
        """Route one inbound packet; returns an error packet to send back,
        if any."""
        try:
            f = decode_flake(packet)
        except DecodeError as exc:
            self.decode_errors += 1
            self._log({"event": "decode_error", "node": session.name, "error": str(exc)})
            return self._sys_flake(ERROR_LABEL, {"error": "DecodeError", "detail": str(exc)})
        if f.label.startswith(SYS_PREFIX):
            return self._sys_flake(ERROR_LABEL, {"error": "ReservedLabel", "label": f.label})
        try:
            result = self.router.publish(session, f)
        except (RoleViolation, OriginSpoof) as exc:
            self._log({"event": "publish_rejected", "node": session.name, "error": type(exc).__name__})
            return self._sys_flake(
                ERROR_LABEL, {"error": type(exc).__name__, "detail": str(exc)}
            )
        if result is PublishResult.DROPPED_STALE:
            self._log({"event": "stale_state", "node": session.name, "seq": f.seq})
        return None

    # -- TCP endpoint ----------------------------------------------------------

    async def _serve_tcp(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        decoder = StreamDecoder()
        session: NodeSession | None = None
        wake = asyncio.Event()

        async def pump_outbox() -> None:
            try:
                while True:
                    await wake.wait()
                    wake.clear()
                    while session.outbox:
                        writer.write(encode_flake(session.outbox.popleft()))
                    await writer.drain()
            except (ConnectionError, asyncio.CancelledError):
                pass

        pump: asyncio.Task | None = None
        try:
            while True:
                data = await reader.read(65536)
                if not data:
                    break
                try:
                    packets = decoder.feed(data)
                except DecodeError:
                    self.decode_errors += 1
                    self._log({"event": "stream_desync", "node": session.name if session else None})
                    break  # stream desync is unrecoverable
                for packet in packets:
                    if session is None:
                        try:
                            session = self._register_from_packet(decode_flake(packet))
                        except (RelayError, DecodeError) as exc:
                            name = type(exc).__name__ if isinstance(exc, RelayError) else "DecodeError"
                            writer.write(self._sys_flake(ACK_LABEL, {"ok": False, "error": name, "detail": str(exc)}))
                            await writer.drain()
                            return
                        session.notify = wake.set
                        pump = asyncio.get_running_loop().create_task(pump_outbox())
                        writer.write(self._sys_flake(ACK_LABEL, {"ok": True, "name": session.name}))
                        self._log({"event": "register", "node": session.name, "transport": "tcp"})
                        continue
                    err = self._handle_packet(session, packet)
                    if err:
                        writer.write(err)
                await writer.drain()
        except ConnectionError:
            pass
        finally:
            if pump:
                pump.cancel()
                with contextlib.suppress(asyncio.CancelledError):
                    await pump
            if session:
                self.router.unregister(session.name)
                self._log({"event": "disconnect", "node": session.name})
            writer.close()
            with contextlib.suppress(ConnectionError):
                await writer.wait_closed()

    # -- WebSocket endpoint ------------------------------------------------------

    def _ws_gate(self, connection, request):
        if request.path != "/ws":
            return connection.respond(404, "mirrorboard relay: WebSocket path is /ws\n")
        return None

    async def _serve_ws(self, connection) -> None:
        session: NodeSession | None = None
        wake = asyncio.Event()

        async def pump_outbox() -> None:
            try:
                while True:
                    await wake.wait()
                    wake.clear()
                    while session.outbox:
                        await connection.send(encode_flake(session.outbox.popleft()))
            except (ConnectionClosed, asyncio.CancelledError):
                pass

        pump: asyncio.Task | None = None
        try:
            async for message in connection:
                if isinstance(message, str):
                    await connection.send(
                        self._sys_flake(ERROR_LABEL, {"error": "BinaryFramesOnly"})
                    )
                    continue
                if session is None:
                    try:
                        session = self._register_from_packet(decode_flake(message))
                    except (RelayError, DecodeError) as exc:
                        name = type(exc).__name__ if isinstance(exc, RelayError) else "DecodeError"
                        await connection.send(
                            self._sys_flake(ACK_LABEL, {"ok": False, "error": name, "detail": str(exc)})
                        )
                        return
                    session.notify = wake.set
                    pump = asyncio.get_running_loop().create_task(pump_outbox())
                    await connection.send(self._sys_flake(ACK_LABEL, {"ok": True, "name": session.name}))
                    self._log({"event": "register", "node": session.name, "transport": "ws"})
                    continue
                err = self._handle_packet(session, message)
                if err:
                    await connection.send(err)
        except ConnectionClosed:
            pass
        finally:
            if pump:
                pump.cancel()
                with contextlib.suppress(asyncio.CancelledError):
                    await pump
            if session:
                self.router.unregister(session.name)
                self._log({"event": "disconnect", "node": session.name})


class RelayClient:
    """Minimal asyncio TCP peer: register, publish, and drain deliveries."""

    def __init__(self, name: str, host: str = "127.0.0.1", port: int = DEFAULT_PORT) -> None:
        self.name = name
        self.host = host
        self.port = port
        self.seq = 0
        self.inbox: asyncio.Queue[Flake] = asyncio.Queue()
        self._reader: asyncio.StreamReader | None = None
        self._writer: asyncio.StreamWriter | None = None
        self._pump: asyncio.Task | None = None

    async def connect(self, reg: NodeRegistration, scope: str = "mirrorboard") -> dict:
        self._reader, self._writer = await asyncio.open_connection(self.host, self.port)
        self._writer.write(encode_flake(make_register_flake(reg, scope)))
        await self._writer.drain()
        decoder = StreamDecoder()
        while True:
            data = await self._reader.read(65536)
            if not data:
                raise RelayError("connection closed during registration")
            packets = decoder.feed(data)
            if packets:
                ack = decode_flake(packets[0])
                for extra in packets[1:]:
                    await self.inbox.put(decode_flake(extra))
                break
        if ack.label != ACK_LABEL:
            raise RelayError(f"expected {ACK_LABEL}, got {ack.label}")
        rec = json.loads(ack.payload.data)
        if not rec.get("ok"):
            raise RelayError(f"registration rejected: {rec}")
        self._pump = asyncio.get_running_loop().create_task(self._read_loop(decoder))
        return rec

    async def _read_loop(self, decoder: StreamDecoder) -> None:
        try:
            while True:
                data = await self._reader.read(65536)
                if not data:
                    break
                for packet in decoder.feed(data):
                    await self.inbox.put(decode_flake(packet))
        except (ConnectionError, asyncio.CancelledError, DecodeError):
            pass

    async def publish(self, label: str, payload: Payload, delivery=DeliveryClass.EVENT, scope: str = "mirrorboard") -> None:
        await self.publish_many([(label, payload, delivery)], scope)

    async def publish_many(self, items, scope: str = "mirrorboard") -> None:
        """Publish several flakes in one write so they land in the same tick."""
        chunks = []
        for label, payload, delivery in items:
            self.seq += 1
            chunks.append(
                encode_flake(
                    Flake(scope=scope, label=label, origin=self.name, delivery=delivery, seq=self.seq, payload=payload)
                )
            )
        self._writer.write(b"".join(chunks))
        await self._writer.drain()

    async def close(self) -> None:
        if self._pump:
            self._pump.cancel()
            with contextlib.suppress(asyncio.CancelledError):
                await self._pump
        if self._writer:
            self._writer.close()
            with contextlib.suppress(ConnectionError):
                await self._writer.wait_closed()


async def start_relay(config: RelayConfig | None = None) -> Relay:
    """Bind both endpoints and start ticking; raises SingleRelayViolation
    (an AddressInUse) when another relay already owns the port."""
    relay = Relay(config)
    await relay.start()
    return relay


def run_relay_forever(config: RelayConfig) -> None:
    """Blocking entry point used by the CLI."""

    async def main() -> None:
        relay = await start_relay(config)
        print(
            f"relay listening: tcp {config.host}:{config.port}, "
            f"ws ws://{config.host}:{config.ws_port}/ws, tick {config.tick_hz} Hz",
            flush=True,
        )
        try:
            await asyncio.Event().wait()
        finally:
            await relay.stop()

    asyncio.run(main())
