"""Session relay between the edge world and remote cockpit clients.

The relay speaks a small length-prefixed binary protocol over reliable
streams: clients JOIN with a role, the leader uplinks its world as
EGO_STATE, users send CONTROL toward the leader, and the relay broadcasts
a merged GLOBAL_STATE to every session at a fixed cadence. One broadcast
is encoded exactly once, so every subscriber of a given sequence number
receives byte-identical frames.

RelayCore is sans-IO: adapters (the in-sim fabric, the TCP server, the
websocket bridge) own sockets and clocks and hand buffers in. A malformed
stream kills only its own session.
"""

from __future__ import annotations

import logging
import math
import queue
import socket
import struct
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable

from .can_codec import ControlCommand
from .kinematics import Pose2D
from .world import EntityView

log = logging.getLogger(__name__)

MSG_JOIN = 1
MSG_EGO_STATE = 2
MSG_GLOBAL_STATE = 3
MSG_PING = 4
MSG_PONG = 5
MSG_CONTROL = 6

ROLE_LEADER = 1
ROLE_USER = 2

KIND_CODES = {"shadow": 1, "virtual": 2, "user": 3}
KIND_NAMES = {v: k for k, v in KIND_CODES.items()}

FLAG_TURN_LEFT = 0x01
FLAG_TURN_RIGHT = 0x02
FLAG_BRAKE_LIGHT = 0x04
FLAG_ENGAGE = 0x08

MAX_FRAME = 1 << 20

_LEN = struct.Struct("<I")
_REC_TAIL = struct.Struct("<ddddQ")
_CTRL_TAIL = struct.Struct("<dddB")


class RelayProtocolError(ValueError):
    """Raised on any malformed frame; the offending session is closed."""


# ------------------------------------------------------------------ messages

@dataclass(frozen=True, slots=True)
class EntityRecord:
    entity_id: str
    kind: int
    x: float
    y: float
    yaw: float
    v: float
    source_ts_us: int


@dataclass(frozen=True, slots=True)
class Join:
    role: int
    client_id: str


@dataclass(frozen=True, slots=True)
class EgoState:
    entities: tuple[EntityRecord, ...]


@dataclass(frozen=True, slots=True)
class GlobalState:
    seq: int
    server_ts_us: int
    entities: tuple[EntityRecord, ...]


@dataclass(frozen=True, slots=True)
class Ping:
    client_ts_us: int


@dataclass(frozen=True, slots=True)
class Pong:
    client_ts_us: int
    server_ts_us: int


@dataclass(frozen=True, slots=True)
class Control:
    target: str
    steer_deg: float
    accel: float
    brake_pct: float
    flags: int

    def to_command(self) -> ControlCommand:
        return ControlCommand(
            steer_deg=self.steer_deg, accel=self.accel,
            brake_pct=self.brake_pct,
            turn_left=bool(self.flags & FLAG_TURN_LEFT),
            turn_right=bool(self.flags & FLAG_TURN_RIGHT),
            brake_light=bool(self.flags & FLAG_BRAKE_LIGHT),
            engage=bool(self.flags & FLAG_ENGAGE))

    @classmethod
    def from_command(cls, target: str, cmd: ControlCommand) -> "Control":
        flags = ((FLAG_TURN_LEFT if cmd.turn_left else 0)
                 | (FLAG_TURN_RIGHT if cmd.turn_right else 0)
                 | (FLAG_BRAKE_LIGHT if cmd.brake_light else 0)
                 | (FLAG_ENGAGE if cmd.engage else 0))
        return cls(target, cmd.steer_deg, cmd.accel, cmd.brake_pct, flags)


Message = Join | EgoState | GlobalState | Ping | Pong | Control


def record_from_view(view: EntityView) -> EntityRecord:
    return EntityRecord(view.entity_id, KIND_CODES[view.kind],
                        view.pose.x, view.pose.y, view.pose.theta, view.v,
                        round(view.source_timestamp * 1e6))


def view_from_record(rec: EntityRecord) -> EntityView:
    return EntityView(rec.entity_id, KIND_NAMES[rec.kind],
                      Pose2D(rec.x, rec.y, rec.yaw), rec.v,
                      rec.source_ts_us / 1e6)


# ------------------------------------------------------------------ encoding

def _enc_id(entity_id: str) -> bytes:
    raw = entity_id.encode("utf-8")
    if not 1 <= len(raw) <= 255:
        raise RelayProtocolError(f"id length {len(raw)} out of range")
    return bytes([len(raw)]) + raw


def _enc_record(rec: EntityRecord) -> bytes:
    for value in (rec.x, rec.y, rec.yaw, rec.v):
        if not math.isfinite(value):
            raise RelayProtocolError("non-finite field in entity record")
    return (_enc_id(rec.entity_id) + bytes([rec.kind])
            + _REC_TAIL.pack(rec.x, rec.y, rec.yaw, rec.v, rec.source_ts_us))


def encode_message(msg: Message) -> bytes:
    """Serialize one message with its length prefix."""
    if isinstance(msg, Join):
        body = bytes([MSG_JOIN, msg.role]) + _enc_id(msg.client_id)
    elif isinstance(msg, EgoState):
        body = (bytes([MSG_EGO_STATE]) + struct.pack("<H", len(msg.entities))
                + b"".join(_enc_record(r) for r in msg.entities))
    elif isinstance(msg, GlobalState):
        body = (bytes([MSG_GLOBAL_STATE])
                + struct.pack("<IQH", msg.seq, msg.server_ts_us,
                              len(msg.entities))
                + b"".join(_enc_record(r) for r in msg.entities))
    elif isinstance(msg, Ping):
        body = bytes([MSG_PING]) + struct.pack("<Q", msg.client_ts_us)
    elif isinstance(msg, Pong):
        body = bytes([MSG_PONG]) + struct.pack("<QQ", msg.client_ts_us,
                                               msg.server_ts_us)
    elif isinstance(msg, Control):
        body = (bytes([MSG_CONTROL]) + _enc_id(msg.target)
                + _CTRL_TAIL.pack(msg.steer_deg, msg.accel, msg.brake_pct,
                                  msg.flags))
    else:
        raise TypeError(f"not a relay message: {type(msg).__name__}")
    return _LEN.pack(len(body)) + body


class _Cursor:
    __slots__ = ("data", "pos")

    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise RelayProtocolError("frame truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def unpack(self, st: struct.Struct):
        return st.unpack(self.take(st.size))

    def text(self) -> str:
        n = self.u8()
        if n == 0:
            raise RelayProtocolError("empty id")
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise RelayProtocolError("id is not valid utf-8") from exc

    def done(self) -> None:
        if self.pos != len(self.data):
            raise RelayProtocolError(
                f"{len(self.data) - self.pos} trailing bytes")


def _dec_record(cur: _Cursor) -> EntityRecord:
    entity_id = cur.text()
    kind = cur.u8()
    if kind not in KIND_NAMES:
        raise RelayProtocolError(f"unknown entity kind {kind}")
    x, y, yaw, v, ts = cur.unpack(_REC_TAIL)
    if not all(math.isfinite(f) for f in (x, y, yaw, v)):
        raise RelayProtocolError("non-finite field in entity record")
    return EntityRecord(entity_id, kind, x, y, yaw, v, ts)


def decode_body(body: bytes) -> Message:
    """Parse one frame body (no length prefix). Raises RelayProtocolError."""
    if not body:
        raise RelayProtocolError("empty frame")
    cur = _Cursor(body)
    kind = cur.u8()
    if kind == MSG_JOIN:
        role = cur.u8()
        if role not in (ROLE_LEADER, ROLE_USER):
            raise RelayProtocolError(f"unknown role {role}")
        msg: Message = Join(role, cur.text())
    elif kind == MSG_EGO_STATE:
        (n,) = cur.unpack(struct.Struct("<H"))
        msg = EgoState(tuple(_dec_record(cur) for _ in range(n)))
    elif kind == MSG_GLOBAL_STATE:
        seq, ts, n = cur.unpack(struct.Struct("<IQH"))
        msg = GlobalState(seq, ts, tuple(_dec_record(cur) for _ in range(n)))
    elif kind == MSG_PING:
        (ts,) = cur.unpack(struct.Struct("<Q"))
        msg = Ping(ts)
    elif kind == MSG_PONG:
        c, s = cur.unpack(struct.Struct("<QQ"))
        msg = Pong(c, s)
    elif kind == MSG_CONTROL:
        target = cur.text()
        steer, accel, brake, flags = cur.unpack(_CTRL_TAIL)
        if not all(math.isfinite(f) for f in (steer, accel, brake)):
            raise RelayProtocolError("non-finite control field")
        msg = Control(target, steer, accel, brake, flags)
    else:
        raise RelayProtocolError(f"unknown message type {kind}")
    cur.done()
    return msg


class FrameBuffer:
    """Reassembles length-prefixed frames from a byte stream."""

    def __init__(self) -> None:
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[bytes]:
        self._buf.extend(data)
        out: list[bytes] = []
        while True:
            if len(self._buf) < _LEN.size:
                return out
            (n,) = _LEN.unpack_from(self._buf)
            if n > MAX_FRAME:
                raise RelayProtocolError(f"frame of {n} bytes exceeds cap")
            if len(self._buf) < _LEN.size + n:
                return out
            out.append(bytes(self._buf[_LEN.size:_LEN.size + n]))
            del self._buf[:_LEN.size + n]


# ---------------------------------------------------------------------- core

@dataclass
class _Session:
    role: int | None = None
    client_id: str | None = None
    buffer: FrameBuffer = field(default_factory=FrameBuffer)


@dataclass
class _EntityEntry:
    record: EntityRecord
    owner: Hashable
    updated_s: float


@dataclass
class RelayOutput:
    """What an adapter must do after handing the core some input."""

    sends: list[tuple[Hashable, bytes]] = field(default_factory=list)
    closes: list[Hashable] = field(default_factory=list)
    controls: list[tuple[Hashable, Control]] = field(default_factory=list)


class RelayCore:
    """Protocol and session state for one relay instance. Sans-IO."""

    def __init__(self, staleness_s: float = 0.3) -> None:
        self.staleness_s = staleness_s
        self.sessions: dict[Hashable, _Session] = {}
        self.entities: dict[str, _EntityEntry] = {}
        self.broadcast_seq = 0
        self.counters = {"frames": 0, "malformed": 0, "ignored": 0,
                         "broadcasts": 0, "controls": 0}

    def connect(self, sid: Hashable) -> None:
        self.sessions[sid] = _Session()

    def disconnect(self, sid: Hashable) -> None:
        self.sessions.pop(sid, None)
        for eid in [e for e, entry in self.entities.items()
                    if entry.owner == sid]:
            del self.entities[eid]

    def upsert(self, owner: Hashable, records: Iterable[EntityRecord],
               now_s: float) -> None:
        for rec in records:
            self.entities[rec.entity_id] = _EntityEntry(rec, owner, now_s)

    def leader_sids(self) -> list[Hashable]:
        return [sid for sid, s in self.sessions.items()
                if s.role == ROLE_LEADER]

    def feed(self, sid: Hashable, data: bytes, now_s: float) -> RelayOutput:
        out = RelayOutput()
        session = self.sessions.get(sid)
        if session is None:
            return out
        try:
            bodies = session.buffer.feed(data)
            for body in bodies:
                self.counters["frames"] += 1
                self._handle(sid, session, decode_body(body), now_s, out)
        except RelayProtocolError as exc:
            log.warning("closing session %r: %s", sid, exc)
            self.counters["malformed"] += 1
            self.disconnect(sid)
            out.closes.append(sid)
        return out

    def _handle(self, sid: Hashable, session: _Session, msg: Message,
                now_s: float, out: RelayOutput) -> None:
        if isinstance(msg, Join):
            session.role = msg.role
            session.client_id = msg.client_id
        elif isinstance(msg, EgoState):
            self.upsert(sid, msg.entities, now_s)
        elif isinstance(msg, Ping):
            pong = Pong(msg.client_ts_us, round(now_s * 1e6))
            out.sends.append((sid, encode_message(pong)))
        elif isinstance(msg, Control):
            self.counters["controls"] += 1
            frame = encode_message(msg)
            for leader in self.leader_sids():
                out.sends.append((leader, frame))
                out.controls.append((leader, msg))
        else:
            # GlobalState and Pong originate here; a client echoing them
            # back is odd but harmless.
            self.counters["ignored"] += 1

    def broadcast(self, now_s: float) -> RelayOutput:
        """Prune stale entities and fan one GlobalState out to everyone."""
        cutoff = now_s - self.staleness_s
        for eid in [e for e, entry in self.entities.items()
                    if entry.updated_s < cutoff]:
            del self.entities[eid]
        self.broadcast_seq += 1
        records = tuple(self.entities[eid].record
                        for eid in sorted(self.entities))
        frame = encode_message(GlobalState(self.broadcast_seq,
                                           round(now_s * 1e6), records))
        self.counters["broadcasts"] += 1
        return RelayOutput(sends=[(sid, frame) for sid in self.sessions])


# ----------------------------------------------------------------- TCP layer

class RelayServer:
    """Threaded TCP front for a RelayCore."""

    def __init__(self, core: RelayCore | None = None,
                 host: str = "127.0.0.1", port: int = 0,
                 broadcast_hz: float = 20.0,
                 clock: Callable[[], float] = time.monotonic) -> None:
        self.core = core or RelayCore()
        self.broadcast_hz = broadcast_hz
        self.clock = clock
        self._lock = threading.Lock()
        self._listener = socket.create_server((host, port))
        self._socks: dict[int, socket.socket] = {}
        self._next_sid = 0
        self._running = False
        self._threads: list[threading.Thread] = []

    @property
    def address(self) -> tuple[str, int]:
        return self._listener.getsockname()

    def start(self) -> None:
        self._running = True
        for target in (self._accept_loop, self._broadcast_loop):
            t = threading.Thread(target=target, daemon=True)
            t.start()
            self._threads.append(t)

    def stop(self) -> None:
        self._running = False
        try:
            self._listener.close()
        except OSError:
            pass
        with self._lock:
            socks = list(self._socks.values())
            self._socks.clear()
        for s in socks:
            try:
                s.close()
            except OSError:
                pass
        for t in self._threads:
            t.join(timeout=2.0)

    def _apply(self, out: RelayOutput) -> None:
        for sid, frame in out.sends:
            sock = self._socks.get(sid)
            if sock is None:
                continue
            try:
                sock.sendall(frame)
            except OSError:
                self._drop(sid)
        for sid in out.closes:
            self._drop(sid)

    def _drop(self, sid: int) -> None:
        sock = self._socks.pop(sid, None)
        if sock is not None:
            try:
                sock.close()
            except OSError:
                pass
        self.core.disconnect(sid)

    def _accept_loop(self) -> None:
        while self._running:
            try:
                sock, _ = self._listener.accept()
            except OSError:
                return
            with self._lock:
                sid = self._next_sid
                self._next_sid += 1
                self._socks[sid] = sock
                self.core.connect(sid)
            t = threading.Thread(target=self._read_loop, args=(sid, sock),
                                 daemon=True)
            t.start()
            self._threads.append(t)

    def _read_loop(self, sid: int, sock: socket.socket) -> None:
        while self._running:
            try:
                data = sock.recv(65536)
            except OSError:
                data = b""
            if not data:
                with self._lock:
                    self._drop(sid)
                return
            with self._lock:
                self._apply(self.core.feed(sid, data, self.clock()))

    def _broadcast_loop(self) -> None:
        period = 1.0 / self.broadcast_hz
        while self._running:
            time.sleep(period)
            with self._lock:
                self._apply(self.core.broadcast(self.clock()))


class RelayClient:
    """Small blocking TCP client; decoded messages land on a queue."""

    def __init__(self, host: str, port: int, role: int, client_id: str
                 ) -> None:
        self.sock = socket.create_connection((host, port), timeout=5.0)
        self.messages: queue.Queue[Message] = queue.Queue()
        self._buffer = FrameBuffer()
        self.sock.sendall(encode_message(Join(role, client_id)))
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def send(self, msg: Message) -> None:
        self.sock.sendall(encode_message(msg))

    def next_message(self, timeout: float = 5.0) -> Message:
        return self.messages.get(timeout=timeout)

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass
        self._reader.join(timeout=2.0)

    def _read_loop(self) -> None:
        while True:
            try:
                data = self.sock.recv(65536)
            except OSError:
                return
            if not data:
                return
            try:
                for body in self._buffer.feed(data):
                    self.messages.put(decode_body(body))
            except RelayProtocolError:
                return
