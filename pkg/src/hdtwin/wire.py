"""Datagram formats and the latest-state mailbox for the UDP state link.

Every datagram starts with the same 8-byte header so receivers can discard
foreign traffic on a shared port by inspecting a fixed prefix:

    offset  size  field
    0       4     magic  b"HDT1"  (0x48 0x44 0x54 0x31)
    4       1     version (1)
    5       1     msg_type (1=STATE 2=COMMAND 3=PROBE 4=PROBE_ECHO)
    6       2     reserved, must be zero

All multi-byte integers and doubles are little-endian. Bodies:

    STATE (52 bytes, datagram 60):
        u64 timestamp_us, f64 x, f64 y, f64 yaw, f64 v, f64 omega, u32 seq
    COMMAND (13 bytes, datagram 21): one bus frame
        u32 can_id, u8 dlc, 8 x u8 payload
    PROBE / PROBE_ECHO (12 bytes, datagram 20):
        u64 t_send_us, u32 nonce   (echo returns the body verbatim)

Malformed input never raises on the receive path: decode returns a
``Rejection`` value carrying the reason, and the caller counts it.
"""

from __future__ import annotations

import math
import struct
import threading
from dataclasses import dataclass, field
from typing import Callable

from .kinematics import VehicleState

MAGIC = b"HDT1"
VERSION = 1

MSG_STATE = 1
MSG_COMMAND = 2
MSG_PROBE = 3
MSG_PROBE_ECHO = 4
_KNOWN_TYPES = (MSG_STATE, MSG_COMMAND, MSG_PROBE, MSG_PROBE_ECHO)

_HEADER = struct.Struct("<4sBBH")
_STATE_BODY = struct.Struct("<QdddddI")
_COMMAND_BODY = struct.Struct("<IB8s")
_PROBE_BODY = struct.Struct("<QI")

HEADER_SIZE = _HEADER.size            # 8
STATE_DATAGRAM_SIZE = HEADER_SIZE + _STATE_BODY.size      # 60
COMMAND_DATAGRAM_SIZE = HEADER_SIZE + _COMMAND_BODY.size  # 21
PROBE_DATAGRAM_SIZE = HEADER_SIZE + _PROBE_BODY.size      # 20

_BODY_SIZES = {
    MSG_STATE: _STATE_BODY.size,
    MSG_COMMAND: _COMMAND_BODY.size,
    MSG_PROBE: _PROBE_BODY.size,
    MSG_PROBE_ECHO: _PROBE_BODY.size,
}


@dataclass(frozen=True, slots=True)
class Rejection:
    """Why a datagram was not decoded. A value, not an exception."""

    reason: str  # bad_magic | bad_version | bad_type | bad_length | bad_payload
    detail: str = ""


@dataclass(frozen=True, slots=True)
class StateDatagram:
    state: VehicleState


@dataclass(frozen=True, slots=True)
class CommandDatagram:
    can_id: int
    dlc: int
    payload: bytes


@dataclass(frozen=True, slots=True)
class ProbeDatagram:
    t_send_us: int
    nonce: int
    echo: bool


Decoded = StateDatagram | CommandDatagram | ProbeDatagram


def _header(msg_type: int) -> bytes:
    return _HEADER.pack(MAGIC, VERSION, msg_type, 0)


def encode_state(state: VehicleState) -> bytes:
    """Serialize a state sample into a 60-byte STATE datagram.

    The timestamp is carried as integer microseconds; callers are expected
    to hand in microsecond-resolution timestamps so decode(encode(s)) == s.
    Non-finite fields are a caller bug and raise ValueError.
    """
    fields = (state.x, state.y, state.yaw, state.v, state.omega)
    if not all(math.isfinite(f) for f in fields) or not math.isfinite(state.timestamp):
        raise ValueError("state fields must be finite")
    ts_us = round(state.timestamp * 1e6)
    if ts_us < 0 or state.seq < 0:
        raise ValueError("timestamp and seq must be non-negative")
    return _header(MSG_STATE) + _STATE_BODY.pack(ts_us, *fields, state.seq)


def encode_command(can_id: int, payload: bytes, dlc: int | None = None) -> bytes:
    """Wrap one bus frame (id + 8-byte payload) into a COMMAND datagram."""
    if len(payload) != 8:
        raise ValueError("payload must be exactly 8 bytes")
    return _header(MSG_COMMAND) + _COMMAND_BODY.pack(
        can_id, len(payload) if dlc is None else dlc, payload)


def encode_probe(t_send_us: int, nonce: int, echo: bool = False) -> bytes:
    mt = MSG_PROBE_ECHO if echo else MSG_PROBE
    return _header(mt) + _PROBE_BODY.pack(t_send_us, nonce)


def decode_datagram(data: bytes) -> Decoded | Rejection:
    """Parse one datagram; returns a decoded value or a Rejection.

    The header is validated front to back (magic, version, type, reserved),
    then the body length, then the payload contents. Anything else on the
    wire, truncated frames included, comes back as a Rejection so receive
    loops stay crash-free under noise.
    """
    if len(data) < HEADER_SIZE:
        return Rejection("bad_length", f"shorter than header: {len(data)}")
    magic, version, msg_type, reserved = _HEADER.unpack_from(data)
    if magic != MAGIC:
        return Rejection("bad_magic")
    if version != VERSION:
        return Rejection("bad_version", str(version))
    if msg_type not in _KNOWN_TYPES:
        return Rejection("bad_type", str(msg_type))
    if reserved != 0:
        return Rejection("bad_payload", "reserved bytes set")
    body = data[HEADER_SIZE:]
    if len(body) != _BODY_SIZES[msg_type]:
        return Rejection("bad_length",
                         f"type {msg_type}: {len(data)} bytes")
    if msg_type == MSG_STATE:
        ts_us, x, y, yaw, v, omega, seq = _STATE_BODY.unpack(body)
        if not all(math.isfinite(f) for f in (x, y, yaw, v, omega)):
            return Rejection("bad_payload", "non-finite field")
        return StateDatagram(VehicleState(ts_us / 1e6, x, y, yaw, v, omega, seq))
    if msg_type == MSG_COMMAND:
        can_id, dlc, payload = _COMMAND_BODY.unpack(body)
        if dlc > 8:
            return Rejection("bad_payload", f"dlc {dlc}")
        return CommandDatagram(can_id, dlc, payload)
    ts_us, nonce = _PROBE_BODY.unpack(body)
    return ProbeDatagram(ts_us, nonce, echo=(msg_type == MSG_PROBE_ECHO))


class LatestStateStore:
    """Single-slot mailbox holding the freshest decoded state.

    update() accepts a state only if its seq is strictly newer than the one
    already held; late or duplicated packets bump dropped_count instead of
    regressing the twin. Reads take an atomic snapshot. Thread-safe: the
    receive thread writes while render threads read.

    Counters: received_count covers every successfully decoded state
    (accepted + dropped), filtered_count covers datagrams rejected before
    yielding a state.
    """

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._latest: VehicleState | None = None
        self.received_count = 0
        self.dropped_count = 0
        self.filtered_count = 0
        self.rejections: dict[str, int] = {}

    def update(self, state: VehicleState) -> bool:
        with self._lock:
            self.received_count += 1
            if self._latest is not None and state.seq <= self._latest.seq:
                self.dropped_count += 1
                return False
            self._latest = state
            return True

    def note_rejection(self, rej: Rejection) -> None:
        with self._lock:
            self.filtered_count += 1
            self.rejections[rej.reason] = self.rejections.get(rej.reason, 0) + 1

    def snapshot(self) -> VehicleState | None:
        with self._lock:
            return self._latest

    def counters(self) -> dict[str, int]:
        with self._lock:
            return {
                "received": self.received_count,
                "accepted": self.received_count - self.dropped_count,
                "dropped": self.dropped_count,
                "filtered": self.filtered_count,
            }


@dataclass
class GatewaySinks:
    """Where a receive loop routes each decoded datagram type.

    Unset sinks mean "this endpoint does not speak that type"; such
    datagrams are counted as filtered rather than crashing the loop.
    """

    store: LatestStateStore | None = None
    on_command: Callable[[CommandDatagram], None] | None = None
    on_probe: Callable[[ProbeDatagram], None] | None = None
    on_probe_echo: Callable[[ProbeDatagram], None] | None = None
    stats: LatestStateStore = field(default_factory=LatestStateStore)

    def __post_init__(self) -> None:
        if self.store is not None:
            self.stats = self.store


def dispatch_datagram(data: bytes, sinks: GatewaySinks) -> Decoded | Rejection:
    """Decode one datagram and hand it to the matching sink.

    Shared by the socket receive loop and the in-process virtual links so
    both paths exercise identical filtering.
    """
    decoded = decode_datagram(data)
    if isinstance(decoded, Rejection):
        sinks.stats.note_rejection(decoded)
        return decoded
    if isinstance(decoded, StateDatagram):
        if sinks.store is not None:
            sinks.store.update(decoded.state)
        else:
            sinks.stats.note_rejection(Rejection("bad_type", "unexpected STATE"))
    elif isinstance(decoded, CommandDatagram):
        if sinks.on_command is not None:
            sinks.on_command(decoded)
        else:
            sinks.stats.note_rejection(Rejection("bad_type", "unexpected COMMAND"))
    elif decoded.echo:
        if sinks.on_probe_echo is not None:
            sinks.on_probe_echo(decoded)
    elif sinks.on_probe is not None:
        sinks.on_probe(decoded)
    return decoded
