"""Bit-exact encoder/decoder between control commands and bus frames.

The vehicle's drive-by-wire interface takes five fixed 8-byte messages
(enable flag, steering, speed/accel, brake, lights). Their layout lives in a
communication-matrix file (YAML) bundled with the package; the codec is
table-driven off that file so a different vehicle only needs a new matrix.

Quantization contract: physical values are clamped to the signal's range,
then rounded half away from zero onto the raw lattice
raw = round((physical - offset) / scale). The arithmetic runs in the decimal
domain because the matrix scales are decimal fractions and exact halves such
as 0.0005 deg on a 0.001 deg/LSB lattice must round up, which binary floats
get wrong on their own.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

import yaml


class CanCodecError(ValueError):
    """Raised for frames or values the matrix cannot represent."""


@dataclass(frozen=True, slots=True)
class SignalSpec:
    """One scalar carried inside a message payload.

    start_bit is the absolute LSB-first (Intel) bit offset into the payload;
    byte-aligned 8/16-bit signals therefore occupy whole little-endian bytes.
    """

    name: str
    start_bit: int
    bits: int
    scale: float = 1.0
    offset: float = 0.0
    minimum: float | None = None
    maximum: float | None = None

    @property
    def raw_max(self) -> int:
        return (1 << self.bits) - 1

    def clamp(self, physical: float) -> float:
        lo = self.offset if self.minimum is None else self.minimum
        hi = (self.offset + self.scale * self.raw_max
              if self.maximum is None else self.maximum)
        return min(max(physical, lo), hi)

    def quantize(self, physical: float) -> int:
        """Physical value -> raw lattice point, clamped, half away from zero."""
        p = Decimal(str(self.clamp(physical)))
        ticks = (p - Decimal(str(self.offset))) / Decimal(str(self.scale))
        raw = int(ticks.quantize(Decimal(1), rounding=ROUND_HALF_UP))
        return min(max(raw, 0), self.raw_max)

    def dequantize(self, raw: int) -> float:
        if not 0 <= raw <= self.raw_max:
            raise CanCodecError(f"{self.name}: raw {raw} outside {self.bits} bits")
        return raw * self.scale + self.offset


@dataclass(frozen=True, slots=True)
class MessageSpec:
    name: str
    can_id: int
    signals: tuple[SignalSpec, ...]
    dlc: int = 8

    def __post_init__(self) -> None:
        used: set[int] = set()
        for sig in self.signals:
            span = set(range(sig.start_bit, sig.start_bit + sig.bits))
            if span & used:
                raise CanCodecError(f"{self.name}: {sig.name} overlaps another signal")
            if sig.start_bit + sig.bits > self.dlc * 8:
                raise CanCodecError(f"{self.name}: {sig.name} exceeds payload")
            used |= span

    def signal(self, name: str) -> SignalSpec:
        for sig in self.signals:
            if sig.name == name:
                return sig
        raise CanCodecError(f"{self.name} has no signal {name}")


@dataclass(frozen=True, slots=True)
class CanFrame:
    can_id: int
    payload: bytes  # always dlc bytes, unclaimed bits zero

    def __post_init__(self) -> None:
        if len(self.payload) != 8:
            raise CanCodecError("payload must be 8 bytes")


@dataclass(frozen=True)
class CommMatrix:
    messages: tuple[MessageSpec, ...]
    _by_id: dict[int, MessageSpec] = field(init=False, repr=False)
    _by_name: dict[str, MessageSpec] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_by_id", {m.can_id: m for m in self.messages})
        object.__setattr__(self, "_by_name", {m.name: m for m in self.messages})
        if len(self._by_id) != len(self.messages):
            raise CanCodecError("duplicate can_id in matrix")

    def by_id(self, can_id: int) -> MessageSpec:
        try:
            return self._by_id[can_id]
        except KeyError:
            raise CanCodecError(f"unknown can_id 0x{can_id:X}") from None

    def by_name(self, name: str) -> MessageSpec:
        try:
            return self._by_name[name]
        except KeyError:
            raise CanCodecError(f"unknown message {name}") from None


def _set_bits(payload: bytearray, start_bit: int, bits: int, raw: int) -> None:
    for i in range(bits):
        if (raw >> i) & 1:
            pos = start_bit + i
            payload[pos // 8] |= 1 << (pos % 8)


def _get_bits(payload: bytes, start_bit: int, bits: int) -> int:
    raw = 0
    for i in range(bits):
        pos = start_bit + i
        raw |= ((payload[pos // 8] >> (pos % 8)) & 1) << i
    return raw


def pack_message(matrix: CommMatrix, name: str,
                 values: dict[str, float]) -> CanFrame:
    """Build one frame from physical signal values; unclaimed bits are zero."""
    spec = matrix.by_name(name)
    payload = bytearray(spec.dlc)
    for sig_name, value in values.items():
        sig = spec.signal(sig_name)
        _set_bits(payload, sig.start_bit, sig.bits, sig.quantize(value))
    return CanFrame(spec.can_id, bytes(payload))


def decode_frame(matrix: CommMatrix, frame: CanFrame) -> dict[str, float]:
    """Frame -> {signal name: physical value}; unknown ids raise."""
    spec = matrix.by_id(frame.can_id)
    if len(frame.payload) != spec.dlc:
        raise CanCodecError(
            f"{spec.name}: payload {len(frame.payload)} != dlc {spec.dlc}")
    return {sig.name: sig.dequantize(_get_bits(frame.payload, sig.start_bit,
                                               sig.bits))
            for sig in spec.signals}


@dataclass(frozen=True, slots=True)
class ControlCommand:
    """Driver-side intent, physical units; the codec turns this into frames."""

    steer_deg: float = 0.0
    accel: float = 0.0       # m/s^2, negative values are engine braking
    brake_pct: float = 0.0   # 0..100, overrides accel at the vehicle
    turn_left: bool = False
    turn_right: bool = False
    brake_light: bool = False
    engage: bool = True


def encode_command(cmd: ControlCommand,
                   matrix: "CommMatrix | None" = None) -> list[CanFrame]:
    """Expand one command into the full five-message set, fixed order.

    Every encode emits all five frames (flag, steer, speed, brake, lights) so
    the vehicle's mailbox always holds a consistent snapshot; validity bytes
    are always 1 and the gear/work-mode constants are the drive defaults.
    """
    m = matrix or default_matrix()
    return [
        pack_message(m, "IECU_Flag", {"IECU_Flag": 1.0 if cmd.engage else 0.0}),
        pack_message(m, "IECU_Steer", {"Steer_Valid": 1.0,
                                       "Steer_AngleCmd": cmd.steer_deg}),
        pack_message(m, "IECU_Speed", {"Speed_Valid": 1.0, "WorkMode": 1.0,
                                       "Gear": 1.0, "AccelCmd": cmd.accel}),
        pack_message(m, "IECU_Brake", {"Brake_Valid": 1.0,
                                       "BrakeCmd": cmd.brake_pct}),
        pack_message(m, "Light_Flag", {"TurnLeft": float(cmd.turn_left),
                                       "TurnRight": float(cmd.turn_right),
                                       "BrakeLight": float(cmd.brake_light)}),
    ]


def reencode_frame(matrix: CommMatrix, frame: CanFrame) -> CanFrame:
    """decode -> encode roundtrip of a single frame (used to prove bit-exactness)."""
    spec = matrix.by_id(frame.can_id)
    return pack_message(matrix, spec.name, decode_frame(matrix, frame))


def load_matrix(path: str | Path) -> CommMatrix:
    """Read a communication matrix from a YAML file."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    return _matrix_from_doc(doc, str(path))


def _matrix_from_doc(doc: dict, origin: str) -> CommMatrix:
    try:
        messages = []
        for mdoc in doc["messages"]:
            signals = tuple(
                SignalSpec(
                    name=s["name"],
                    start_bit=int(s["start_bit"]),
                    bits=int(s["bits"]),
                    scale=float(s.get("scale", 1)),
                    offset=float(s.get("offset", 0)),
                    minimum=None if "min" not in s else float(s["min"]),
                    maximum=None if "max" not in s else float(s["max"]),
                )
                for s in mdoc["signals"])
            messages.append(MessageSpec(name=mdoc["name"],
                                        can_id=int(mdoc["can_id"]),
                                        signals=signals,
                                        dlc=int(mdoc.get("dlc", 8))))
    except (KeyError, TypeError) as exc:
        raise CanCodecError(f"malformed matrix file {origin}: {exc}") from exc
    return CommMatrix(tuple(messages))


_DEFAULT: CommMatrix | None = None


def default_matrix() -> CommMatrix:
    """The bundled drive-by-wire matrix (parsed once, cached)."""
    global _DEFAULT
    if _DEFAULT is None:
        ref = importlib.resources.files("hdtwin.data") / "comm_matrix.yaml"
        doc = yaml.safe_load(ref.read_text(encoding="utf-8"))
        _DEFAULT = _matrix_from_doc(doc, "bundled comm_matrix.yaml")
    return _DEFAULT
