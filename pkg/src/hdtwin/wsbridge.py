"""WebSocket JSON mirror for browser cockpits.

The relay's native protocol is length-prefixed binary, which browsers
cannot speak comfortably; cockpits get a JSON text channel instead.
Downstream, each broadcast becomes one ``{"type": "global_state", ...}``
message. Upstream, ``{"type": "control", ...}`` messages are converted to
:class:`~hdtwin.can_codec.ControlCommand` and handed to whatever command
sink the host wired in. A tiny ``ping``/``pong`` exchange lets the cockpit
estimate its own link latency.

Schema policy mirrors the binary relay: a message that does not parse, or
that violates the schema, closes that client's connection (code 1002);
well-formed messages of unknown type are counted and ignored so a newer
cockpit can keep talking to an older bridge.
"""

from __future__ import annotations

import json
import math
import threading
import time
from typing import Callable, Iterable

from websockets.sync.server import serve

from .can_codec import ControlCommand
from .world import EntityView

_NUMBER_FIELDS = ("steer_deg", "accel", "brake")
_FLAG_FIELDS = ("turn_left", "turn_right", "engage")


class SchemaError(ValueError):
    """A client message that no conforming cockpit would send."""


def control_from_json(doc: dict) -> tuple[str, ControlCommand]:
    """Validate a control message and build the command it describes.

    The brake-light flag is not part of the cockpit schema; it follows the
    brake value the way a real pedal switch would.
    """
    target = doc.get("target")
    if not isinstance(target, str) or not target:
        raise SchemaError("control target must be a non-empty string")
    numbers = {}
    for key in _NUMBER_FIELDS:
        value = doc.get(key, 0.0)
        if isinstance(value, bool) or not isinstance(value, (int, float)) \
                or not math.isfinite(value):
            raise SchemaError(f"control field {key!r} must be a finite number")
        numbers[key] = float(value)
    flags = {}
    for key in _FLAG_FIELDS:
        value = doc.get(key, False)
        if not isinstance(value, bool):
            raise SchemaError(f"control flag {key!r} must be a boolean")
        flags[key] = value
    cmd = ControlCommand(steer_deg=numbers["steer_deg"],
                         accel=numbers["accel"],
                         brake_pct=numbers["brake"],
                         turn_left=flags["turn_left"],
                         turn_right=flags["turn_right"],
                         brake_light=numbers["brake"] > 0.0,
                         engage=flags["engage"])
    return target, cmd


def global_state_json(seq: int, views: Iterable[EntityView]) -> str:
    vehicles = [{"id": v.entity_id, "kind": v.kind, "x": v.pose.x,
                 "y": v.pose.y, "yaw": v.pose.theta, "v": v.v}
                for v in views]
    return json.dumps({"type": "global_state", "seq": seq,
                       "vehicles": vehicles}, separators=(",", ":"))


class WsBridge:
    """Threaded WebSocket server; ``publish`` may be called from any thread.

    ``on_control`` runs on a client's receive thread, so the host must hand
    the command off to its own execution context (the harness schedules an
    event; see serve).
    """

    def __init__(self, on_control: Callable[[str, ControlCommand], None],
                 host: str = "127.0.0.1", port: int = 0) -> None:
        self.on_control = on_control
        self._server = serve(self._session, host, port)
        self._thread = threading.Thread(target=self._server.serve_forever,
                                        daemon=True, name="hdtwin-ws")
        self._clients: set = set()
        self._lock = threading.Lock()
        self.counters = {"connected": 0, "controls": 0, "ignored": 0,
                         "closed_bad": 0, "published": 0}

    @property
    def address(self) -> tuple[str, int]:
        host, port = self._server.socket.getsockname()[:2]
        return host, port

    def start(self) -> "WsBridge":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._thread.join(timeout=5.0)

    def client_count(self) -> int:
        with self._lock:
            return len(self._clients)

    def publish(self, seq: int, views: Iterable[EntityView]) -> None:
        text = global_state_json(seq, views)
        with self._lock:
            clients = list(self._clients)
            self.counters["published"] += 1
        for conn in clients:
            try:
                conn.send(text)
            except Exception:
                pass  # connection is going away; its session loop cleans up

    # ------------------------------------------------------- client sessions

    def _session(self, conn) -> None:
        with self._lock:
            self._clients.add(conn)
            self.counters["connected"] += 1
        try:
            for message in conn:
                if isinstance(message, bytes):
                    raise SchemaError("binary frames are not in the schema")
                self._handle_text(conn, message)
        except SchemaError as err:
            with self._lock:
                self.counters["closed_bad"] += 1
            conn.close(1002, str(err)[:120])
        finally:
            with self._lock:
                self._clients.discard(conn)

    def _handle_text(self, conn, text: str) -> None:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as err:
            raise SchemaError(f"not JSON: {err.msg}") from err
        if not isinstance(doc, dict):
            raise SchemaError("messages must be JSON objects")
        kind = doc.get("type")
        if kind == "control":
            target, cmd = control_from_json(doc)
            with self._lock:
                self.counters["controls"] += 1
            self.on_control(target, cmd)
        elif kind == "ping":
            conn.send(json.dumps({"type": "pong", "ts": doc.get("ts"),
                                  "server_ts_ms": time.time() * 1e3}))
        else:
            with self._lock:
                self.counters["ignored"] += 1
