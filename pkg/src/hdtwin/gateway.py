"""UDP transport loops and link probing.

The codec and filtering live in :mod:`hdtwin.wire`; this module owns the
sockets. A receiver thread feeds every datagram through the same dispatch
used by the in-process harness links, so socket deployments and simulated
runs share one filtering path.
"""

from __future__ import annotations

import socket
import statistics
import threading
import time
from dataclasses import dataclass

from . import wire
from .kinematics import VehicleState

_BUFSIZE = 2048


class UdpReceiver:
    """Background receive loop bound to a UDP port.

    Decodes each datagram via wire.dispatch_datagram into the given sinks.
    stop() closes the socket, which unblocks the thread.
    """

    def __init__(self, sinks: wire.GatewaySinks, host: str = "127.0.0.1",
                 port: int = 0) -> None:
        self.sinks = sinks
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.bind((host, port))
        self._thread = threading.Thread(target=self._run, daemon=True,
                                        name="hdtwin-udp-recv")
        self._running = False

    @property
    def address(self) -> tuple[str, int]:
        return self._sock.getsockname()

    def start(self) -> "UdpReceiver":
        self._running = True
        self._thread.start()
        return self

    def _run(self) -> None:
        while self._running:
            try:
                data, _addr = self._sock.recvfrom(_BUFSIZE)
            except OSError:
                break
            wire.dispatch_datagram(data, self.sinks)

    def stop(self) -> None:
        self._running = False
        try:
            self._sock.close()
        except OSError:
            pass
        if self._thread.is_alive():
            self._thread.join(timeout=2.0)


class UdpStateSender:
    """Stamps nothing, owns no clock: serializes and sends states as given."""

    def __init__(self, peer: tuple[str, int]) -> None:
        self.peer = peer
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sent_count = 0

    def send_state(self, state: VehicleState) -> None:
        self._sock.sendto(wire.encode_state(state), self.peer)
        self.sent_count += 1

    def send_raw(self, datagram: bytes) -> None:
        self._sock.sendto(datagram, self.peer)
        self.sent_count += 1

    def close(self) -> None:
        self._sock.close()


class UdpEchoResponder:
    """Answers PROBE datagrams with PROBE_ECHO, optionally after a fixed delay.

    The delay models a symmetric impaired link end to end (the prober cannot
    tell which direction carried the delay), which is how injected-latency
    tests exercise the estimator.
    """

    def __init__(self, host: str = "127.0.0.1", port: int = 0,
                 delay_s: float = 0.0) -> None:
        self.delay_s = delay_s
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.bind((host, port))
        self._thread = threading.Thread(target=self._run, daemon=True,
                                        name="hdtwin-echo")
        self._running = False
        self.answered = 0

    @property
    def address(self) -> tuple[str, int]:
        return self._sock.getsockname()

    def start(self) -> "UdpEchoResponder":
        self._running = True
        self._thread.start()
        return self

    def _run(self) -> None:
        while self._running:
            try:
                data, addr = self._sock.recvfrom(_BUFSIZE)
            except OSError:
                break
            decoded = wire.decode_datagram(data)
            if not isinstance(decoded, wire.ProbeDatagram) or decoded.echo:
                continue
            reply = wire.encode_probe(decoded.t_send_us, decoded.nonce, echo=True)
            self.answered += 1
            if self.delay_s > 0.0:
                timer = threading.Timer(
                    self.delay_s,
                    lambda r=reply, a=addr: self._safe_send(r, a))
                timer.daemon = True
                timer.start()
            else:
                self._safe_send(reply, addr)

    def _safe_send(self, data: bytes, addr: tuple[str, int]) -> None:
        try:
            self._sock.sendto(data, addr)
        except OSError:
            pass

    def stop(self) -> None:
        self._running = False
        try:
            self._sock.close()
        except OSError:
            pass
        if self._thread.is_alive():
            self._thread.join(timeout=2.0)


@dataclass(frozen=True, slots=True)
class ProbeResult:
    """Outcome of a probe burst over one link."""

    sent: int
    received: int
    rtts_s: tuple[float, ...]
    one_way_s: float  # median RTT / 2; NaN when nothing came back

    @property
    def loss_fraction(self) -> float:
        return 1.0 - self.received / self.sent if self.sent else 0.0


def probe_link(peer: tuple[str, int], count: int = 20,
               spacing_s: float = 0.05, timeout_s: float = 1.0) -> ProbeResult:
    """Estimate one-way latency to a probe responder.

    Sends `count` PROBE datagrams, pairs echoes by nonce, and reports the
    median round trip halved. Unanswered probes time out individually and
    only reduce the sample, never fail the call.
    """
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    rtts: list[float] = []
    try:
        for nonce in range(count):
            t0 = time.monotonic()
            sock.sendto(wire.encode_probe(int(t0 * 1e6), nonce), peer)
            deadline = t0 + timeout_s
            while True:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    break
                sock.settimeout(remaining)
                try:
                    data, _ = sock.recvfrom(_BUFSIZE)
                except socket.timeout:
                    break
                except OSError:
                    return _probe_result(count, rtts)
                decoded = wire.decode_datagram(data)
                if (isinstance(decoded, wire.ProbeDatagram) and decoded.echo
                        and decoded.nonce == nonce):
                    rtts.append(time.monotonic() - t0)
                    break
            rest = spacing_s - (time.monotonic() - t0)
            if rest > 0 and nonce + 1 < count:
                time.sleep(rest)
    finally:
        sock.close()
    return _probe_result(count, rtts)


def _probe_result(sent: int, rtts: list[float]) -> ProbeResult:
    one_way = statistics.median(rtts) / 2.0 if rtts else float("nan")
    return ProbeResult(sent, len(rtts), tuple(rtts), one_way)
