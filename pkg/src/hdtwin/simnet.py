"""Deterministic event scheduling and impaired virtual links.

Scenarios run on a single event scheduler so that a seed fully determines
the interleaving: timer ticks land on exact k/hz grid points, link
deliveries are scheduled from seeded RNG streams, and ties are broken by
insertion order. The same scenario can then be replayed against the wall
clock (for the interactive serve mode) without touching any scenario code.
"""

from __future__ import annotations

import heapq
import math
import threading
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np


class EventScheduler:
    """Min-heap event loop over simulated seconds.

    Thread-safe for scheduling: background threads (e.g. a websocket
    bridge) may call_at while run_realtime is pacing the loop.
    """

    def __init__(self, t0: float = 0.0) -> None:
        self.now = t0
        self._heap: list[tuple[float, int, int, Callable, tuple]] = []
        self._seq = 0
        self._lock = threading.Lock()
        self._stopped = False

    def call_at(self, t: float, fn: Callable, *args,
                priority: int = 1) -> None:
        """Schedule fn(*args) at simulated time t.

        Events at equal times run by ascending priority, then insertion
        order. Tier 0 is reserved for state advancement (the plant), so a
        sampler scheduled for the same instant always sees fresh state.
        """
        with self._lock:
            heapq.heappush(self._heap, (t, priority, self._seq, fn, args))
            self._seq += 1

    def call_later(self, delay: float, fn: Callable, *args) -> None:
        self.call_at(self.now + delay, fn, *args)

    def call_every(self, hz: float, fn: Callable[[float], None],
                   t0: float = 0.0, first_k: int = 1,
                   priority: int = 1) -> None:
        """Run fn(now) at t0 + k/hz for k = first_k, first_k+1, ...

        Each slot is computed from the integer index, not accumulated, so
        a long run cannot drift off the grid.
        """
        if hz <= 0:
            raise ValueError("rate must be positive")

        def step(k: int) -> None:
            fn(self.now)
            self.call_at(t0 + (k + 1) / hz, step, k + 1, priority=priority)

        self.call_at(t0 + first_k / hz, step, first_k, priority=priority)

    def stop(self) -> None:
        self._stopped = True

    def _pop_due(self, t_end: float | None):
        with self._lock:
            if not self._heap:
                return None
            if t_end is not None and self._heap[0][0] > t_end:
                return None
            return heapq.heappop(self._heap)

    def run_until(self, t_end: float) -> None:
        """Drain events up to and including t_end as fast as possible."""
        self._stopped = False
        while not self._stopped:
            item = self._pop_due(t_end)
            if item is None:
                break
            t, _, _, fn, args = item
            self.now = max(self.now, t)
            fn(*args)
        if not self._stopped:
            self.now = max(self.now, t_end)

    def run_realtime(self, t_end: float | None = None,
                     speed: float = 1.0) -> None:
        """Drain events paced against the wall clock (speed 1.0 = live)."""
        self._stopped = False
        anchor_wall = time.monotonic()
        anchor_sim = self.now
        while not self._stopped:
            with self._lock:
                head = self._heap[0][0] if self._heap else None
            if head is None or (t_end is not None and head > t_end):
                if t_end is None:
                    time.sleep(0.02)   # serve mode: wait for injected events
                    continue
                break
            wall_due = anchor_wall + (head - anchor_sim) / speed
            wait = wall_due - time.monotonic()
            if wait > 0:
                time.sleep(min(wait, 0.02))
                continue   # re-check: stop() or an earlier injected event
            item = self._pop_due(t_end)
            if item is None:
                continue
            t, _, _, fn, args = item
            self.now = max(self.now, t)
            fn(*args)
        if t_end is not None and not self._stopped:
            self.now = max(self.now, t_end)


@dataclass(frozen=True, slots=True)
class LinkProfile:
    """One direction of an impaired network path."""

    delay_s: float = 0.0
    jitter_s: float = 0.0    # uniform on [-jitter_s, +jitter_s]
    loss: float = 0.0        # independent drop probability per packet
    keep_order: bool = False # reliable-transport style FIFO delivery

    def __post_init__(self) -> None:
        if self.delay_s < 0 or self.jitter_s < 0:
            raise ValueError("delay and jitter must be non-negative")
        if not 0.0 <= self.loss <= 1.0:
            raise ValueError("loss must be a probability")


class ImpairedLink:
    """Delivers payloads through loss, delay and jitter on a scheduler."""

    def __init__(self, sched: EventScheduler, profile: LinkProfile,
                 deliver: Callable, rng: np.random.Generator) -> None:
        self.sched = sched
        self.profile = profile
        self.deliver = deliver
        self.rng = rng
        self.sent = 0
        self.dropped = 0
        self._last_due = -math.inf

    def send(self, *payload) -> None:
        self.sent += 1
        p = self.profile
        if p.loss > 0.0 and self.rng.random() < p.loss:
            self.dropped += 1
            return
        lag = p.delay_s
        if p.jitter_s > 0.0:
            lag += self.rng.uniform(-p.jitter_s, p.jitter_s)
        due = self.sched.now + max(lag, 0.0)
        if p.keep_order and due < self._last_due:
            due = self._last_due
        self._last_due = due
        self.sched.call_at(due, self.deliver, *payload)


def spawn_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """Independent, reproducible RNG streams for the parts of a scenario."""
    return [np.random.default_rng(s)
            for s in np.random.SeedSequence(seed).spawn(n)]


def random_garbage(rng: np.random.Generator) -> bytes:
    """A junk datagram; sometimes wears a plausible-looking prefix."""
    n = int(rng.integers(0, 120))
    body = rng.bytes(n)
    if rng.random() < 0.3:
        body = b"HDT1" + body
    return body


def schedule_noise(sched: EventScheduler, rate_hz: float, t_end: float,
                   rng: np.random.Generator, deliver: Callable[[bytes], None]
                   ) -> int:
    """Sprinkle junk datagrams over [0, t_end); returns how many."""
    count = int(round(rate_hz * t_end))
    times = np.sort(rng.uniform(0.0, t_end, size=count))
    for t in times:
        sched.call_at(float(t), deliver, random_garbage(rng))
    return count


def simulate_probe_rtts(profile: LinkProfile, count: int = 20,
                        spacing_s: float = 0.05,
                        rng: np.random.Generator | None = None,
                        ) -> list[float]:
    """Round-trip times of echo probes over a symmetric impaired path.

    Runs in its own throwaway scheduler so calibration cannot disturb a
    scenario's RNG streams or event ordering.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    sched = EventScheduler()
    sent_at: dict[int, float] = {}
    rtts: list[float] = []

    def on_echo(nonce: int) -> None:
        rtts.append(sched.now - sent_at.pop(nonce))

    up = ImpairedLink(sched, profile, on_echo, rng)
    down = ImpairedLink(sched, profile, lambda n: up.send(n), rng)

    def fire(nonce: int) -> None:
        sent_at[nonce] = sched.now
        down.send(nonce)

    for k in range(count):
        sched.call_at(k * spacing_s, fire, k)
    sched.run_until(count * spacing_s + 10.0 * (profile.delay_s
                                                + profile.jitter_s) + 1.0)
    return rtts
