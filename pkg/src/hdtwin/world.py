"""The twin world: shadow vehicle, virtual traffic, and sync metrology.

Every render tick the shadow vehicle snapshots the freshest received state,
computes the prediction horizon, extrapolates along the constant-turn-rate
arc, maps the result into the sim frame, and smooths the heading. The pose a
tick produces therefore *represents* the vehicle at time
t_pkt + horizon_used, and that represented time is what the recorder matches
against the plant's noiseless truth log when scoring a run; matching at the
render timestamp instead would fold the deliberate lead margin into the
error and reward delta = 0.

Virtual vehicles are twin-world natives (no wire protocol behind them) moved
by a plain unicycle update from remotely supplied commands.
"""

from __future__ import annotations

import bisect
import logging
import math
from dataclasses import dataclass

from .can_codec import ControlCommand
from .kinematics import (
    Pose2D,
    SiteToSimTransform,
    SmootherState,
    VehicleState,
    compute_horizon,
    ctrv_extrapolate,
    ema_heading,
    site_to_sim,
    sync_error,
)
from .plant import TruthSample
from .wire import LatestStateStore

log = logging.getLogger(__name__)

KIND_SHADOW = "shadow"
KIND_VIRTUAL = "virtual"
KIND_USER = "user"


@dataclass(frozen=True, slots=True)
class WorldConfig:
    tick_hz: float = 60.0
    alpha: float = 0.3            # heading EMA weight
    delta: float = 0.0            # calibrated lead margin, seconds
    dt_max: float = 0.5           # horizon clamp, seconds
    transform: SiteToSimTransform = SiteToSimTransform()
    match_window: float = 0.010   # truth matching half-width, seconds
    collision_radius: float = 0.9 # per-vehicle disc for overlap warnings


@dataclass(frozen=True, slots=True)
class ShadowTick:
    """What one render tick produced for the shadow vehicle (sim frame)."""

    t: float             # render time
    pose: Pose2D
    v: float
    dt_used: float       # horizon after clamping
    packet_age: float    # render time minus packet timestamp
    repr_time: float     # t_pkt + dt_used: the instant this pose represents
    seq: int
    t_pkt: float         # stamp of the packet this tick extrapolated from


@dataclass(frozen=True, slots=True)
class EntityView:
    """Uplink/broadcast view of one vehicle in the world."""

    entity_id: str
    kind: str
    pose: Pose2D
    v: float
    source_timestamp: float


class ShadowVehicle:
    """Synchronized mirror of the real (plant) vehicle."""

    def __init__(self, store: LatestStateStore, config: WorldConfig) -> None:
        self.store = store
        self.config = config
        self.smoother = SmootherState(alpha=config.alpha)
        self.pose: Pose2D | None = None
        self.v = 0.0
        self.synchronized = False
        self.last_tick: ShadowTick | None = None

    def tick(self, t_now: float) -> ShadowTick | None:
        state = self.store.snapshot()
        if state is None:
            return None   # stays at spawn, flagged unsynchronized
        c = self.config
        dt = compute_horizon(t_now, state.timestamp, c.delta, c.dt_max)
        raw_site = ctrv_extrapolate(state, dt)
        raw_sim = site_to_sim(c.transform, raw_site)
        theta_hat, self.smoother = ema_heading(self.smoother, raw_sim.theta)
        self.pose = Pose2D(raw_sim.x, raw_sim.y, theta_hat)
        self.v = state.v
        self.synchronized = True
        self.last_tick = ShadowTick(
            t=t_now, pose=self.pose, v=state.v, dt_used=dt,
            packet_age=t_now - state.timestamp,
            repr_time=state.timestamp + dt, seq=state.seq,
            t_pkt=state.timestamp)
        return self.last_tick


class VirtualVehicle:
    """Sim-only traffic: a unicycle nudged by remote control commands."""

    def __init__(self, entity_id: str, pose: Pose2D, wheelbase: float = 2.5,
                 max_speed: float = 15.0) -> None:
        self.entity_id = entity_id
        self.pose = pose
        self.v = 0.0
        self.wheelbase = wheelbase
        self.max_speed = max_speed
        self.command = ControlCommand(engage=False)

    def apply(self, cmd: ControlCommand) -> None:
        self.command = cmd

    def tick(self, dt: float) -> None:
        cmd = self.command
        if not cmd.engage:
            accel = -5.0 if self.v > 0 else 0.0
        elif cmd.brake_pct > 0:
            accel = -5.0 * cmd.brake_pct / 100.0
        else:
            accel = cmd.accel
        self.v = min(max(self.v + accel * dt, 0.0), self.max_speed)
        omega = (self.v / self.wheelbase) * math.tan(math.radians(cmd.steer_deg))
        state = VehicleState(0.0, self.pose.x, self.pose.y, self.pose.theta,
                             self.v, omega, 0)
        self.pose = ctrv_extrapolate(state, dt)


class TwinWorld:
    """Owns the shadow and any virtual vehicles; ticked at render rate."""

    def __init__(self, store: LatestStateStore,
                 config: WorldConfig | None = None,
                 shadow_id: str = "shadow-0") -> None:
        self.config = config or WorldConfig()
        self.shadow_id = shadow_id
        self.shadow = ShadowVehicle(store, self.config)
        self.virtuals: dict[str, VirtualVehicle] = {}
        self.recorder = MetricsRecorder()
        self.remote: dict[str, EntityView] = {}   # mirrored from broadcasts
        self.collision_count = 0
        self._colliding: set[tuple[str, str]] = set()
        self._t_last: float | None = None

    def spawn_virtual(self, entity_id: str, pose: Pose2D) -> VirtualVehicle:
        if entity_id in self.virtuals or entity_id == self.shadow_id:
            raise ValueError(f"entity id {entity_id!r} already in world")
        vv = VirtualVehicle(entity_id, pose)
        self.virtuals[entity_id] = vv
        return vv

    def apply_remote_control(self, entity_id: str, cmd: ControlCommand) -> bool:
        vv = self.virtuals.get(entity_id)
        if vv is None:
            return False
        vv.apply(cmd)
        return True

    def tick(self, t_now: float) -> None:
        tick = self.shadow.tick(t_now)
        self.recorder.record(tick)
        dt = 0.0 if self._t_last is None else t_now - self._t_last
        self._t_last = t_now
        if dt > 0.0:
            for vv in self.virtuals.values():
                vv.tick(dt)
        self._check_overlaps()

    def entities(self, t_now: float) -> list[EntityView]:
        """Sorted, broadcast-ready view of everything this world owns."""
        out: list[EntityView] = []
        last = self.shadow.last_tick
        if self.shadow.synchronized and last is not None:
            out.append(EntityView(self.shadow_id, KIND_SHADOW,
                                  self.shadow.pose, self.shadow.v,
                                  last.t_pkt))
        for vv in self.virtuals.values():
            out.append(EntityView(vv.entity_id, KIND_VIRTUAL, vv.pose, vv.v,
                                  t_now))
        out.sort(key=lambda e: e.entity_id)
        return out

    def apply_remote_entities(self, views: list[EntityView]) -> None:
        """Mirror vehicles owned elsewhere (arrived via a world broadcast)."""
        for view in views:
            if view.entity_id == self.shadow_id or view.entity_id in self.virtuals:
                continue
            self.remote[view.entity_id] = view

    def _check_overlaps(self) -> None:
        r2 = (2.0 * self.config.collision_radius) ** 2
        poses: list[tuple[str, Pose2D]] = []
        if self.shadow.pose is not None:
            poses.append((self.shadow_id, self.shadow.pose))
        poses.extend((vv.entity_id, vv.pose) for vv in self.virtuals.values())
        for i in range(len(poses)):
            for j in range(i + 1, len(poses)):
                a, pa = poses[i]
                b, pb = poses[j]
                key = (a, b) if a < b else (b, a)
                dx, dy = pa.x - pb.x, pa.y - pb.y
                if dx * dx + dy * dy < r2:
                    if key not in self._colliding:
                        self._colliding.add(key)
                        self.collision_count += 1
                        log.warning("overlap between %s and %s", a, b)
                else:
                    self._colliding.discard(key)


# ------------------------------------------------------------------ metrology

@dataclass(frozen=True, slots=True)
class MetricsRow:
    t: float
    x_r: float
    y_r: float
    x_s: float
    y_s: float
    e_p: float
    dt_horizon: float
    packet_age: float


@dataclass
class MetricsLog:
    rows: list[MetricsRow]
    skipped_unsynchronized: int
    skipped_unmatched: int

    def summarize(self) -> dict:
        """Aggregate stats plus the per-second error samples.

        p95 is the nearest-rank 95th percentile. An empty log (never
        synchronized) is reported explicitly rather than as zeros.
        """
        if not self.rows:
            return {"count": 0, "empty": True,
                    "skipped_unsynchronized": self.skipped_unsynchronized,
                    "skipped_unmatched": self.skipped_unmatched}
        errors = sorted(r.e_p for r in self.rows)
        n = len(errors)
        rank = max(1, math.ceil(0.95 * n))
        per_second = []
        last_t = self.rows[-1].t
        row_i = 0
        for second in range(1, int(last_t) + 1):
            best = None
            while row_i < n and self.rows[row_i].t <= second:
                best = self.rows[row_i]
                row_i += 1
            nxt = self.rows[row_i] if row_i < n else None
            if best is None or (nxt is not None
                                and abs(nxt.t - second) < abs(best.t - second)):
                best = nxt
            if best is not None:
                per_second.append({"t": second, "e_p": round(best.e_p, 6)})
        return {
            "count": n,
            "skipped_unsynchronized": self.skipped_unsynchronized,
            "skipped_unmatched": self.skipped_unmatched,
            "mean": sum(errors) / n,
            "max": errors[-1],
            "p95": errors[rank - 1],
            "per_second": per_second,
        }

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("t,x_r,y_r,x_s,y_s,e_p,dt_horizon,packet_age\n")
            for r in self.rows:
                fh.write(f"{r.t:.6f},{r.x_r:.6f},{r.y_r:.6f},"
                         f"{r.x_s:.6f},{r.y_s:.6f},{r.e_p:.6f},"
                         f"{r.dt_horizon:.6f},{r.packet_age:.6f}\n")


class MetricsRecorder:
    """Collects shadow ticks during a run, scores them against truth after.

    Scoring happens offline because a tick's pose represents a slightly
    future instant (the lead margin): the matching truth sample may not have
    been generated yet when the tick happens.
    """

    def __init__(self) -> None:
        self.ticks: list[ShadowTick] = []
        self.skipped_unsynchronized = 0

    def record(self, tick: ShadowTick | None) -> None:
        if tick is None:
            self.skipped_unsynchronized += 1
        else:
            self.ticks.append(tick)

    def finalize(self, truth: list[TruthSample],
                 transform: SiteToSimTransform,
                 match_window: float = 0.010) -> MetricsLog:
        """Match each tick's represented time against the truth log.

        The nearest truth sample within match_window seconds is transformed
        with the same site-to-sim mapping the shadow used; rows with no
        match (e.g. the final lead-margin's worth of ticks) are counted and
        skipped, never scored against a wrong instant.
        """
        stamps = [s.t for s in truth]
        rows: list[MetricsRow] = []
        unmatched = 0
        for tick in self.ticks:
            i = bisect.bisect_left(stamps, tick.repr_time)
            best: TruthSample | None = None
            best_gap = match_window
            for j in (i - 1, i):
                if 0 <= j < len(truth):
                    gap = abs(stamps[j] - tick.repr_time)
                    if gap <= best_gap:
                        best_gap = gap
                        best = truth[j]
            if best is None:
                unmatched += 1
                continue
            real_sim = site_to_sim(transform, Pose2D(best.x, best.y, best.yaw))
            rows.append(MetricsRow(
                t=tick.t, x_r=real_sim.x, y_r=real_sim.y,
                x_s=tick.pose.x, y_s=tick.pose.y,
                e_p=sync_error(real_sim, tick.pose),
                dt_horizon=tick.dt_used, packet_age=tick.packet_age))
        return MetricsLog(rows, self.skipped_unsynchronized, unmatched)
