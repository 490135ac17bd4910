"""Relay-backed architectures and the latency comparison between them.

Two compositions share the vehicle loop:

* cloud-edge: the twin world runs beside the gateway; the leader uplinks
  its freshly extrapolated world to the relay each time a new state packet
  has been consumed, and the relay fans merged broadcasts back out.
* cloud-centric: no edge world at all; raw state packets are forwarded to
  the cloud, which snapshots the latest one at a slow cadence, spends some
  processing time on it, and publishes the result as-is.

Remote users are scripted: they uplink a drifting ego, ping once a second,
hash every broadcast they receive, and timestamp the first sighting of
each shadow update to measure stamp-to-application latency.
"""

from __future__ import annotations

import dataclasses
import hashlib
import statistics
import time

from . import wire
from .harness import (
    RNG_LEADER_DOWN,
    RNG_LEADER_UP,
    RNG_PROCESSING,
    RNG_USER_BASE,
    RunResult,
    ScenarioConfig,
    VehicleLoop,
    calibrate_delta,
)
from .kinematics import Pose2D
from .relay import (
    KIND_CODES,
    ROLE_LEADER,
    ROLE_USER,
    Control,
    EgoState,
    EntityRecord,
    FrameBuffer,
    GlobalState,
    Join,
    Ping,
    Pong,
    RelayCore,
    decode_body,
    encode_message,
    record_from_view,
    view_from_record,
)
from .simnet import EventScheduler, ImpairedLink, spawn_rngs
from .world import TwinWorld

SHADOW_KIND = KIND_CODES["shadow"]


class SimUser:
    """A scripted remote participant with its own measurement notebook."""

    def __init__(self, name: str, spawn_y: float,
                 sched: EventScheduler) -> None:
        self.name = name
        self.spawn_y = spawn_y
        self.sched = sched
        self.alive = True
        self.up: ImpairedLink | None = None
        self.buffer = FrameBuffer()
        self.hashes: dict[int, str] = {}
        self.latency_s: list[float] = []
        self.ping_up_ms: list[float] = []
        self.ping_down_ms: list[float] = []
        self._last_src_us = -1

    def on_data(self, data: bytes) -> None:
        if not self.alive:
            return
        for body in self.buffer.feed(data):
            msg = decode_body(body)
            if isinstance(msg, GlobalState):
                self.hashes[msg.seq] = hashlib.sha256(body).hexdigest()
                for rec in msg.entities:
                    if (rec.kind == SHADOW_KIND
                            and rec.source_ts_us > self._last_src_us):
                        self._last_src_us = rec.source_ts_us
                        self.latency_s.append(
                            self.sched.now - rec.source_ts_us / 1e6)
            elif isinstance(msg, Pong):
                self.ping_down_ms.append(
                    (self.sched.now - msg.server_ts_us / 1e6) * 1e3)
                self.ping_up_ms.append(
                    (msg.server_ts_us - msg.client_ts_us) / 1e3)

    def ego_record(self, t: float) -> EntityRecord:
        return EntityRecord(self.name, KIND_CODES["user"],
                            2.0 + 1.0 * t, self.spawn_y, 0.0, 1.0,
                            round(t * 1e6))


class _RelayFabric:
    """RelayCore plus the impaired links that stand in for its network."""

    def __init__(self, config: ScenarioConfig, sched: EventScheduler) -> None:
        self.config = config
        self.sched = sched
        self.core = RelayCore(staleness_s=config.staleness_s)
        self.links_to: dict[str, ImpairedLink] = {}

    def route(self, out) -> None:
        for sid, frame in out.sends:
            link = self.links_to.get(sid)
            if link is not None:
                link.send(frame)
        for sid in out.closes:
            self.links_to.pop(sid, None)

    def attach(self, sid: str, hop_ms: float, on_down: callable,
               rng_up, rng_down) -> ImpairedLink:
        """Register a session reachable over a symmetric hop; returns the
        uplink the client should send on."""
        profile = self.config.relay_profile(hop_ms)
        up = ImpairedLink(self.sched, profile,
                          lambda data, s=sid: self.route(
                              self.core.feed(s, data, self.sched.now)),
                          rng_up)
        self.links_to[sid] = ImpairedLink(self.sched, profile, on_down,
                                          rng_down)
        self.core.connect(sid)
        return up

    def start_broadcasts(self) -> None:
        self.sched.call_every(self.config.relay_broadcast_hz,
                              lambda t: self.route(self.core.broadcast(t)))

    def drop(self, sid: str) -> None:
        self.core.disconnect(sid)
        self.links_to.pop(sid, None)


def _spawn_users(config: ScenarioConfig, sched: EventScheduler,
                 fabric: _RelayFabric, rngs: list) -> list[SimUser]:
    users = []
    for i in range(config.users):
        user = SimUser(f"user-{i + 1}", spawn_y=-5.0 * (i + 1), sched=sched)
        user.up = fabric.attach(user.name, config.hop_relay_user_ms,
                                user.on_data,
                                rngs[RNG_USER_BASE + 2 * i],
                                rngs[RNG_USER_BASE + 2 * i + 1])
        user.up.send(encode_message(Join(ROLE_USER, user.name)))

        def ego_tick(t: float, u: SimUser = user) -> None:
            if u.alive:
                u.up.send(encode_message(EgoState((u.ego_record(t),))))

        def ping_tick(t: float, u: SimUser = user) -> None:
            if u.alive:
                u.up.send(encode_message(Ping(round(t * 1e6))))

        sched.call_every(config.user_hz, ego_tick)
        sched.call_every(1.0, ping_tick)
        users.append(user)
    return users


def _mean_ms(values: list[float]) -> float | None:
    return round(statistics.fmean(values), 3) if values else None


def _user_results(users: list[SimUser]) -> tuple[dict, dict]:
    hashes = {u.name: u.hashes for u in users}
    latency = {u.name: u.latency_s for u in users}
    return hashes, latency


def run_cloud_edge(config: ScenarioConfig,
                   disconnect_user: int | None = None,
                   disconnect_at_s: float | None = None) -> RunResult:
    """Edge-hosted twin uplinked through the relay to remote users."""
    t0 = time.perf_counter()
    delta = calibrate_delta(config)
    rngs = spawn_rngs(config.seed, RNG_USER_BASE + 2 * config.users)
    sched = EventScheduler()
    loop = VehicleLoop(config, sched, rngs)
    world = TwinWorld(loop.store, config.world_config(delta))
    for i in range(config.npcs):
        world.spawn_virtual(f"npc-{i + 1}", Pose2D(10.0 + 5.0 * i, 10.0, 0.0))

    fabric = _RelayFabric(config, sched)
    leader_buffer = FrameBuffer()
    leader_ping_up: list[float] = []
    leader_ping_down: list[float] = []

    def leader_on_data(data: bytes) -> None:
        for body in leader_buffer.feed(data):
            msg = decode_body(body)
            if isinstance(msg, GlobalState):
                world.apply_remote_entities(
                    [view_from_record(r) for r in msg.entities])
            elif isinstance(msg, Control):
                cmd = msg.to_command()
                if msg.target == world.shadow_id:
                    loop.command_from_remote(cmd)
                else:
                    world.apply_remote_control(msg.target, cmd)
            elif isinstance(msg, Pong):
                leader_ping_down.append(
                    (sched.now - msg.server_ts_us / 1e6) * 1e3)
                leader_ping_up.append(
                    (msg.server_ts_us - msg.client_ts_us) / 1e3)

    leader_up = fabric.attach("leader", config.hop_edge_relay_ms,
                              leader_on_data, rngs[RNG_LEADER_UP],
                              rngs[RNG_LEADER_DOWN])
    leader_up.send(encode_message(Join(ROLE_LEADER, "leader-0")))
    sched.call_every(1.0, lambda t: leader_up.send(
        encode_message(Ping(round(t * 1e6)))))

    last_uplinked = [-1]

    def tick_world(t: float) -> None:
        world.tick(t)
        tick = world.shadow.last_tick
        if tick is not None and tick.seq != last_uplinked[0]:
            # a fresh state packet has been folded in: uplink this epoch
            last_uplinked[0] = tick.seq
            records = tuple(record_from_view(v) for v in world.entities(t))
            leader_up.send(encode_message(EgoState(records)))

    sched.call_every(config.tick_hz, tick_world)
    users = _spawn_users(config, sched, fabric, rngs)
    fabric.start_broadcasts()

    if disconnect_user is not None and disconnect_at_s is not None:
        def cut() -> None:
            user = users[disconnect_user]
            user.alive = False
            fabric.drop(user.name)

        sched.call_at(disconnect_at_s, cut)

    sched.run_until(config.duration_s)
    log = world.recorder.finalize(loop.plant.truth, config.transform(),
                                  world.config.match_window)
    hashes, latency = _user_results(users)
    all_samples = [s for u in users for s in u.latency_s]
    hop_stats = {
        "architecture": config.architecture,
        "hop_vehicle_edge_ms": round(
            (delta - 0.5 / config.packet_hz) * 1e3, 3),
        "hop_edge_relay_up_ms": _mean_ms(leader_ping_up),
        "hop_edge_relay_down_ms": _mean_ms(leader_ping_down),
        "hop_relay_user_up_ms": _mean_ms(
            [v for u in users for v in u.ping_up_ms]),
        "hop_relay_user_down_ms": _mean_ms(
            [v for u in users for v in u.ping_down_ms]),
        "total_stamp_to_user_ms": _mean_ms([s * 1e3 for s in all_samples]),
    }
    return RunResult(config=config, delta_s=delta, log=log,
                     counters=loop.link_counters()
                     | {"relay": dict(fabric.core.counters)},
                     wall_s=time.perf_counter() - t0,
                     user_hashes=hashes, user_latency_s=latency,
                     hop_stats=hop_stats)


def run_cloud_centric(config: ScenarioConfig) -> RunResult:
    """Baseline with the mirror hosted at the relay itself.

    State packets travel vehicle -> ingest -> cloud; the cloud samples the
    freshest one at snapshot cadence, spends a drawn processing time, and
    publishes the raw pose (no forward prediction) into the broadcast set.
    """
    t0 = time.perf_counter()
    delta = calibrate_delta(config)
    rngs = spawn_rngs(config.seed, RNG_USER_BASE + 2 * config.users)
    sched = EventScheduler()

    fabric = _RelayFabric(config, sched)
    cloud_store = wire.LatestStateStore()
    cloud_sinks = wire.GatewaySinks(store=cloud_store)
    vehicle_to_cloud_ms: list[float] = []
    ingest_transit_ms: list[float] = []

    def cloud_ingest(data: bytes, t_edge: float) -> None:
        decoded = wire.dispatch_datagram(data, cloud_sinks)
        if isinstance(decoded, wire.StateDatagram):
            vehicle_to_cloud_ms.append(
                (sched.now - decoded.state.timestamp) * 1e3)
            ingest_transit_ms.append((sched.now - t_edge) * 1e3)

    ingest_link = ImpairedLink(sched,
                               config.relay_profile(config.hop_edge_relay_ms),
                               cloud_ingest, rngs[RNG_LEADER_UP])
    loop = VehicleLoop(config, sched, rngs,
                       state_tap=lambda data: ingest_link.send(data,
                                                               sched.now))

    proc_rng = rngs[RNG_PROCESSING]

    def publish(snap) -> None:
        rec = EntityRecord("shadow-0", SHADOW_KIND, snap.x, snap.y,
                           snap.yaw, snap.v, round(snap.timestamp * 1e6))
        fabric.core.upsert("cloud", (rec,), sched.now)

    def snapshot_tick(_t: float) -> None:
        snap = cloud_store.snapshot()
        if snap is None:
            return
        lag_s = float(proc_rng.uniform(config.processing_min_ms,
                                       config.processing_max_ms)) / 1e3
        sched.call_later(lag_s, publish, snap)

    sched.call_every(config.snapshot_hz, snapshot_tick)
    users = _spawn_users(config, sched, fabric, rngs)
    fabric.start_broadcasts()
    sched.run_until(config.duration_s)

    hashes, latency = _user_results(users)
    all_samples = [s for u in users for s in u.latency_s]
    hop_stats = {
        "architecture": config.architecture,
        "hop_vehicle_edge_ms": round(
            (delta - 0.5 / config.packet_hz) * 1e3, 3),
        "hop_edge_relay_up_ms": _mean_ms(ingest_transit_ms),
        "vehicle_to_cloud_ms": _mean_ms(vehicle_to_cloud_ms),
        "hop_relay_user_up_ms": _mean_ms(
            [v for u in users for v in u.ping_up_ms]),
        "hop_relay_user_down_ms": _mean_ms(
            [v for u in users for v in u.ping_down_ms]),
        "total_stamp_to_user_ms": _mean_ms([s * 1e3 for s in all_samples]),
    }
    from .world import MetricsLog
    return RunResult(config=config, delta_s=delta,
                     log=MetricsLog([], 0, 0),
                     counters={"cloud_gateway": cloud_store.counters(),
                               "relay": dict(fabric.core.counters)},
                     wall_s=time.perf_counter() - t0,
                     user_hashes=hashes, user_latency_s=latency,
                     hop_stats=hop_stats)


# --------------------------------------------------------------- comparisons

def compare_user_hashes(hashes: dict[str, dict[int, str]]) -> dict:
    """Agreement of broadcast payload hashes on commonly seen sequences."""
    if not hashes:
        return {"users": [], "common_seqs": 0, "mismatched_seqs": 0}
    common = set.intersection(*(set(h) for h in hashes.values()))
    mismatched = sum(
        1 for seq in common
        if len({h[seq] for h in hashes.values()}) != 1)
    return {"users": sorted(hashes), "common_seqs": len(common),
            "mismatched_seqs": mismatched}


def latency_trial_configs(seed: int, duration_s: float = 10.0,
                          users: int = 2) -> tuple[ScenarioConfig,
                                                   ScenarioConfig]:
    """Paired configurations with identical injected one-way hops except
    for the last mile, which absorbs the missing edge hop."""
    edge = ScenarioConfig(
        name="latency-cloud-edge", architecture="cloud-edge", seed=seed,
        duration_s=duration_s, users=users,
        up_delay_ms=25.0, up_jitter_ms=2.0,
        down_delay_ms=25.0, down_jitter_ms=2.0,
        hop_edge_relay_ms=75.0, hop_relay_user_ms=125.0)
    centric = dataclasses.replace(
        edge, name="latency-cloud-centric", architecture="cloud-centric",
        hop_relay_user_ms=175.0)
    return edge, centric


def run_latency_trials(count: int = 20, base_seed: int = 1000,
                       duration_s: float = 10.0) -> dict:
    """Seeded head-to-head latency trials of the two architectures."""
    trials = []
    for i in range(count):
        seed = base_seed + i
        edge_cfg, centric_cfg = latency_trial_configs(seed, duration_s)
        edge = run_cloud_edge(edge_cfg)
        centric = run_cloud_centric(centric_cfg)
        trials.append({
            "seed": seed,
            "cloud_edge_ms": edge.hop_stats["total_stamp_to_user_ms"],
            "cloud_centric_ms": centric.hop_stats["total_stamp_to_user_ms"],
        })
    edge_band = (100.0, 300.0)
    centric_band = (400.0, 1000.0)
    return {
        "trials": trials,
        "edge_band_ms": list(edge_band),
        "centric_band_ms": list(centric_band),
        "edge_in_band": all(
            edge_band[0] <= t["cloud_edge_ms"] <= edge_band[1]
            for t in trials),
        "centric_in_band": all(
            centric_band[0] <= t["cloud_centric_ms"] <= centric_band[1]
            for t in trials),
        "edge_always_faster": all(
            t["cloud_edge_ms"] < t["cloud_centric_ms"] for t in trials),
    }
