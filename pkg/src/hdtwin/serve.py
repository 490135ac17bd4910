"""Live desk-demo session: plant, twin world, relay core, and the cockpit
bridge in one process.

The wiring is the cloud-edge deployment collapsed onto a single host. A
leader session and a cockpit-proxy session are both plugged straight into
a RelayCore, so control messages and broadcast bytes take the same paths
they would across machines, just without sockets or injected impairment.
The scheduler runs paced against the wall clock, and the only cross-thread
touch point is ``EventScheduler.call_at`` (cockpit controls arrive on a
WebSocket receive thread and are executed on the scheduler thread).
"""

from __future__ import annotations

from .can_codec import ControlCommand
from .harness import RNG_USER_BASE, ScenarioConfig, VehicleLoop, \
    calibrate_delta
from .kinematics import Pose2D
from .relay import (
    ROLE_LEADER,
    ROLE_USER,
    Control,
    EgoState,
    FrameBuffer,
    GlobalState,
    Join,
    RelayCore,
    RelayOutput,
    decode_body,
    encode_message,
    record_from_view,
    view_from_record,
)
from .simnet import EventScheduler, spawn_rngs
from .world import TwinWorld
from .wsbridge import WsBridge

_LEADER = "leader"
_PROXY = "cockpit-proxy"


def serve_config(**overrides) -> ScenarioConfig:
    """Defaults for a live session: clean local links, gentle broadcast rate."""
    defaults = dict(name="live-desk", duration_s=600.0,
                    up_delay_ms=0.0, up_jitter_ms=0.0,
                    down_delay_ms=0.0, down_jitter_ms=0.0,
                    relay_broadcast_hz=10.0)
    defaults.update(overrides)
    return ScenarioConfig(**defaults)


class ServeSession:
    """Composition root for ``hdtwin serve``."""

    def __init__(self, config: ScenarioConfig, ws_host: str = "127.0.0.1",
                 ws_port: int = 8765) -> None:
        self.config = config
        self.sched = EventScheduler()
        rngs = spawn_rngs(config.seed, RNG_USER_BASE)
        delta = calibrate_delta(config)
        self.delta_s = delta
        self.loop = VehicleLoop(config, self.sched, rngs, drive=False)
        self.world = TwinWorld(self.loop.store, config.world_config(delta))
        for i in range(config.npcs):
            self.world.spawn_virtual(f"npc-{i + 1}",
                                     Pose2D(10.0 + 5.0 * i, 10.0, 0.0))

        self.core = RelayCore(staleness_s=config.staleness_s)
        self._buffers = {_LEADER: FrameBuffer(), _PROXY: FrameBuffer()}
        self.core.connect(_LEADER)
        self.core.connect(_PROXY)
        self._route(self.core.feed(
            _LEADER, encode_message(Join(ROLE_LEADER, "leader-0")), 0.0))
        self._route(self.core.feed(
            _PROXY, encode_message(Join(ROLE_USER, "cockpit")), 0.0))

        self.bridge = WsBridge(self._on_cockpit_control,
                               host=ws_host, port=ws_port)
        self._last_uplinked = -1
        self.sched.call_every(config.tick_hz, self._tick_world)
        self.sched.call_every(config.relay_broadcast_hz, self._broadcast)

    # ------------------------------------------------------------ sim side

    def _tick_world(self, t: float) -> None:
        self.world.tick(t)
        tick = self.world.shadow.last_tick
        if tick is not None and tick.seq != self._last_uplinked:
            self._last_uplinked = tick.seq
            records = tuple(record_from_view(v)
                            for v in self.world.entities(t))
            self._route(self.core.feed(
                _LEADER, encode_message(EgoState(records)), t))

    def _broadcast(self, t: float) -> None:
        self._route(self.core.broadcast(t))

    def _route(self, out: RelayOutput) -> None:
        for sid, frame in out.sends:
            handler = self._handle_leader if sid == _LEADER \
                else self._handle_proxy
            for body in self._buffers[sid].feed(frame):
                handler(decode_body(body))
        for sid in out.closes:
            self.core.disconnect(sid)

    def _handle_leader(self, msg) -> None:
        if isinstance(msg, Control):
            cmd = msg.to_command()
            if msg.target == self.world.shadow_id:
                self.loop.command_from_remote(cmd)
            else:
                self.world.apply_remote_control(msg.target, cmd)

    def _handle_proxy(self, msg) -> None:
        if isinstance(msg, GlobalState):
            self.bridge.publish(
                msg.seq, [view_from_record(r) for r in msg.entities])

    # ------------------------------------------------------- cockpit side

    def _on_cockpit_control(self, target: str, cmd: ControlCommand) -> None:
        # runs on a WebSocket thread; hop onto the scheduler thread
        frame = encode_message(Control.from_command(target, cmd))
        self.sched.call_at(self.sched.now, self._feed_control, frame)

    def _feed_control(self, frame: bytes) -> None:
        self._route(self.core.feed(_PROXY, frame, self.sched.now))

    # -------------------------------------------------------------- control

    def run(self, speed: float = 1.0) -> None:
        """Block until the configured duration elapses or stop() is called."""
        self.bridge.start()
        try:
            self.sched.run_realtime(t_end=self.config.duration_s, speed=speed)
        finally:
            self.bridge.stop()

    def stop(self) -> None:
        self.sched.stop()
