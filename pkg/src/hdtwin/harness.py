"""Scenario configuration, the standalone closed loop, and run reports.

A scenario wires the simulated vehicle, the impaired links, the gateway
dispatch path, and the twin world onto one event scheduler, runs it to the
configured horizon, then scores the recorder against the plant's truth log.
Everything downstream of the seed is deterministic, so reports (CSV and
JSON, not the rendered figures) are byte-identical across reruns.
"""

from __future__ import annotations

import dataclasses
import json
import statistics
import time
from dataclasses import dataclass
from pathlib import Path

import yaml

from . import can_codec, wire
from .kinematics import SiteToSimTransform
from .plant import PROFILE_KINDS, Plant, PlantConfig, ProfileDriver, ProfileParams
from .simnet import (
    EventScheduler,
    ImpairedLink,
    LinkProfile,
    schedule_noise,
    simulate_probe_rtts,
    spawn_rngs,
)
from .world import MetricsLog, TwinWorld, WorldConfig

ARCHITECTURES = ("standalone", "cloud-edge", "cloud-centric")

# Fixed purposes for the spawned RNG streams. Slots 0..7 belong to the
# leader-side chain so that adding or removing remote users can never
# perturb it; per-user streams start at RNG_USER_BASE.
RNG_PLANT, RNG_UPLINK, RNG_DOWNLINK, RNG_NOISE, RNG_PROBE, \
    RNG_PROCESSING, RNG_LEADER_UP, RNG_LEADER_DOWN = range(8)
RNG_USER_BASE = 8


@dataclass(frozen=True, slots=True)
class ScenarioConfig:
    name: str = "figure-eight-baseline"
    seed: int = 0
    duration_s: float = 60.0
    architecture: str = "standalone"

    # vehicle and drive profile
    profile: str = "figure_eight"
    target_speed: float = 3.0
    turn_radius: float = 8.0
    accel_limit: float = 2.5
    phase_s: float = 10.0
    pose_noise_std: float = 0.0

    # rates
    step_hz: float = 100.0
    packet_hz: float = 10.0
    command_hz: float = 10.0
    tick_hz: float = 60.0

    # shadow pipeline
    alpha: float = 0.3
    delta_s: float | None = None   # None: calibrate from probes
    dt_max: float = 0.5

    # site-to-sim placement
    rotation: float = 0.0
    tx: float = 0.0
    ty: float = 0.0
    yaw_sign: int = 1

    # vehicle <-> edge link impairment
    up_delay_ms: float = 20.0
    up_jitter_ms: float = 5.0
    up_loss: float = 0.0
    down_delay_ms: float = 20.0
    down_jitter_ms: float = 5.0
    down_loss: float = 0.0
    noise_rate_hz: float = 0.0

    # cloud topology
    users: int = 3
    user_hz: float = 10.0
    relay_broadcast_hz: float = 20.0
    staleness_s: float = 0.3
    hop_edge_relay_ms: float = 75.0
    hop_relay_user_ms: float = 125.0
    hop_jitter_ms: float = 2.0
    snapshot_hz: float = 2.5          # cloud-centric world update cadence
    processing_min_ms: float = 150.0  # cloud-centric per-snapshot work
    processing_max_ms: float = 250.0
    npcs: int = 0

    def __post_init__(self) -> None:
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}; "
                             f"expected one of {ARCHITECTURES}")
        if self.profile not in PROFILE_KINDS:
            raise ValueError(f"unknown profile {self.profile!r}")
        for label in ("duration_s", "step_hz", "packet_hz", "command_hz",
                      "tick_hz", "target_speed"):
            if getattr(self, label) <= 0:
                raise ValueError(f"{label} must be positive")
        if self.users < 0 or self.npcs < 0:
            raise ValueError("users and npcs must be non-negative")

    # -------------------------------------------------------- sub-configs

    def transform(self) -> SiteToSimTransform:
        return SiteToSimTransform(self.rotation, self.tx, self.ty,
                                  self.yaw_sign)

    def plant_config(self) -> PlantConfig:
        return PlantConfig(step_hz=self.step_hz, emit_hz=self.packet_hz,
                           pose_noise_std=self.pose_noise_std,
                           seed=self.seed)

    def profile_params(self) -> ProfileParams:
        return ProfileParams(kind=self.profile,
                             target_speed=self.target_speed,
                             turn_radius=self.turn_radius,
                             accel_limit=self.accel_limit,
                             phase_s=self.phase_s)

    def world_config(self, delta_s: float) -> WorldConfig:
        return WorldConfig(tick_hz=self.tick_hz, alpha=self.alpha,
                           delta=delta_s, dt_max=self.dt_max,
                           transform=self.transform())

    def up_profile(self) -> LinkProfile:
        return LinkProfile(self.up_delay_ms / 1e3, self.up_jitter_ms / 1e3,
                           self.up_loss)

    def down_profile(self) -> LinkProfile:
        return LinkProfile(self.down_delay_ms / 1e3,
                           self.down_jitter_ms / 1e3, self.down_loss)

    def relay_profile(self, hop_ms: float) -> LinkProfile:
        return LinkProfile(hop_ms / 1e3, self.hop_jitter_ms / 1e3,
                           loss=0.0, keep_order=True)

    # --------------------------------------------------------------- YAML

    def to_yaml(self) -> str:
        return yaml.safe_dump(dataclasses.asdict(self), sort_keys=False)

    @classmethod
    def from_yaml(cls, text: str) -> "ScenarioConfig":
        doc = yaml.safe_load(text) or {}
        if not isinstance(doc, dict):
            raise ValueError("scenario file must contain a mapping")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ValueError(f"unknown scenario keys: {', '.join(unknown)}")
        return cls(**doc)

    @classmethod
    def from_file(cls, path: str | Path) -> "ScenarioConfig":
        return cls.from_yaml(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True, slots=True)
class Thresholds:
    mean_m: float = 0.05
    max_m: float = 0.10


@dataclass
class RunResult:
    config: ScenarioConfig
    delta_s: float
    log: MetricsLog
    counters: dict
    wall_s: float
    # populated by the cloud architectures
    user_hashes: dict[str, dict[int, str]] | None = None
    user_latency_s: dict[str, list[float]] | None = None
    hop_stats: dict | None = None


def calibrate_delta(config: ScenarioConfig, count: int = 20,
                    spacing_s: float = 0.05) -> float:
    """Lead margin: median one-way probe delay plus half a packet period."""
    if config.delta_s is not None:
        return config.delta_s
    rng = spawn_rngs(config.seed, RNG_USER_BASE)[RNG_PROBE]
    rtts = simulate_probe_rtts(config.up_profile(), count=count,
                               spacing_s=spacing_s, rng=rng)
    if not rtts:
        raise RuntimeError("calibration failed: every probe was lost")
    return statistics.median(rtts) / 2.0 + 0.5 / config.packet_hz


class VehicleLoop:
    """Plant + profile driver + both impaired links on one scheduler.

    This is the part every architecture shares: commands flow down to the
    vehicle as framed datagrams, sampled states flow back up into the
    gateway dispatch path and land in a LatestStateStore.
    """

    def __init__(self, config: ScenarioConfig, sched: EventScheduler,
                 rngs: list, state_tap=None, drive: bool = True) -> None:
        self.config = config
        self.sched = sched
        self.state_tap = state_tap   # raw copy of each uplink datagram
        self.plant = Plant(config.plant_config())
        self.driver = ProfileDriver(config.profile_params(),
                                    wheelbase=self.plant.config.wheelbase)
        self.store = wire.LatestStateStore()
        self.sinks = wire.GatewaySinks(store=self.store)
        self.uplink = ImpairedLink(sched, config.up_profile(),
                                   self._on_uplink_data, rngs[RNG_UPLINK])
        self.downlink = ImpairedLink(sched, config.down_profile(),
                                     self._on_downlink_data,
                                     rngs[RNG_DOWNLINK])
        sched.call_every(config.step_hz, lambda t: self.plant.step(),
                         priority=0)
        sched.call_every(config.packet_hz, self._emit_state)
        if drive:
            sched.call_every(config.command_hz, self._send_commands)
        if config.noise_rate_hz > 0:
            schedule_noise(sched, config.noise_rate_hz, config.duration_s,
                           rngs[RNG_NOISE], self._on_uplink_data)

    def _emit_state(self, _t: float) -> None:
        self.uplink.send(wire.encode_state(self.plant.sample_state()))

    def _send_commands(self, t: float) -> None:
        snap = self.store.snapshot()
        measured = snap.v if snap is not None else 0.0
        cmd = self.driver.command(t, measured)
        for frame in can_codec.encode_command(cmd):
            self.downlink.send(wire.encode_command(frame.can_id,
                                                   frame.payload))

    def _on_uplink_data(self, data: bytes) -> None:
        wire.dispatch_datagram(data, self.sinks)
        if self.state_tap is not None:
            self.state_tap(data)

    def _on_downlink_data(self, data: bytes) -> None:
        decoded = wire.decode_datagram(data)
        if isinstance(decoded, wire.CommandDatagram):
            self.plant.apply_frames([decoded])

    def command_from_remote(self, cmd: can_codec.ControlCommand) -> None:
        """Drive the vehicle from an external cockpit instead of the
        profile driver (the serve mode unhooks the driver)."""
        for frame in can_codec.encode_command(cmd):
            self.downlink.send(wire.encode_command(frame.can_id,
                                                   frame.payload))

    def link_counters(self) -> dict:
        return {
            "uplink": {"sent": self.uplink.sent,
                       "dropped": self.uplink.dropped},
            "downlink": {"sent": self.downlink.sent,
                         "dropped": self.downlink.dropped},
            "gateway": self.store.counters(),
            "plant_bad_frames": self.plant.bad_frame_count,
        }


def run_standalone(config: ScenarioConfig) -> RunResult:
    """Vehicle, gateway, and twin world on one desk; no relay."""
    t0 = time.perf_counter()
    delta = calibrate_delta(config)
    rngs = spawn_rngs(config.seed, RNG_USER_BASE)
    sched = EventScheduler()
    loop = VehicleLoop(config, sched, rngs)
    world = TwinWorld(loop.store, config.world_config(delta))
    sched.call_every(config.tick_hz, world.tick)
    sched.run_until(config.duration_s)
    log = world.recorder.finalize(loop.plant.truth, config.transform(),
                                  world.config.match_window)
    return RunResult(config=config, delta_s=delta, log=log,
                     counters=loop.link_counters(),
                     wall_s=time.perf_counter() - t0)


def run_scenario(config: ScenarioConfig) -> RunResult:
    if config.architecture == "standalone":
        return run_standalone(config)
    from . import cloud
    if config.architecture == "cloud-edge":
        return cloud.run_cloud_edge(config)
    return cloud.run_cloud_centric(config)


# ------------------------------------------------------------------ reports

def evaluate(log: MetricsLog, thresholds: Thresholds) -> dict:
    summary = log.summarize()
    if summary.get("empty"):
        return {"mean_m": thresholds.mean_m, "max_m": thresholds.max_m,
                "passed": False, "reason": "no scored rows"}
    return {"mean_m": thresholds.mean_m, "max_m": thresholds.max_m,
            "passed": bool(summary["mean"] <= thresholds.mean_m
                           and summary["max"] <= thresholds.max_m)}


def build_summary(result: RunResult,
                  thresholds: Thresholds | None = None) -> dict:
    doc = {
        "scenario": {
            "name": result.config.name,
            "architecture": result.config.architecture,
            "seed": result.config.seed,
            "duration_s": result.config.duration_s,
        },
        "delta_s": result.delta_s,
        "sync_error": result.log.summarize(),
        "counters": result.counters,
    }
    if thresholds is not None:
        doc["thresholds"] = evaluate(result.log, thresholds)
    if result.user_latency_s is not None:
        doc["user_latency_ms"] = {
            user: {"count": len(vals),
                   "mean": round(1e3 * statistics.fmean(vals), 3)
                   if vals else None}
            for user, vals in sorted(result.user_latency_s.items())}
    return doc


def write_summary_json(doc: dict, path: Path) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def render_figures(log: MetricsLog, out_dir: Path,
                   title: str = "") -> list[Path]:
    """Trajectory overlay and sync-error trace as PNG files."""
    from matplotlib.figure import Figure

    written: list[Path] = []
    if not log.rows:
        return written
    t = [r.t for r in log.rows]
    e = [r.e_p for r in log.rows]

    fig = Figure(figsize=(7.0, 6.5))
    ax = fig.subplots()
    ax.plot([r.x_r for r in log.rows], [r.y_r for r in log.rows],
            color="#888888", linewidth=2.4, label="vehicle (truth)")
    ax.plot([r.x_s for r in log.rows], [r.y_s for r in log.rows],
            color="#c0392b", linewidth=1.0, linestyle="--", label="shadow")
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.legend(loc="best")
    ax.set_title(title or "trajectory")
    ax.grid(True, alpha=0.3)
    path = out_dir / "trajectory.png"
    fig.savefig(path, dpi=120)
    written.append(path)

    fig = Figure(figsize=(8.0, 4.0))
    ax = fig.subplots()
    ax.plot(t, e, color="#2c3e50", linewidth=0.8)
    mean_e = sum(e) / len(e)
    ax.axhline(mean_e, color="#c0392b", linewidth=1.0, linestyle=":",
               label=f"mean {mean_e:.4f} m")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("sync error [m]")
    ax.set_title(title or "pose sync error")
    ax.legend(loc="best")
    ax.grid(True, alpha=0.3)
    path = out_dir / "sync_error.png"
    fig.savefig(path, dpi=120)
    written.append(path)
    return written


def load_metrics_csv(path: Path) -> MetricsLog:
    from .world import MetricsRow

    rows = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        expected = "t,x_r,y_r,x_s,y_s,e_p,dt_horizon,packet_age"
        if header != expected:
            raise ValueError(f"unexpected metrics header: {header!r}")
        for line in fh:
            f = [float(v) for v in line.strip().split(",")]
            if len(f) != 8:
                raise ValueError("metrics row does not have 8 columns")
            rows.append(MetricsRow(*f))
    return MetricsLog(rows, 0, 0)


def write_outputs(result: RunResult, out_dir: str | Path,
                  thresholds: Thresholds | None = None,
                  figures: bool = True) -> dict:
    """Write metrics.csv, summary.json and figures; returns the summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result.log.write_csv(out / "metrics.csv")
    doc = build_summary(result, thresholds)
    write_summary_json(doc, out / "summary.json")
    if result.hop_stats is not None:
        write_summary_json(result.hop_stats, out / "latency.json")
    if figures:
        render_figures(result.log, out, title=result.config.name)
    return doc
