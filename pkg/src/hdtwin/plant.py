"""Simulated drive-by-wire vehicle.

A kinematic bicycle stepped at a fixed rate: commanded steer/accel pass
through first-order actuator lags, brake overrides accel, and the pose
advances along exact arcs (the same math the twin uses to predict, run at
the plant's much finer step). The plant never sees wall clock; its time is
step_count / step_hz, and integration uses the differences of those
quantized step times so long constant-accel runs land on exact values.

The plant also keeps a noiseless truth log (local only, never transmitted)
which the harness uses to score synchronization after a run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import can_codec, wire
from .kinematics import VehicleState, ctrv_extrapolate, wrap_angle


@dataclass(frozen=True, slots=True)
class PlantConfig:
    wheelbase: float = 2.5        # m
    tau_steer: float = 0.2        # s, first-order steering lag (0 = instant)
    tau_accel: float = 0.3        # s, first-order accel lag (0 = instant)
    step_hz: float = 100.0
    emit_hz: float = 10.0
    max_speed: float = 15.0       # m/s, forward only
    max_brake_decel: float = 5.0  # m/s^2 at brake_pct = 100
    max_steer_deg: float = 30.0
    pose_noise_std: float = 0.0   # m, added to emitted x/y only
    seed: int = 0
    x0: float = 0.0
    y0: float = 0.0
    yaw0: float = 0.0


@dataclass(frozen=True, slots=True)
class TruthSample:
    """One noiseless ground-truth row from the plant's local log."""

    t: float
    x: float
    y: float
    yaw: float
    v: float
    omega: float


class Plant:
    """The simulated vehicle; step() is the only thing that advances it."""

    def __init__(self, config: PlantConfig | None = None) -> None:
        self.config = config or PlantConfig()
        c = self.config
        self.x = c.x0
        self.y = c.y0
        self.yaw = wrap_angle(c.yaw0)
        self.v = 0.0
        self.omega = 0.0
        self.engaged = False
        self.steer_target_deg = 0.0
        self.steer_actual_deg = 0.0
        self.accel_target = 0.0
        self.accel_actual = 0.0
        self.brake_pct = 0.0
        self.lights = {"TurnLeft": 0, "TurnRight": 0, "BrakeLight": 0}
        self.bad_frame_count = 0
        self.t = 0.0
        self._step_count = 0
        self._seq = 0
        self._rng = np.random.default_rng(c.seed)
        self._matrix = can_codec.default_matrix()
        self.truth: list[TruthSample] = [self._truth_row()]

    # ------------------------------------------------------------- commands

    def apply_frames(self, frames: "list[can_codec.CanFrame] | list[wire.CommandDatagram]") -> None:
        """Update command targets from decoded bus frames.

        Validity bytes gate each channel. Steering and accel are ignored
        while disengaged (the safe-stop rule owns the actuators then); the
        enable flag itself is always honored. Undecodable frames are counted
        and skipped.
        """
        for item in frames:
            frame = (can_codec.CanFrame(item.can_id, item.payload)
                     if isinstance(item, wire.CommandDatagram) else item)
            try:
                spec = self._matrix.by_id(frame.can_id)
                values = can_codec.decode_frame(self._matrix, frame)
            except can_codec.CanCodecError:
                self.bad_frame_count += 1
                continue
            if spec.name == "IECU_Flag":
                self._set_engaged(values["IECU_Flag"] >= 1.0)
            elif spec.name == "IECU_Steer":
                if values["Steer_Valid"] >= 1.0 and self.engaged:
                    self.steer_target_deg = values["Steer_AngleCmd"]
            elif spec.name == "IECU_Speed":
                if values["Speed_Valid"] >= 1.0 and self.engaged:
                    self.accel_target = values["AccelCmd"]
            elif spec.name == "IECU_Brake":
                if values["Brake_Valid"] >= 1.0 and self.engaged:
                    self.brake_pct = values["BrakeCmd"]
            elif spec.name == "Light_Flag":
                self.lights = {k: int(values[k]) for k in
                               ("TurnLeft", "TurnRight", "BrakeLight")}

    def _set_engaged(self, engaged: bool) -> None:
        if self.engaged and not engaged:
            # Safe stop: hold the wheel where it is, brake fully, and stop
            # listening to steer/accel until re-engaged.
            self.steer_target_deg = self.steer_actual_deg
            self.accel_target = 0.0
            self.brake_pct = 100.0
        self.engaged = engaged

    # ---------------------------------------------------------------- motion

    def step(self) -> None:
        c = self.config
        t_next = (self._step_count + 1) / c.step_hz
        dt = t_next - self.t

        self.steer_actual_deg += ((self.steer_target_deg - self.steer_actual_deg)
                                  * _lag_gain(dt, c.tau_steer))
        if not self.engaged:
            accel_goal = -c.max_brake_decel
        elif self.brake_pct > 0.0:
            accel_goal = -c.max_brake_decel * self.brake_pct / 100.0
        else:
            accel_goal = self.accel_target
        self.accel_actual += ((accel_goal - self.accel_actual)
                              * _lag_gain(dt, c.tau_accel))

        v = self.v + self.accel_actual * dt
        if v <= 0.0 and accel_goal <= 0.0:
            # Held at rest by the brake (or the safe stop): the achieved
            # longitudinal acceleration is zero, nothing pushes backwards.
            # Without this the lag state winds up toward full braking and a
            # later launch pays the whole unwind as dead time.
            self.v = 0.0
            self.accel_actual = 0.0
        else:
            self.v = min(max(v, 0.0), c.max_speed)
        steer_rad = math.radians(
            min(max(self.steer_actual_deg, -c.max_steer_deg), c.max_steer_deg))
        self.omega = (self.v / c.wheelbase) * math.tan(steer_rad)

        pose = ctrv_extrapolate(
            VehicleState(0.0, self.x, self.y, self.yaw, self.v, self.omega, 0),
            dt)
        self.x, self.y, self.yaw = pose.x, pose.y, pose.theta

        self._step_count += 1
        self.t = t_next
        self.truth.append(self._truth_row())

    def _truth_row(self) -> TruthSample:
        return TruthSample(self.t, self.x, self.y, self.yaw, self.v, self.omega)

    # ---------------------------------------------------------------- output

    def sample_state(self) -> VehicleState:
        """One emitted state sample: microsecond timestamp, optional position
        noise, monotone seq. The truth log stays noiseless regardless."""
        c = self.config
        x, y = self.x, self.y
        if c.pose_noise_std > 0.0:
            nx, ny = self._rng.normal(0.0, c.pose_noise_std, 2)
            x += nx
            y += ny
        ts = round(self.t * 1e6) / 1e6
        self._seq += 1
        return VehicleState(ts, x, y, self.yaw, self.v, self.omega, self._seq)


def _lag_gain(dt: float, tau: float) -> float:
    """Exact discrete gain of a first-order lag; 1.0 when tau is zero."""
    if tau <= 0.0:
        return 1.0
    return 1.0 - math.exp(-dt / tau)


# --------------------------------------------------------------------- driver

PROFILE_KINDS = ("straight", "circle", "figure_eight", "stop_and_go")


@dataclass(frozen=True, slots=True)
class ProfileParams:
    kind: str = "figure_eight"
    target_speed: float = 3.0   # m/s
    turn_radius: float = 8.0    # m, circle / figure-eight
    accel_limit: float = 2.5    # m/s^2, keeps the prediction horizon honest
    kp_speed: float = 1.0       # proportional speed gain
    phase_s: float = 10.0       # stop-and-go phase length

    def __post_init__(self) -> None:
        if self.kind not in PROFILE_KINDS:
            raise ValueError(f"unknown profile kind {self.kind!r}")


class ProfileDriver:
    """Open-loop path shapes with a proportional speed loop on top.

    command(t, measured_speed) is a pure function of its arguments, so runs
    replay identically. The figure-eight flips steering sign once per full
    loop (loop period 2*pi*R / v_target); stop-and-go alternates between the
    target speed and a braked stop each phase.
    """

    def __init__(self, params: ProfileParams, wheelbase: float = 2.5) -> None:
        self.params = params
        self.steer_deg = math.degrees(math.atan2(wheelbase, params.turn_radius))

    def command(self, t: float, measured_speed: float) -> can_codec.ControlCommand:
        p = self.params
        steer = 0.0
        if p.kind == "circle":
            steer = self.steer_deg
        elif p.kind == "figure_eight":
            loop_period = 2.0 * math.pi * p.turn_radius / p.target_speed
            steer = self.steer_deg if (t // loop_period) % 2 == 0 else -self.steer_deg

        v_goal = p.target_speed
        if p.kind == "stop_and_go" and (t // p.phase_s) % 2 == 1:
            v_goal = 0.0

        accel = p.kp_speed * (v_goal - measured_speed)
        accel = min(max(accel, -p.accel_limit), p.accel_limit)
        brake_pct = 0.0
        if v_goal <= 0.01 and measured_speed > 0.05:
            # Stop phases use the brake channel instead of engine braking.
            brake_pct = min(100.0, 100.0 * (-accel) / 5.0) if accel < 0 else 0.0
            accel = 0.0
        return can_codec.ControlCommand(
            steer_deg=steer,
            accel=accel,
            brake_pct=brake_pct,
            turn_left=steer > 0.5,
            turn_right=steer < -0.5,
            brake_light=brake_pct > 0.0,
        )
