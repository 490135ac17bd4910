"""Pose algebra and forward prediction for the twin synchronization loop.

Everything here is pure: no clocks, no sockets, no hidden state. The twin
world calls these at render rate, so the functions are scalar (no numpy
dependency) and cheap. Angles are radians wrapped to (-pi, pi] throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

TWO_PI = 2.0 * math.pi

# Below this turn rate (rad/s) the circular-arc form is numerically fragile
# (v/omega blows up), so extrapolation switches to a series expansion.
OMEGA_MIN = 1e-4

# Prediction horizons are clamped here (seconds) so a stalled uplink cannot
# fling the shadow vehicle along a stale arc forever.
DT_MAX_DEFAULT = 0.5


@dataclass(frozen=True, slots=True)
class Pose2D:
    """Planar pose. theta is wrapped to (-pi, pi]."""

    x: float
    y: float
    theta: float


@dataclass(frozen=True, slots=True)
class VehicleState:
    """One timestamped kinematic sample as carried by the state stream.

    timestamp is seconds on the sender's clock (microsecond resolution),
    yaw is wrapped to (-pi, pi], v is signed speed in m/s, omega is turn
    rate in rad/s, seq increments per emitted sample.
    """

    timestamp: float
    x: float
    y: float
    yaw: float
    v: float
    omega: float
    seq: int

    @property
    def pose(self) -> Pose2D:
        return Pose2D(self.x, self.y, self.yaw)


@dataclass(frozen=True, slots=True)
class SiteToSimTransform:
    """Rigid mapping from the site (real-world local) frame to the sim frame.

    Positions rotate by ``rotation`` then translate by ``(tx, ty)``.
    Headings map as wrap(yaw_sign * theta + rotation); yaw_sign is -1 for
    sites surveyed with the opposite yaw convention, else +1.
    """

    rotation: float = 0.0
    tx: float = 0.0
    ty: float = 0.0
    yaw_sign: int = 1


@dataclass(frozen=True, slots=True)
class SmootherState:
    """Carry-through state for the heading EMA; pass in, get a new one back.

    theta_hat is None until the first raw heading is adopted.
    """

    alpha: float = 0.3
    theta_hat: float | None = None


def wrap_angle(phi: float) -> float:
    """Wrap an angle to (-pi, pi].

    Angles already in range are returned bit-unchanged so that zero-horizon
    extrapolation is exact. The boundary maps as wrap(-pi) == +pi.
    """
    if -math.pi < phi <= math.pi:
        return phi
    wrapped = math.fmod(phi + math.pi, TWO_PI)
    if wrapped <= 0.0:
        # fmod keeps the dividend's sign; shift negatives up one turn and
        # send the exact -pi boundary to +pi.
        wrapped += TWO_PI
    out = wrapped - math.pi
    return math.pi if out == -math.pi else out


def angle_diff(a: float, b: float) -> float:
    """Shortest signed arc from b to a, in (-pi, pi]."""
    return wrap_angle(a - b)


def compute_horizon(t_now: float, t_pkt: float, delta: float,
                    dt_max: float = DT_MAX_DEFAULT) -> float:
    """Prediction horizon Dt = (t_now - t_pkt) + delta, clamped to [0, dt_max].

    t_pkt is the timestamp carried by the newest state packet and delta is
    the calibrated lead margin covering transport plus residual pipeline
    latency. Clock skew between sender and receiver ends up inside delta,
    which is why delta is calibrated rather than assumed.
    """
    dt = (t_now - t_pkt) + delta
    if dt < 0.0:
        return 0.0
    if dt > dt_max:
        return dt_max
    return dt


def ctrv_extrapolate(state: VehicleState, dt: float,
                     omega_min: float = OMEGA_MIN) -> Pose2D:
    """Project a state dt seconds forward under constant turn rate and speed.

    For |omega| >= omega_min this is the exact circular arc:

        x' = x + (v/w) (sin(yaw + w dt) - sin yaw)
        y' = y - (v/w) (cos(yaw + w dt) - cos yaw)

    Below omega_min the arc form loses precision to cancellation, so the
    second-order expansion in omega is used instead (straight line plus the
    leading curvature term); the two branches agree to O(v w^2 dt^3) at the
    switch, far below any tolerance used downstream. The heading advances by
    w dt in both branches. dt = 0 returns the input pose exactly.

    Returns the raw predicted pose; heading smoothing is a separate stage.
    """
    theta = state.yaw
    theta_k = wrap_angle(theta + state.omega * dt)
    if abs(state.omega) >= omega_min:
        r = state.v / state.omega
        x = state.x + r * (math.sin(theta + state.omega * dt) - math.sin(theta))
        y = state.y - r * (math.cos(theta + state.omega * dt) - math.cos(theta))
    else:
        arc = state.v * dt
        bend = 0.5 * state.v * state.omega * dt * dt
        x = state.x + arc * math.cos(theta) - bend * math.sin(theta)
        y = state.y + arc * math.sin(theta) + bend * math.cos(theta)
    return Pose2D(x, y, theta_k)


def ema_heading(smoother: SmootherState,
                theta_raw: float) -> tuple[float, SmootherState]:
    """One step of the wrapped exponential moving average over headings.

        theta_hat_k = wrap(theta_hat_{k-1} + alpha * wrap(theta_raw - theta_hat_{k-1}))

    The inner wrap takes the shortest arc, so smoothing across the +/-pi
    seam never swings the long way round. The first raw heading is adopted
    as-is. Returns (smoothed heading, next smoother state).
    """
    if smoother.theta_hat is None:
        adopted = wrap_angle(theta_raw)
        return adopted, replace(smoother, theta_hat=adopted)
    err = wrap_angle(theta_raw - smoother.theta_hat)
    theta_hat = wrap_angle(smoother.theta_hat + smoother.alpha * err)
    return theta_hat, replace(smoother, theta_hat=theta_hat)


def site_to_sim(t: SiteToSimTransform, pose: Pose2D) -> Pose2D:
    """Map a site-frame pose into the sim frame."""
    c = math.cos(t.rotation)
    s = math.sin(t.rotation)
    x = c * pose.x - s * pose.y + t.tx
    y = s * pose.x + c * pose.y + t.ty
    theta = wrap_angle(t.yaw_sign * pose.theta + t.rotation)
    return Pose2D(x, y, theta)


def sim_to_site(t: SiteToSimTransform, pose: Pose2D) -> Pose2D:
    """Inverse of :func:`site_to_sim` (exact up to floating-point roundoff)."""
    c = math.cos(t.rotation)
    s = math.sin(t.rotation)
    dx = pose.x - t.tx
    dy = pose.y - t.ty
    x = c * dx + s * dy
    y = -s * dx + c * dy
    theta = wrap_angle(t.yaw_sign * (pose.theta - t.rotation))
    return Pose2D(x, y, theta)


def sync_error(real_pose_sim: Pose2D, shadow_pose: Pose2D) -> float:
    """Planar synchronization error e_p: Euclidean distance between positions."""
    return math.hypot(real_pose_sim.x - shadow_pose.x,
                      real_pose_sim.y - shadow_pose.y)
