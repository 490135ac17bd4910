"""Desk-scale digital-twin middleware.

A simulated drive-by-wire vehicle streams its state over UDP; a twin world
predicts it forward through transport latency and renders a synchronized
shadow; commands flow back down as bit-exact bus frames; an optional relay
shares the world across machines. The harness composes all of it in
deterministic virtual time or paced wall time.
"""

from .kinematics import (  # noqa: F401
    Pose2D,
    SiteToSimTransform,
    SmootherState,
    VehicleState,
    compute_horizon,
    ctrv_extrapolate,
    ema_heading,
    site_to_sim,
    sync_error,
    wrap_angle,
)

__version__ = "0.1.0"
