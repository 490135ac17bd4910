"""Command-line entry points.

Subcommands map to the measurements the middleware exists to take:
``run`` executes one scenario and writes the report files, ``probe`` and
``calibrate`` exercise the latency estimator, ``can`` inspects the command
pipeline's frames, ``report`` re-renders saved metrics, ``trials`` runs the
architecture comparison, and ``serve`` hosts a live session for the browser
cockpit. Exit code 0 means every requested threshold held.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import statistics
import sys
from pathlib import Path

from . import can_codec
from .harness import (
    ScenarioConfig,
    Thresholds,
    calibrate_delta,
    evaluate,
    load_metrics_csv,
    render_figures,
    run_scenario,
    write_outputs,
    write_summary_json,
)
from .simnet import LinkProfile, simulate_probe_rtts, spawn_rngs

OUTPUT_DIR_ENV = "HDTWIN_OUTPUT_DIR"

_CONFIG_GROUPS = (
    ("scenario identity and clock", (
        "name", "seed", "duration_s", "architecture")),
    ("drive profile of the (simulated) vehicle", (
        "profile", "target_speed", "turn_radius", "accel_limit", "phase_s",
        "pose_noise_std")),
    ("rates", ("step_hz", "packet_hz", "command_hz", "tick_hz")),
    ("shadow synchronization", (
        "alpha", "delta_s", "dt_max",
        "rotation", "tx", "ty", "yaw_sign")),
    ("vehicle <-> edge impairment (one way each)", (
        "up_delay_ms", "up_jitter_ms", "up_loss",
        "down_delay_ms", "down_jitter_ms", "down_loss", "noise_rate_hz")),
    ("relay deployment", (
        "users", "user_hz", "relay_broadcast_hz", "staleness_s",
        "hop_edge_relay_ms", "hop_relay_user_ms", "hop_jitter_ms")),
    ("cloud-centric snapshot pipeline", (
        "snapshot_hz", "processing_min_ms", "processing_max_ms")),
    ("scripted background traffic", ("npcs",)),
)


def default_config_text() -> str:
    import yaml

    cfg = ScenarioConfig()
    lines = ["# Scenario configuration, YAML. Every key is optional and",
             "# defaults to the value shown. delta_s null means "
             "auto-calibrate.", ""]
    for comment, names in _CONFIG_GROUPS:
        lines.append(f"# {comment}")
        for name in names:
            value = getattr(cfg, name)
            lines.append(yaml.safe_dump({name: value},
                                        default_flow_style=False).strip())
        lines.append("")
    return "\n".join(lines)


def _load_config(args) -> ScenarioConfig:
    cfg = ScenarioConfig.from_file(args.config) if args.config \
        else ScenarioConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "duration", None) is not None:
        overrides["duration_s"] = args.duration
    if getattr(args, "topology", None) is not None:
        overrides["architecture"] = args.topology
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def _out_dir(args, cfg: ScenarioConfig | None = None) -> Path:
    if args.out:
        return Path(args.out)
    env = os.environ.get(OUTPUT_DIR_ENV)
    if env:
        return Path(env)
    return Path("runs") / (cfg.name if cfg else "report")


def _print_per_second_table(summary: dict, per_row: int = 10) -> None:
    samples = summary.get("per_second") or []
    if not samples:
        return
    for start in range(0, len(samples), per_row):
        block = samples[start:start + per_row]
        ts = "".join(f"{s['t']:>9.0f}" for s in block)
        es = "".join(f"{s['e_p']:>9.3f}" for s in block)
        print(f"  {'t (s)':<12}{ts}")
        print(f"  {'e_p(t) (m)':<12}{es}")


def _print_sync_summary(summary: dict) -> None:
    if summary.get("empty"):
        print("  no scored samples")
        return
    print(f"  samples {summary['count']}  mean {summary['mean']:.4f} m"
          f"  max {summary['max']:.4f} m  p95 {summary['p95']:.4f} m")
    skipped = summary["skipped_unsynchronized"] + summary["skipped_unmatched"]
    if skipped:
        print(f"  skipped {skipped} "
              f"({summary['skipped_unsynchronized']} before first packet, "
              f"{summary['skipped_unmatched']} without a truth sample)")


# ------------------------------------------------------------------ commands

def cmd_run(args) -> int:
    cfg = _load_config(args)
    thresholds = Thresholds(mean_m=args.mean_threshold,
                            max_m=args.max_threshold)
    result = run_scenario(cfg)
    out = _out_dir(args, cfg)
    doc = write_outputs(result, out, thresholds,
                        figures=not args.no_figures)
    print(f"scenario {cfg.name!r} ({cfg.architecture}), seed {cfg.seed}, "
          f"{cfg.duration_s:g} s simulated in {result.wall_s:.1f} s")
    print(f"  lead margin delta = {result.delta_s * 1e3:.1f} ms")
    summary = doc["sync_error"]
    _print_sync_summary(summary)
    _print_per_second_table(summary)
    if result.hop_stats:
        total = result.hop_stats.get("total_stamp_to_user_ms")
        if total is not None:
            print(f"  stamp-to-user latency {total:.1f} ms")
    print(f"  wrote {out}/")
    verdict = doc.get("thresholds", {})
    if verdict.get("passed"):
        print(f"PASS  mean <= {thresholds.mean_m} m and "
              f"max <= {thresholds.max_m} m")
        return 0
    reason = verdict.get("reason", "threshold exceeded")
    print(f"FAIL  {reason}")
    return 1


def cmd_probe(args) -> int:
    if args.simulate:
        profile = LinkProfile(args.delay_ms / 1e3, args.jitter_ms / 1e3,
                              args.loss)
        rng = spawn_rngs(args.seed, 1)[0]
        rtts = simulate_probe_rtts(profile, count=args.count, rng=rng)
        sent = args.count
        label = (f"simulated link {args.delay_ms:g} ms "
                 f"+/- {args.jitter_ms:g} ms, loss {args.loss:g}")
    else:
        from .gateway import UdpEchoResponder, probe_link

        responder = None
        if args.peer:
            host, _, port = args.peer.rpartition(":")
            peer = (host or "127.0.0.1", int(port))
        else:
            responder = UdpEchoResponder().start()
            peer = responder.address
        try:
            result = probe_link(peer, count=args.count)
        finally:
            if responder is not None:
                responder.stop()
        sent, rtts = result.sent, list(result.rtts_s)
        label = f"peer {peer[0]}:{peer[1]}" + \
            (" (local loopback)" if responder else "")
    print(f"probe {label}: {len(rtts)}/{sent} answered")
    if not rtts:
        print("no echoes; cannot estimate latency")
        return 1
    one_way = statistics.median(rtts) / 2.0
    print(f"  median RTT {statistics.median(rtts) * 1e3:.2f} ms, "
          f"one-way estimate {one_way * 1e3:.2f} ms")
    return 0


def cmd_calibrate(args) -> int:
    cfg = _load_config(args)
    if args.delay_ms is not None:
        cfg = dataclasses.replace(cfg, up_delay_ms=args.delay_ms)
    if args.jitter_ms is not None:
        cfg = dataclasses.replace(cfg, up_jitter_ms=args.jitter_ms)
    cfg = dataclasses.replace(cfg, delta_s=None)
    delta = calibrate_delta(cfg)
    half_period = 0.5 / cfg.packet_hz
    print(f"delta = {delta * 1e3:.1f} ms "
          f"(one-way estimate {(delta - half_period) * 1e3:.1f} ms "
          f"+ half packet period {half_period * 1e3:.1f} ms)")
    return 0


def cmd_can(args) -> int:
    if args.action != "dump":
        print(f"unknown can action {args.action!r}; expected 'dump'",
              file=sys.stderr)
        return 2
    cmd = can_codec.ControlCommand(
        steer_deg=args.steer_deg, accel=args.accel, brake_pct=args.brake,
        turn_left=args.turn_left, turn_right=args.turn_right,
        brake_light=args.brake_light or args.brake > 0,
        engage=not args.no_engage)
    matrix = can_codec.default_matrix()
    for frame in can_codec.encode_command(cmd):
        spec = matrix.by_id(frame.can_id)
        payload = " ".join(f"{b:02x}" for b in frame.payload)
        decoded = can_codec.decode_frame(matrix, frame)
        values = "  ".join(f"{name}={value:g}"
                           for name, value in decoded.items())
        print(f"0x{frame.can_id:03X} {spec.name:<18} [{payload}]  {values}")
    return 0


def cmd_report(args) -> int:
    log = load_metrics_csv(Path(args.metrics))
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    summary = log.summarize()
    doc = {"source": str(args.metrics), "sync_error": summary}
    thresholds = None
    if args.mean_threshold is not None or args.max_threshold is not None:
        thresholds = Thresholds(
            mean_m=args.mean_threshold
            if args.mean_threshold is not None else 0.05,
            max_m=args.max_threshold
            if args.max_threshold is not None else 0.10)
        doc["thresholds"] = evaluate(log, thresholds)
    write_summary_json(doc, out / "summary.json")
    if not args.no_figures:
        render_figures(log, out)
    _print_sync_summary(summary)
    _print_per_second_table(summary)
    print(f"  wrote {out}/")
    if thresholds is not None and not doc["thresholds"]["passed"]:
        print("FAIL  threshold exceeded")
        return 1
    if thresholds is not None:
        print("PASS")
    return 0


def cmd_trials(args) -> int:
    from .cloud import (latency_trial_configs, run_cloud_centric,
                        run_cloud_edge, run_latency_trials)

    doc = run_latency_trials(count=args.count, base_seed=args.base_seed,
                             duration_s=args.duration)
    # one representative pair for the per-hop rows
    edge_cfg, centric_cfg = latency_trial_configs(args.base_seed,
                                                  args.duration)
    edge = run_cloud_edge(edge_cfg).hop_stats
    centric = run_cloud_centric(centric_cfg).hop_stats

    def row(label: str, c_val, e_val) -> None:
        c = f"{c_val:.1f} ms" if c_val is not None else "-"
        e = f"{e_val:.1f} ms" if e_val is not None else "-"
        print(f"  {label:<28}{c:>22}{e:>26}")

    print(f"latency comparison over {args.count} seeded trials "
          f"({args.duration:g} s each)")
    print(f"  {'transfer':<28}{'fully cloud-centric':>22}"
          f"{'cloud-edge collaborative':>26}")
    row("real car -> local side", centric["hop_vehicle_edge_ms"],
        edge["hop_vehicle_edge_ms"])
    row("local -> cloud", centric["hop_edge_relay_up_ms"],
        edge["hop_edge_relay_up_ms"])
    row("cloud -> local", centric["hop_relay_user_down_ms"],
        edge["hop_relay_user_down_ms"])
    row("total data transfer", centric["total_stamp_to_user_ms"],
        edge["total_stamp_to_user_ms"])
    totals_c = [t["cloud_centric_ms"] for t in doc["trials"]]
    totals_e = [t["cloud_edge_ms"] for t in doc["trials"]]
    print(f"  totals across trials: centric {min(totals_c):.1f}"
          f"-{max(totals_c):.1f} ms (band {doc['centric_band_ms'][0]:g}"
          f"-{doc['centric_band_ms'][1]:g}), edge {min(totals_e):.1f}"
          f"-{max(totals_e):.1f} ms (band {doc['edge_band_ms'][0]:g}"
          f"-{doc['edge_band_ms'][1]:g})")
    if args.out or os.environ.get(OUTPUT_DIR_ENV):
        out = _out_dir(args)
        out.mkdir(parents=True, exist_ok=True)
        write_summary_json(doc, out / "latency.json")
        print(f"  wrote {out}/latency.json")
    ok = (doc["edge_in_band"] and doc["centric_in_band"]
          and doc["edge_always_faster"])
    print("PASS  both architectures in band, edge faster in every trial"
          if ok else "FAIL  band or ordering violated")
    return 0 if ok else 1


def cmd_serve(args) -> int:
    from .serve import ServeSession, serve_config

    if args.config:
        cfg = ScenarioConfig.from_file(args.config)
    else:
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.duration is not None:
            overrides["duration_s"] = args.duration
        cfg = serve_config(**overrides)
    session = ServeSession(cfg, ws_host=args.ws_host, ws_port=args.ws_port)
    host, port = session.bridge.address
    # flush: a supervisor reading our pipe needs the endpoint before the
    # blocking run starts, and stdout is block-buffered when piped
    print(f"cockpit endpoint ws://{host}:{port}  "
          f"(scenario {cfg.name!r}, {cfg.duration_s:g} s)", flush=True)
    print("press Ctrl-C to stop", flush=True)
    try:
        session.run(speed=args.speed)
    except KeyboardInterrupt:
        session.stop()
        print("\nstopped")
    counters = session.bridge.counters
    print(f"served {counters['connected']} connection(s), "
          f"{counters['controls']} control message(s), "
          f"{counters['published']} broadcast(s)")
    return 0


# -------------------------------------------------------------------- parser

def _add_threshold_args(parser) -> None:
    parser.add_argument("--mean-threshold", type=float, default=0.05,
                        help="pass/fail bound on mean e_p in meters")
    parser.add_argument("--max-threshold", type=float, default=0.10,
                        help="pass/fail bound on max e_p in meters")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hdtwin",
        description="Closed-loop digital-twin middleware harness")
    parser.add_argument("--print-default-config", action="store_true",
                        help="emit an annotated default scenario file "
                             "and exit")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("run", help="execute one scenario, write reports")
    p.add_argument("--config", help="scenario YAML file")
    p.add_argument("--seed", type=int)
    p.add_argument("--duration", type=float, help="seconds")
    p.add_argument("--topology", choices=("standalone", "cloud-edge",
                                          "cloud-centric"))
    p.add_argument("--out", help=f"output directory "
                                 f"(default ${OUTPUT_DIR_ENV} or runs/<name>)")
    p.add_argument("--no-figures", action="store_true")
    _add_threshold_args(p)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("probe", help="estimate one-way link latency")
    p.add_argument("--peer", help="probe a live responder at host:port")
    p.add_argument("--simulate", action="store_true",
                   help="probe a simulated link instead of a socket")
    p.add_argument("--delay-ms", type=float, default=20.0)
    p.add_argument("--jitter-ms", type=float, default=0.0)
    p.add_argument("--loss", type=float, default=0.0)
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_probe)

    p = sub.add_parser("calibrate",
                       help="compute the lead margin for a scenario")
    p.add_argument("--config", help="scenario YAML file")
    p.add_argument("--seed", type=int)
    p.add_argument("--delay-ms", type=float, default=None,
                   help="override uplink delay")
    p.add_argument("--jitter-ms", type=float, default=None,
                   help="override uplink jitter")
    p.set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("can", help="inspect the command-to-frame pipeline")
    p.add_argument("action", choices=("dump",))
    p.add_argument("--steer-deg", type=float, default=0.0)
    p.add_argument("--accel", type=float, default=0.0)
    p.add_argument("--brake", type=float, default=0.0)
    p.add_argument("--turn-left", action="store_true")
    p.add_argument("--turn-right", action="store_true")
    p.add_argument("--brake-light", action="store_true")
    p.add_argument("--no-engage", action="store_true")
    p.set_defaults(fn=cmd_can)

    p = sub.add_parser("report", help="re-render reports from metrics.csv")
    p.add_argument("--metrics", required=True, help="path to metrics.csv")
    p.add_argument("--out")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--mean-threshold", type=float, default=None)
    p.add_argument("--max-threshold", type=float, default=None)
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("trials",
                       help="seeded cloud-edge vs cloud-centric comparison")
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--base-seed", type=int, default=1000)
    p.add_argument("--duration", type=float, default=10.0)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_trials)

    p = sub.add_parser("serve", help="host a live session for the cockpit")
    p.add_argument("--config", help="scenario YAML file")
    p.add_argument("--ws-host", default="127.0.0.1")
    p.add_argument("--ws-port", type=int, default=8765)
    p.add_argument("--duration", type=float, default=None, help="seconds")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--speed", type=float, default=1.0,
                   help="clock rate multiplier (1.0 = live)")
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_default_config:
        print(default_config_text())
        return 0
    if not getattr(args, "command", None):
        parser.print_help()
        return 2
    try:
        return args.fn(args)
    except (ValueError, RuntimeError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
