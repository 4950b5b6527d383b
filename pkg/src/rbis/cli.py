"""Command-line entry point: ``rbis <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, bench_from, load_config, servo_from, sim_config_from
from .live import HostClock, LiveConfig, MasterDaemon, SlaveDaemon
from .report import SETTLE_ROWS, analyze_trace
from .simnet import DEFAULT_BEACON_INTERVAL_NS, rtt_bench, run_simulation
from .stats import format_table_row
from .trace import TraceFormatError, write_trace

log = logging.getLogger("rbis")


def _default_trace_path(config_path: Path) -> Path:
    return config_path.with_suffix(".trace.csv")


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    sim = sim_config_from(cfg)
    result = run_simulation(sim)
    out = Path(args.output) if args.output else _default_trace_path(Path(args.config))
    write_trace(result.trace, out)
    a = result.accounting
    print(f"trace: {out}")
    print(
        f"beacons={a.beacons} tuples={a.tuples} sync_drops={a.sync_drops} "
        f"followup_losses={a.followup_losses} expiries={a.expiries} discards={a.discards}"
    )
    if result.trace:
        last = result.trace[-1]
        print(f"final offset={last.offset_ns} ns window_skew={last.window_skew_ppm:.6f} ppm "
              f"servo={last.servo_phase}")
    return 0


def cmd_analyze(args) -> int:
    report = analyze_trace(args.trace, settle_rows=args.settle_rows)
    if args.json:
        from dataclasses import asdict

        print(json.dumps(asdict(report), indent=2, default=str))
    else:
        sys.stdout.write(report.render())
    return 0


def cmd_bench(args) -> int:
    cfg = load_config(args.config)
    channel, probes, seed = bench_from(cfg)
    res = rtt_bench(channel, probes, seed)
    print(f"channel: {channel.distribution.value} mean={channel.mean_delay_ns} ns "
          f"sigma={channel.sigma_ns} ns drop={channel.drop_prob} floor={channel.min_delay_ns} ns")
    print(f"probes: {probes} lost: {res.lost}")
    if res.stats is None:
        print("not enough replies for statistics")
        return 0
    label = cfg.get("bench_preset", "custom")
    print(format_table_row(label, res.stats.scaled(1e-6), unit="ms"))
    return 0


def _live_config(path) -> LiveConfig:
    cfg = load_config(path)
    d = LiveConfig()
    return LiveConfig(
        sync_port=cfg.get("sync_port", d.sync_port),
        followup_port=cfg.get("followup_port"),
        broadcast_address=cfg.get("broadcast_address", d.broadcast_address),
        followup_address=cfg.get("followup_address"),
        bind_address=cfg.get("bind_address", d.bind_address),
        beacon_interval_ns=round(cfg.get("beacon_interval_ms", DEFAULT_BEACON_INTERVAL_NS / 1e6) * 1e6),
        follow_up_every=cfg.get("follow_up_every", d.follow_up_every),
        timestamp_source=cfg.get("timestamp_source", d.timestamp_source),
        beacon_count=cfg.get("beacon_count", 0),
        duration_s=cfg.get("live_duration_s", 0.0),
        servo=servo_from(cfg),
        servo_enabled=cfg.get("servo_enabled", d.servo_enabled),
        estimator_window=cfg.get("estimator_window", d.estimator_window),
        pairing_timeout_ns=round(cfg.get("pairing_timeout_ms", d.pairing_timeout_ns / 1e6) * 1e6),
        pending_capacity=cfg.get("pending_capacity", d.pending_capacity),
    )


def cmd_master(args) -> int:
    daemon = MasterDaemon(_live_config(args.config))
    try:
        sent = daemon.run()
    except KeyboardInterrupt:
        sent = daemon.sent
    log.info("sent %d SYNCs", sent)
    return 0


def cmd_slave(args) -> int:
    live = _live_config(args.config)
    timebase = HostClock(live.servo.max_freq_ppb) if args.steer_host_clock else None
    daemon = SlaveDaemon(live, timebase=timebase)
    try:
        records = daemon.run()
    except KeyboardInterrupt:
        records = daemon.records
    if args.trace:
        write_trace(records, args.trace)
    log.info("paired %d tuples", len(records))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rbis", description="Reference broadcast clock synchronization")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", metavar="command")
    sub.required = True

    s = sub.add_parser("simulate", help="run a simulated master/slave experiment")
    s.add_argument("config")
    s.add_argument("-o", "--output", help="trace CSV path (default: <config>.trace.csv)")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("analyze", help="summarise a trace CSV")
    s.add_argument("trace")
    s.add_argument("--json", action="store_true")
    s.add_argument("--settle-rows", type=int, default=SETTLE_ROWS,
                   help="rows skipped before window-skew statistics")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("bench-channel", help="simulated RTT probe statistics for one channel")
    s.add_argument("config")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("master", help="run the live UDP master")
    s.add_argument("config")
    s.set_defaults(func=cmd_master)

    s = sub.add_parser("slave", help="run the live UDP slave")
    s.add_argument("config")
    s.add_argument("--trace", help="write received tuples to this CSV on exit")
    s.add_argument("--steer-host-clock", action="store_true",
                   help="apply servo output to CLOCK_REALTIME (root only)")
    s.set_defaults(func=cmd_slave)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ConfigError, TraceFormatError, PermissionError, OSError, ValueError) as exc:
        print(f"rbis: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
