"""``engine`` command: run the monitor or benchmark it on a capture."""

from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
import threading

from ..capture import CaptureSpec, PcapError
from .bus import Bus
from .config import ConfigError, load_config

log = logging.getLogger("tagmon")


def _run(args) -> int:
    cfg = load_config(args.config)
    if args.pcap and args.iface:
        print("error: --pcap and --iface are exclusive", file=sys.stderr)
        return 2
    if args.pcap or args.iface:
        cfg.capture = CaptureSpec(pcap=args.pcap, iface=args.iface)
    if cfg.capture is None:
        print("error: no capture source (use --pcap or --iface, or set capture in the config)",
              file=sys.stderr)
        return 2
    from .engine import Engine

    bus = Bus(cfg.stream.buffer)
    engine = Engine(cfg, bus=bus)
    servers = []
    if args.serve or cfg.capture.iface:
        from .api import serve
        from .stream import StreamServer

        servers.append(serve(engine, cfg.api_host, cfg.api_port))
        ss = StreamServer(bus, cfg.stream.host, cfg.stream.port)
        ss.start()
        servers.append(ss)
        if cfg.stream.mqtt_host:
            from .stream import MqttBridge

            servers.append(MqttBridge(bus, cfg.stream.mqtt_host, cfg.stream.mqtt_port,
                                      cfg.stream.mqtt_prefix))
    stop = threading.Event()
    signal.signal(signal.SIGINT, lambda *_: stop.set())
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    try:
        source = engine.open()
    except PcapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        engine.run_source(source, realtime=args.realtime, stop=stop)
    except PermissionError as exc:
        print(f"error: live capture needs CAP_NET_RAW: {exc}", file=sys.stderr)
        return 1
    summary = engine.summary()
    if args.events:
        with open(args.events, "w") as fh:
            for ev in engine.events:
                fh.write(json.dumps(ev.to_dict()) + "\n")
    if args.snapshot:
        with open(args.snapshot, "w") as fh:
            json.dump(engine.snapshot(), fh, indent=2)
    print(json.dumps(summary, indent=2))
    if args.serve and not stop.is_set():
        print(f"serving API on {cfg.api_host}:{cfg.api_port}; Ctrl-C to exit", file=sys.stderr)
        stop.wait()
    for s in servers:
        stop_fn = getattr(s, "stop", None) or getattr(s, "handle_exit", None)
        if hasattr(s, "should_exit"):
            s.should_exit = True
        elif stop_fn:
            stop_fn()
    return 0


def _bench(args) -> int:
    from .bench import bench, format_report

    cfg = load_config(args.config)
    try:
        rep = bench(args.pcap, cfg)
    except (PcapError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.json:
        print(json.dumps(rep, indent=2))
    else:
        print(format_report(rep))
    return 0


def _check(args) -> int:
    cfg = load_config(args.config)
    print(f"{args.config}: {len(cfg.rules)} raw tags, {len(cfg.computed)} computed tags, "
          f"{len(cfg.conditions)} conditions")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="engine", description="Semantic-tag anomaly monitor")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="monitor a capture file or interface")
    r.add_argument("--config", required=True)
    r.add_argument("--pcap")
    r.add_argument("--iface")
    r.add_argument("--realtime", action="store_true", help="pace file replay at capture speed")
    r.add_argument("--serve", action="store_true",
                   help="start the REST API and event feed (always on in live mode)")
    r.add_argument("--events", help="write anomaly events as JSON lines to this file")
    r.add_argument("--snapshot", help="write the final graph snapshot to this file")
    r.set_defaults(func=_run)

    b = sub.add_parser("bench", help="time the pipeline on a capture file")
    b.add_argument("--config", required=True)
    b.add_argument("--pcap", required=True)
    b.add_argument("--json", action="store_true")
    b.set_defaults(func=_bench)

    c = sub.add_parser("check", help="validate a configuration file")
    c.add_argument("--config", required=True)
    c.set_defaults(func=_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
