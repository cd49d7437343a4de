"""``testbed`` command: generate labelled captures."""

from __future__ import annotations

import argparse
import json
import sys

from .sim import simulate
from .topology import default_config


def _gen(args) -> int:
    scenarios = [None] if args.scenario is None else args.scenario
    for sid in scenarios:
        if sid is not None and not 1 <= sid <= 15:
            print(f"error: scenario must be 1-15, got {sid}", file=sys.stderr)
            return 2
    if args.duration <= 0:
        print("error: --duration must be positive", file=sys.stderr)
        return 2
    for sid in scenarios:
        res = simulate(args.duration, args.seed, sid)
        pcap, man = res.write(args.out)
        print(f"{pcap} ({len(res.frames)} frames), {man}")
    return 0


def _config(args) -> int:
    from ..service.config import dump_yaml

    text = dump_yaml(default_config())
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def _manifest(args) -> int:
    from .sim import EPOCH
    from .scenarios import manifest_for

    m = manifest_for(args.scenario, args.seed, args.duration, EPOCH)
    print(json.dumps(m.to_dict(), indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="testbed", description="Substation traffic generator")
    sub = p.add_subparsers(dest="cmd", required=True)
    g = sub.add_parser("gen", help="write a capture and its ground-truth manifest")
    g.add_argument("--duration", type=float, default=300.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--scenario", type=int, action="append",
                   help="attack scenario 1-15 (repeatable); omit for normal traffic")
    g.add_argument("--out", default=".")
    g.set_defaults(func=_gen)
    c = sub.add_parser("config", help="print the engine configuration matching the testbed")
    c.add_argument("--out")
    c.set_defaults(func=_config)
    m = sub.add_parser("manifest", help="print the expectations for a scenario")
    m.add_argument("--scenario", type=int, required=True)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--duration", type=float, default=300.0)
    m.set_defaults(func=_manifest)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
