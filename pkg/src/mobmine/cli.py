"""Command-line entry point: ``mobmine <subcommand> --out DIR [flags]``.

Exit status: 0 ok, 1 runtime error, 2 usage error, 3 privacy gate.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import __version__
from . import config as config_mod
from . import pipeline as pl
from .errors import MobmineError, PrivacyGateError

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_PRIVACY = 0, 1, 2, 3


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _non_negative_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", required=True, help="workspace directory for stage outputs")
    common.add_argument("--config", help="pipeline config file (sectioned key=value)")
    common.add_argument("--seed", type=_non_negative_int, help="global random seed")
    common.add_argument("--threads", type=_positive_int, help="worker cap for parallel stages")
    common.add_argument("--zones", help="zones.csv mapping cell to zone (default: Location Areas)")
    common.add_argument("--salt-file", help="pseudonymization salt; falls back to $MOBMINE_SALT")
    common.add_argument("-v", "--verbose", action="store_true")

    sim = argparse.ArgumentParser(add_help=False)
    sim.add_argument("--agents", type=_positive_int, help="number of simulated subscribers")
    sim.add_argument("--days", type=_positive_int, help="simulated days")
    sim.add_argument("--paging-interval", type=_positive_int, help="periodic paging interval in seconds")

    mine = argparse.ArgumentParser(add_help=False)
    mine.add_argument("--dwell-secs", type=_non_negative_int, help="minimum station dwell in seconds")

    kanon = argparse.ArgumentParser(add_help=False)
    kanon.add_argument("--k", type=_positive_int, help="anonymity threshold")
    kanon.add_argument("--window", type=_positive_int, help="window length L")

    od = argparse.ArgumentParser(add_help=False)
    od.add_argument("--bucketing", type=_positive_int, help="O-D time bucket in seconds")

    parser = argparse.ArgumentParser(prog="mobmine", description="Mobility mining on cellular network events")
    parser.add_argument("--version", action="version", version=f"mobmine {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-net", parents=[common], help="generate a synthetic cell network")
    sub.add_parser("simulate", parents=[common, sim], help="simulate subscribers and their network events")
    p = sub.add_parser("ingest", parents=[common], help="parse inputs and pseudonymize")
    p.add_argument("--events", help="events.csv (default: workspace sim/events.csv)")
    p.add_argument("--cells", help="cells.csv (default: workspace net/cells.csv)")
    p.add_argument("--demographics", help="demographics.csv (default: workspace sim/demographics.csv)")
    p = sub.add_parser("mine", parents=[common, mine], help="stations, paths, bundles and common routes")
    p.add_argument("--source", choices=["paths", "anon"], default="paths",
                   help="cluster raw paths or published windows")
    sub.add_parser("anonymize", parents=[common, kanon], help="k-anonymous windows and demographic classes")
    sub.add_parser("od", parents=[common, kanon, od], help="origin-destination matrices")
    sub.add_parser("attack", parents=[common, kanon], help="linkability attack and k-anonymity scan")
    p = sub.add_parser("pipeline", parents=[common, sim, mine, kanon, od], help="run every stage")
    p.add_argument("--order", choices=["mine-first", "anonymize-first"], help="route mining before or after anonymization")
    return parser


def config_from_args(args) -> config_mod.PipelineConfig:
    cfg = config_mod.load(args.config) if args.config else config_mod.PipelineConfig()
    flags = [
        ("run", "seed", "seed"), ("run", "threads", "threads"), ("run", "zones", "zones"),
        ("run", "order", "order"), ("population", "n_agents", "agents"), ("sim", "days", "days"),
        ("sim", "paging_interval_s", "paging_interval"), ("timegeo", "dwell_min_s", "dwell_secs"),
        ("kanon", "k", "k"), ("kanon", "L", "window"), ("od", "bucket_s", "bucketing"),
    ]
    for section, key, attr in flags:
        value = getattr(args, attr, None)
        if value is not None:
            cfg.update(section, **{key: value})
    if args.seed is not None:
        cfg.update("routes", seed=args.seed)
    return cfg.validate()


def _run(args) -> str:
    cfg = config_from_args(args)
    ws = pl.Workspace(args.out)
    ws.root.mkdir(parents=True, exist_ok=True)
    cmd = args.command
    if cmd == "gen-net":
        rec = pl.stage_gen_net(ws, cfg)
    elif cmd == "simulate":
        rec = pl.stage_simulate(ws, cfg)
    elif cmd == "ingest":
        salt, source = pl.resolve_salt(args.salt_file)
        rec = pl.stage_ingest(ws, cfg, salt, source, args.events, args.cells, args.demographics).record
    elif cmd == "mine":
        if args.source == "paths":
            pl.stage_timegeo(ws, cfg, args.salt_file)
        rec = pl.stage_routes(ws, cfg, args.salt_file, source=args.source)
    elif cmd == "anonymize":
        rec = pl.stage_anonymize(ws, cfg, args.salt_file)
    elif cmd == "od":
        rec = pl.stage_od(ws, cfg, args.salt_file)
    elif cmd == "attack":
        rec = pl.stage_attack(ws, cfg, args.salt_file)
    else:
        salt, source = pl.resolve_salt(args.salt_file, seed=cfg.run.seed)
        config_mod.dump(cfg, ws.root / "pipeline.ini")
        records = pl.run_pipeline(cfg, ws.root, salt, source, args.salt_file)
        return f"pipeline: {len(records)} stages, manifest {ws.rel(ws.manifest)}"
    return f"{rec.stage}: " + json.dumps(sorted(rec.outputs))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        print(_run(args))
    except PrivacyGateError as exc:
        print(f"mobmine: privacy gate: {exc}", file=sys.stderr)
        return EXIT_PRIVACY
    except (MobmineError, OSError) as exc:
        print(f"mobmine: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
