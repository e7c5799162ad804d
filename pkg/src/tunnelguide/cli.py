"""Command line: ``tunnelguide run | explain | cache``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import os
import sys

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tunnelguide", description="Resonant tunneling through a waveguide with two narrows.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in (("run", "compute coefficients and emit artifacts"),
                       ("explain", "print the resolved configuration, stage plan and regime warnings")):
        s = sub.add_parser(name, help=text)
        s.add_argument("--config", required=True, help="JSON configuration file")
        s.add_argument("--mode", choices=["coefficients", "asymptotics", "direct", "full", "ladder"],
                       help="override the configured mode")
        s.add_argument("--out", help="output directory (overrides the configuration)")
        s.add_argument("--cache-dir", help="coefficient cache directory (overrides the configuration)")
        if name == "run":
            s.add_argument("--threads", type=int, default=1, help="independent coefficient stages run concurrently")
    c = sub.add_parser("cache", help="inspect or clear the coefficient cache")
    c.add_argument("action", choices=["ls", "rm"])
    c.add_argument("key", nargs="?", help="record key or unique prefix (rm); omit with --all")
    c.add_argument("--all", action="store_true", help="remove every record (rm)")
    c.add_argument("--cache-dir", default=".tunnelguide-cache")
    return p


def _config(args):
    from dataclasses import replace

    from .pipeline import load_config
    cfg = load_config(args.config).with_mode(args.mode, args.out)
    if args.cache_dir:
        cfg = replace(cfg, cache_dir=args.cache_dir)
    return cfg


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    from .pipeline import CoefficientCache, ConfigError, StageError, explain, run

    if args.command == "cache":
        cache = CoefficientCache(args.cache_dir)
        if args.action == "ls":
            for e in cache.entries():
                print(f"{e['key']}  {e['stage']:10s} v{e['version']}  {e['bytes']} bytes")
            return EXIT_OK
        if args.key is None and not args.all:
            print("cache rm: give a key or --all", file=sys.stderr)
            return EXIT_CONFIG
        try:
            n = cache.remove(None if args.all else args.key)
        except KeyError as exc:
            print(f"cache rm: {exc.args[0]}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"removed {n} record(s)")
        return EXIT_OK

    try:
        cfg = _config(args)
    except ConfigError as exc:
        print("configuration error:", file=sys.stderr)
        for e in exc.errors:
            print(f"  {e}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "explain":
        sys.stdout.write(explain(cfg))
        return EXIT_OK

    if args.threads > 1:
        os.environ.setdefault("OMP_NUM_THREADS", "1")
    try:
        summary = run(cfg, threads=args.threads)
    except StageError as exc:
        print(f"numerical failure in module {exc}", file=sys.stderr)
        print(f"partial artifacts in {cfg.output} (summary.json status=partial)", file=sys.stderr)
        return EXIT_NUMERIC
    for w in summary.get("warnings", []):
        print(f"warning: {w}", file=sys.stderr)
    print(f"wrote {cfg.output}/summary.json and {cfg.output}/report.txt")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
