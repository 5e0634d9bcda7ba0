"""Command-line entry point: ``gridweaver <stage> --config <path>``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from gridweaver import __version__
from gridweaver.config import load_config
from gridweaver.errors import GridweaverError
from gridweaver.pipeline import STAGES, Pipeline

logger = logging.getLogger("gridweaver")

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gridweaver", description="Grid model builder and capacity-expansion LP.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for stage in STAGES + ("all",):
        sp = sub.add_parser(stage, help="run every stage in order" if stage == "all" else f"run the {stage} stage")
        sp.add_argument("--config", required=True, type=Path, help="pipeline YAML config")
        sp.add_argument("--force", action="store_true", help="rerun even when inputs are unchanged")
        sp.add_argument("--export-mps", type=Path, default=None, metavar="PATH",
                        help="write the expansion LP as free-format MPS (optimize stage)")
        sp.add_argument("-v", "--verbose", action="store_true")
    fx = sub.add_parser("fixture", help="write the synthetic two-country fixture")
    fx.add_argument("directory", type=Path)
    fx.add_argument("--buses", type=int, default=20)
    fx.add_argument("--hours", type=int, default=168)
    fx.add_argument("--k", type=int, default=4)
    fx.add_argument("--seed", type=int, default=7)
    fx.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.command == "fixture":
            from gridweaver.fixtures import make_fixture

            info = make_fixture(args.directory, n_buses=args.buses, hours=args.hours, seed=args.seed, k=args.k)
            logger.info("fixture written; config at %s", info.config_path)
            return EXIT_OK
        pipe = Pipeline(load_config(args.config))
        stages = STAGES if args.command == "all" else (args.command,)
        for stage in stages:
            res = pipe.run_stage(stage, force=args.force, export_mps=args.export_mps)
            logger.info("%s: %s", stage, res.status)
        return EXIT_OK
    except GridweaverError as exc:
        logger.error("%s", exc)
        return EXIT_USER
    except Exception:  # noqa: BLE001 - last-resort handler maps to the internal-error exit code
        logger.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
