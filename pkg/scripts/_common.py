"""Helpers shared by the scripts in this directory."""

import argparse
import logging
from pathlib import Path

from priorci.config import load_settings

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def parser(description: str, config: str, out: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--config", default=str(CONFIGS / config), help="settings file (default: %(default)s)")
    p.add_argument("--out", default=out, help="output directory (default: %(default)s)")
    p.add_argument("--workers", type=int, default=None, help="worker processes")
    p.add_argument("--M", type=int, default=None, help="runs per grid point, overrides the config")
    p.add_argument("--plot", action="store_true", help="also write a PNG (needs matplotlib)")
    return p


def settings_from(args, **extra):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    over = dict(extra)
    if args.M is not None:
        over["sim_M"] = args.M
    if args.workers is not None:
        over["sim_workers"] = args.workers
    return load_settings(args.config, **over)
