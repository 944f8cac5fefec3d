"""Command line entry point: ``obstaclelab {solve,chain,verify,sweep,selftest}``."""

from __future__ import annotations

import argparse
import logging
import os
import shutil
import sys
import tempfile

from .config import ConfigError, load_config
from .pipeline import RUNS, InvariantError, SolverFailure, StageFailure

log = logging.getLogger("obstaclelab")

EXIT_OK, EXIT_PARSE, EXIT_SOLVER, EXIT_INVARIANT = 0, 2, 3, 4


def build_parser():
    ap = argparse.ArgumentParser(prog="obstaclelab", description="Double obstacle problems with measure data.")
    ap.add_argument("subcommand", choices=sorted(RUNS))
    ap.add_argument("--config", default=None, help="TOML experiment file (shipped default when omitted)")
    ap.add_argument("--out", default="out", help="artifact directory")
    ap.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    ap.add_argument("--threads", type=int, default=None, help="numba thread count")
    return ap


def write_artifacts(files: dict, out_dir):
    """Write into a scratch directory beside ``out_dir`` and move the files in once all are written."""
    out_dir = os.path.abspath(out_dir)
    parent = os.path.dirname(out_dir)
    os.makedirs(parent, exist_ok=True)
    tmp = tempfile.mkdtemp(prefix=".obstaclelab-", dir=parent)
    try:
        for name, text in files.items():
            with open(os.path.join(tmp, name), "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        os.makedirs(out_dir, exist_ok=True)
        for name in sorted(files):
            os.replace(os.path.join(tmp, name), os.path.join(out_dir, name))
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


def run(subcommand, config_path=None, out_dir="out", seed=None, threads=None):
    """Run one subcommand; returns the exit status. Nothing is written on failure."""
    try:
        cfg = load_config(config_path)
        if seed is not None:
            if seed < 0:
                raise ConfigError("--seed must be non-negative")
            cfg.raw["seed"] = seed
            cfg.seed = seed
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_PARSE
    if threads is not None:
        import numba

        numba.set_num_threads(max(1, min(threads, numba.config.NUMBA_NUM_THREADS)))
    try:
        files = RUNS[subcommand](cfg)
    except StageFailure as exc:
        log.error("chain stage %s failed: %s", exc.stage, exc)
        return EXIT_SOLVER
    except SolverFailure as exc:
        log.error("solver failure: %s", exc)
        return EXIT_SOLVER
    except InvariantError as exc:
        log.error("invariant violated: %s", exc)
        return EXIT_INVARIANT
    except ValueError as exc:
        log.error("invalid input: %s", exc)
        return EXIT_PARSE
    write_artifacts(files, out_dir)
    for name in sorted(files):
        log.info("wrote %s", os.path.join(out_dir, name))
    return EXIT_OK


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    return run(args.subcommand, args.config, args.out, args.seed, args.threads)


if __name__ == "__main__":
    sys.exit(main())
