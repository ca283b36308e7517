"""Command line entry point: ``nesht {run,sweep,theory-check,variance-probe} CONFIG``.

Exit codes: 0 success, 2 configuration error (nothing written), 3 runtime
failure (artifacts of the completed runs are kept), 4 theory-check failure.
Errors are reported on stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .config import MODES, ConfigError, load_config
from .registry import build_problem
from .runner import execute, run_specs

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_THEORY = 0, 2, 3, 4


def _error(kind: str, message: str, **extra) -> None:
    payload = {"error": kind, "message": message}
    payload.update(extra)
    print(json.dumps(payload, sort_keys=True, default=str), file=sys.stderr)


def _seed_list(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers: {text!r}") from exc
    return seeds


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nesht", description="NES with hard thresholding: experiment runner")
    ap.add_argument("mode", choices=MODES)
    ap.add_argument("config", help="path to the JSON experiment config")
    ap.add_argument("--seed-override", type=_seed_list, metavar="S1,S2,...",
                    help="replace the config's seed list")
    ap.add_argument("--workers", type=int, default=1, metavar="N", help="total thread cap (default 1)")
    ap.add_argument("--out", metavar="DIR", help="output directory (default: $NESHT_OUT, then config)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _resolve_out(args, cfg) -> Path:
    out = args.out or os.environ.get("NESHT_OUT") or cfg.output_dir
    if not out:
        raise ConfigError("no output directory: pass --out, set NESHT_OUT or add output_dir to the config")
    return Path(out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.workers < 1:
            raise ConfigError(f"--workers must be >= 1, got {args.workers}")
        cfg = load_config(args.config)
        if cfg.mode != args.mode:
            raise ConfigError(f"config declares mode {cfg.mode!r} but the command was {args.mode!r}")
        if args.seed_override is not None:
            cfg = cfg.with_seeds(args.seed_override)
        out = _resolve_out(args, cfg)
        try:
            problem = build_problem(cfg.problem)
            if cfg.mode in ("run", "sweep"):
                run_specs(cfg, problem.dim)
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc
    except ConfigError as exc:
        _error("config", str(exc))
        return EXIT_CONFIG

    try:
        outcome = execute(cfg, out, workers=args.workers)
    except Exception as exc:
        _error("runtime", f"{type(exc).__name__}: {exc}")
        return EXIT_RUNTIME

    if cfg.mode == "theory-check":
        for r in outcome.table:
            print(f"{r.check:22s} {r.status:7s} measured={r.measured} bound={r.bound} se={r.se}")
        if outcome.failures:
            _error("theory-check", "one or more checks failed", failures=outcome.failures)
            return EXIT_THEORY
        return EXIT_OK
    if outcome.failures:
        _error("runtime", "one or more runs failed", failures=outcome.failures)
        return EXIT_RUNTIME
    print(f"wrote {out}")
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
