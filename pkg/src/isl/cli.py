"""Command line entry point: run, sweep and report over experiment configs.

Exit codes: 0 on success (including runs whose record says FAIL; the
record is the product), 2 for config or filesystem errors, 1 for
anything unexpected.
"""

from __future__ import annotations

import argparse
import sys

from .experiments import KEY_METRICS, ConfigError, report, run, sweep

__all__ = ["build_parser", "main"]


def _parse_values(text: str) -> list[float]:
    items = [chunk.strip() for chunk in text.split(",")]
    try:
        return [float(chunk) for chunk in items if chunk]
    except ValueError as exc:
        raise ConfigError(f"bad --values entry: {exc}") from exc


def _describe(record) -> str:
    status = "pass" if record.passed else "FAIL"
    metric = record.key_metric()
    shown = "n/a" if metric is None else f"{metric:.6g}"
    line = (
        f"{record.experiment}: {status}  "
        f"{KEY_METRICS[record.experiment]}={shown}  "
        f"wall={record.wall_clock:.1f}s"
    )
    if record.failure:
        line += f"  ({record.failure})"
    return line


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="isl",
        description="run scattering experiments from JSON configs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one config, write record.json + CSVs")
    p_run.add_argument("config", help="path to a JSON experiment config")
    p_run.add_argument("--out", default=None, help="output directory (overrides config)")
    p_run.add_argument("--workers", type=int, default=None, help="worker pool size")

    p_sweep = sub.add_parser("sweep", help="map one config over a numeric axis")
    p_sweep.add_argument("config", help="path to a JSON experiment config")
    p_sweep.add_argument("--axis", required=True, help="axis name, e.g. v, alpha, eps, lam")
    p_sweep.add_argument("--values", required=True, help="comma-separated numbers")
    p_sweep.add_argument("--out", default=None, help="output directory (overrides config)")
    p_sweep.add_argument("--workers", type=int, default=None, help="worker pool size")

    p_report = sub.add_parser("report", help="summarize record.json files under a directory")
    p_report.add_argument("records_dir", help="directory to scan recursively")
    p_report.add_argument("--out", default=None, help="where to write report.md/json")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            record = run(args.config, out=args.out, workers=args.workers)
            print(_describe(record))
        elif args.command == "sweep":
            records = sweep(
                args.config,
                args.axis,
                _parse_values(args.values),
                out=args.out,
                workers=args.workers,
            )
            for record in records:
                print(_describe(record))
            print(f"{len(records)} sweep item(s) finished")
        else:
            path = report(args.records_dir, out=args.out)
            print(f"report written to {path}")
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"isl: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # unexpected; keep the message, drop the traceback
        print(f"isl: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
