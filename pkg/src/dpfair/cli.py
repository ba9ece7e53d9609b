"""Command-line entry points: run, report, calibrate, curves.

Exit codes: 0 success, 1 config error, 2 sweep finished with failed cells,
3 unexpected fatal error.
"""

from __future__ import annotations

import argparse
import sys

from .accounting import CalibrationError, calibrate_sigma
from .experiment import (
    ConfigError,
    aggregate_reports,
    curves_to_json,
    emit_disparity_curves,
    emit_table,
    load_config,
    load_reports,
    load_summary,
    run_sweep,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PARTIAL = 2
EXIT_FATAL = 3


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    summary = run_sweep(cfg)
    print(emit_table(summary, format=args.format), end="")
    return EXIT_PARTIAL if summary.has_failures else EXIT_OK


def _cmd_report(args) -> int:
    try:
        summary = load_summary(args.output_dir)
    except FileNotFoundError:
        raise ConfigError(f"{args.output_dir}: no summary.json found") from None
    reports = load_reports(args.output_dir)
    rebuilt = aggregate_reports(
        reports,
        summary.config_fingerprint,
        summary.metric_kind,
        cell_order=[(c.objective, c.privacy_label, c.tau) for c in summary.cells],
        failures={
            (c.objective, c.privacy_label, c.tau): c.error
            for c in summary.cells
            if c.error
        },
    )
    print(emit_table(rebuilt, format=args.format), end="")
    return EXIT_PARTIAL if rebuilt.has_failures else EXIT_OK


def _cmd_calibrate(args) -> int:
    try:
        sigma = calibrate_sigma(args.epsilon, args.delta, args.sampling_rate, args.steps)
    except (CalibrationError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    print(f"sigma = {sigma:.6g}")
    return EXIT_OK


def _cmd_curves(args) -> int:
    try:
        summaries = [load_summary(d) for d in args.output_dirs]
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from None
    series = emit_disparity_curves(summaries)
    print(curves_to_json(series))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpfair",
        description="Private and group-robust training sweeps with disparity reports",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a sweep from a YAML config")
    p_run.add_argument("config")
    p_run.add_argument("--format", choices=["text", "json"], default="text")
    p_run.set_defaults(fn=_cmd_run)

    p_rep = sub.add_parser("report", help="re-emit tables from persisted artifacts")
    p_rep.add_argument("output_dir")
    p_rep.add_argument("--format", choices=["text", "json"], default="text")
    p_rep.set_defaults(fn=_cmd_report)

    p_cal = sub.add_parser("calibrate", help="print the noise scale for a target epsilon")
    p_cal.add_argument("--epsilon", type=float, required=True)
    p_cal.add_argument("--delta", type=float, default=1e-5)
    p_cal.add_argument("--sampling-rate", type=float, required=True)
    p_cal.add_argument("--steps", type=int, required=True)
    p_cal.set_defaults(fn=_cmd_calibrate)

    p_cur = sub.add_parser("curves", help="emit disparity-vs-tau series from sweeps")
    p_cur.add_argument("output_dirs", nargs="+")
    p_cur.set_defaults(fn=_cmd_curves)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # pragma: no cover - defensive
        print(f"fatal: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
