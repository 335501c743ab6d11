"""Command line entry point: ``otlab run|plot|selftest|render``.

Exit statuses: 0 ok, 1 a check failed, 2 usage or configuration error,
3 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .config import ExperimentConfig, thread_count
from .errors import OTLabError
from .experiments import PointResult, Row, get_experiment
from .plot import plot_csv, render_grid
from .selftest import SUITES, run_suites

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_IO = 3

USAGE_CODES = frozenset(
    {"bad-config", "unknown-experiment", "unknown-generator", "unknown-profile", "missing-column"}
)


def format_value(value: Any) -> str:
    """CSV text for one cell; floats round-trip through ``.17g``."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def write_table(path: Path, rows: Sequence[Row]) -> None:
    """Columns in first-seen order; cells a row lacks stay empty."""
    columns: list[str] = []
    for row in rows:
        columns.extend(k for k in row if k not in columns)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_value(row.get(c)) for c in columns])


def run(config_path: str | Path) -> int:
    """Run one experiment config and write its artifacts and MANIFEST."""
    try:
        cfg = ExperimentConfig.load(config_path)
        experiment = get_experiment(cfg.name)
        points = list(experiment.sweep(cfg))
    except OTLabError as exc:
        print(f"otlab: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"otlab: cannot read {config_path}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO

    logger.info("%s: %d sweep points on %d threads", cfg.name, len(points), thread_count())
    try:
        with ThreadPoolExecutor(max_workers=thread_count()) as pool:
            results = list(pool.map(lambda point: experiment.run(cfg, point), points))
        total = PointResult()
        for res in results:
            total.merge(res)
        if experiment.finish is not None:
            total.merge(experiment.finish(cfg, results))
    except OTLabError as exc:
        print(f"otlab: {exc}", file=sys.stderr)
        return EXIT_USAGE if exc.code in USAGE_CODES else EXIT_CHECK_FAILED
    except Exception as exc:
        logger.debug("experiment %s raised", cfg.name, exc_info=True)
        print(f"otlab: {cfg.name} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED

    try:
        cfg.output.mkdir(parents=True, exist_ok=True)
        artifacts = [f"{cfg.name}.csv"]
        write_table(cfg.output / artifacts[0], total.rows)
        if total.summary:
            artifacts.append(f"{cfg.name}_summary.csv")
            write_table(cfg.output / artifacts[-1], [{"key": k, "value": v} for k, v in total.summary.items()])
        for name, writer in total.writers.items():
            writer(cfg.output / name)
            artifacts.append(name)
        manifest = [f"experiment {cfg.name}", f"seed {cfg.seed}", f"config_sha256 {cfg.digest}"]
        manifest.extend(f"artifact {a}" for a in artifacts)
        (cfg.output / "MANIFEST").write_text("\n".join(manifest) + "\n", encoding="utf-8")
    except OSError as exc:
        print(f"otlab: cannot write to {cfg.output}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO

    if total.failures:
        for failure in total.failures:
            print(f"FAIL {failure}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


def _plot(args: argparse.Namespace) -> int:
    out = Path(args.out) if args.out else Path(args.csv).with_suffix(".svg")
    try:
        plot_csv(args.csv, args.x, args.y, out, log=args.log)
    except OTLabError as exc:
        print(f"otlab: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"otlab: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def _selftest(args: argparse.Namespace) -> int:
    try:
        checks = run_suites(args.suite, quick=args.quick)
    except OTLabError as exc:
        print(f"otlab: {exc}", file=sys.stderr)
        return EXIT_USAGE
    for check in checks:
        print(check.line())
    return EXIT_OK if all(c.passed for c in checks) else EXIT_CHECK_FAILED


def _render(args: argparse.Namespace) -> int:
    out = Path(args.out) if args.out else Path(args.grid).with_suffix(".png")
    try:
        render_grid(args.grid, out, args.colormap)
    except OTLabError as exc:
        print(f"otlab: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"otlab: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="otlab", description="Wasserstein contraction under convolution.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config")

    p_plot = sub.add_parser("plot", help="line plot of CSV columns as SVG")
    p_plot.add_argument("csv")
    p_plot.add_argument("--x", required=True)
    p_plot.add_argument("--y", required=True, action="append")
    p_plot.add_argument("--log", action="store_true", help="log-log axes with fitted slopes")
    p_plot.add_argument("--out")

    p_self = sub.add_parser("selftest", help="run the invariant suites")
    p_self.add_argument("--quick", action="store_true")
    p_self.add_argument("--suite", action="append", choices=sorted(SUITES))

    p_render = sub.add_parser("render", help="PNG heatmap of a grid file")
    p_render.add_argument("grid")
    p_render.add_argument("--out")
    p_render.add_argument("--colormap", default="heat")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return run(args.config)
        if args.command == "plot":
            return _plot(args)
        if args.command == "selftest":
            return _selftest(args)
        return _render(args)
    except Exception as exc:
        logger.debug("%s raised", args.command, exc_info=True)
        print(f"otlab: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
