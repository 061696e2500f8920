"""Command-line runner: ``ebosal run | ablate | sweep``.

Every output lands under ``--out``: per-run CSVs in ``runs/``, an
``aggregate.csv``, whitespace ``.dat`` files for plotting, the resolved
``config.yaml`` and a ``manifest.txt`` listing what was written. A failed
command leaves its partial outputs plus a ``.partial`` marker.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path
from typing import Sequence

from .alcycle import METHODS
from .config import (
    ExperimentConfig,
    ExperimentResult,
    SweepConfig,
    dump_config,
    parse_config,
    run_experiment,
    run_sweep,
)
from .datagen import ConfigError
from .metrics import AggregateRow, final_rows, write_aggregate_csv, write_csv, write_dat

log = logging.getLogger("ebosal")

ABLATION_METHODS = ("ebosal", "no_ekus", "no_ess", "random", "entropy")
DAT_METRICS = {
    "accuracy": "test_accuracy",
    "precision": "query_precision_cumulative",
    "auroc": "energy_auroc",
}
PARTIAL_MARKER = ".partial"
MANIFEST = "manifest.txt"


class OutputDir:
    """Tracks files written under one output directory."""

    def __init__(self, root: Path, force: bool):
        self.root = root
        if root.exists() and not root.is_dir():
            raise ConfigError(f"--out {root} exists and is not a directory")
        if root.exists() and any(root.iterdir()) and not force:
            raise ConfigError(f"output directory {root} is not empty (use --force to overwrite)")
        root.mkdir(parents=True, exist_ok=True)
        (root / PARTIAL_MARKER).write_text("incomplete: command did not finish\n")
        self.files: list[str] = []

    def path(self, rel: str) -> Path:
        p = self.root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        self.files.append(rel)
        return p

    def finish(self, cfg: ExperimentConfig) -> None:
        self.path("config.yaml").write_text(dump_config(cfg))
        lines = sorted(set(self.files) | {MANIFEST})
        (self.root / MANIFEST).write_text("\n".join(lines) + "\n")
        (self.root / PARTIAL_MARKER).unlink()


def _write_experiment(out: OutputDir, result: ExperimentResult, prefix: str = "") -> None:
    for run in result.runs:
        write_csv(run.reports, out.path(f"{prefix}runs/{run.method}_seed{run.seed_index}.csv"))
    write_aggregate_csv(result.aggregate, out.path(f"{prefix}aggregate.csv"))
    for name, metric in DAT_METRICS.items():
        write_dat(result.aggregate, metric, out.path(f"{prefix}{name}.dat"))


def _fmt(v: float) -> str:
    return "nan" if math.isnan(v) else f"{v:.4f}"


def summary_line(row: AggregateRow) -> str:
    m = row.mean
    return (
        f"{row.method:<8s} cycle {row.cycle}  accuracy {_fmt(m['test_accuracy'])}  "
        f"precision {_fmt(m['query_precision_cumulative'])}  auroc {_fmt(m['energy_auroc'])}  "
        f"(n={row.n_seeds})"
    )


def cmd_run(cfg: ExperimentConfig, force: bool = False) -> int:
    out = OutputDir(Path(cfg.out), force)
    result = run_experiment(cfg, on_result=lambda r: log.info("finished %s seed %d", r.method, r.seed_index))
    _write_experiment(out, result)
    finals = final_rows(result.aggregate)
    for method in cfg.methods:
        print(summary_line(finals[method]))
    out.finish(cfg)
    return 0


def ablation_table(result: ExperimentResult) -> str:
    finals = final_rows(result.aggregate)
    header = "method   cycle  accuracy_mean accuracy_sd precision_mean precision_sd auroc_mean"
    lines = [header]
    for method in sorted(finals):
        r = finals[method]
        lines.append(
            f"{method:<8s} {r.cycle:>5d}  {_fmt(r.mean['test_accuracy']):>13s} {_fmt(r.sd['test_accuracy']):>11s} "
            f"{_fmt(r.mean['query_precision_cumulative']):>14s} {_fmt(r.sd['query_precision_cumulative']):>12s} "
            f"{_fmt(r.mean['energy_auroc']):>10s}"
        )
    return "\n".join(lines) + "\n"


def cmd_ablate(cfg: ExperimentConfig, force: bool = False) -> int:
    from dataclasses import replace

    cfg = replace(cfg, methods=list(ABLATION_METHODS))
    out = OutputDir(Path(cfg.out), force)
    result = run_experiment(cfg, on_result=lambda r: log.info("finished %s seed %d", r.method, r.seed_index))
    _write_experiment(out, result)
    table = ablation_table(result)
    out.path("ablation.txt").write_text(table)
    print(table, end="")
    out.finish(cfg)
    return 0


def sweep_matrix(results: dict, sweep: SweepConfig, metric: str) -> str:
    """Rows are delta_k values, columns delta_u values; skipped cells are ``nan``."""
    lines = [f"# rows: delta_k, columns: delta_u, cells: final {metric} (seed mean)"]
    lines.append("delta_k\\delta_u " + " ".join(format(float(du), "g") for du in sweep.delta_u))
    for dk in sweep.delta_k:
        cells = []
        for du in sweep.delta_u:
            res = results.get((float(dk), float(du)))
            if res is None:
                cells.append("nan")
            else:
                row = final_rows(res.aggregate)["ebosal"]
                cells.append(format(row.mean[metric], ".6g"))
        lines.append(format(float(dk), "g") + " " + " ".join(cells))
    return "\n".join(lines) + "\n"


def cmd_sweep(cfg: ExperimentConfig, force: bool = False) -> int:
    if cfg.sweep is None:
        raise ConfigError("sweep: the config has no 'sweep' section")
    out = OutputDir(Path(cfg.out), force)
    results = run_sweep(cfg, on_point=lambda p, _: log.info("finished delta_k=%g delta_u=%g", *p))
    for (dk, du), res in results.items():
        _write_experiment(out, res, prefix=f"points/dk{dk:g}_du{du:g}/")
    for name, metric in DAT_METRICS.items():
        out.path(f"sweep_{name}.dat").write_text(sweep_matrix(results, cfg.sweep, metric))
    for (dk, du), res in results.items():
        print(f"delta_k={dk:g} delta_u={du:g}  " + summary_line(final_rows(res.aggregate)["ebosal"]))
    out.finish(cfg)
    return 0


COMMANDS = {"run": cmd_run, "ablate": cmd_ablate, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ebosal", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("run", "run the configured methods over all seeds"),
        ("ablate", "compare ebosal, its two ablations and both baselines"),
        ("sweep", "run ebosal over the delta_k x delta_u grid"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="YAML config file (defaults apply when omitted)")
        p.add_argument("--seed", type=int, help="master seed (overrides the file)")
        p.add_argument("--out", help="output directory (overrides the file)")
        p.add_argument("--method", action="append", choices=METHODS, help="method to run; repeatable")
        p.add_argument("--jobs", type=int, help="parallel worker processes")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key, e.g. --set al.budget=10")
        p.add_argument("--force", action="store_true", help="write into a non-empty output directory")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = parse_config(args.config, args.overrides, seed=args.seed, out=args.out, methods=args.method, jobs=args.jobs)
    except ConfigError as exc:
        print(f"ebosal: config error: {exc}", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](cfg, force=args.force)
    except ConfigError as exc:
        print(f"ebosal: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # any run failure: keep partial output, report, exit nonzero
        log.exception("run failed")
        print(f"ebosal: {args.command} failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
