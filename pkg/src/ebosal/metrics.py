"""Per-cycle metrics, seed aggregation and the CSV / .dat writers."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata


@dataclass
class CycleReport:
    cycle: int
    seed: int
    method: str
    n_labeled: int
    spent_budget: int
    test_accuracy: float
    query_precision_cycle: float
    query_precision_cumulative: float
    energy_auroc: float
    mean_E_known: float
    mean_E_unknown: float
    fallback_engaged: bool
    truncated: bool = False


REPORT_COLUMNS = [f.name for f in fields(CycleReport)]
METRICS = (
    "test_accuracy",
    "query_precision_cycle",
    "query_precision_cumulative",
    "energy_auroc",
    "mean_E_known",
    "mean_E_unknown",
    "n_labeled",
    "spent_budget",
)


def accuracy(logits: np.ndarray, targets: np.ndarray) -> float:
    """Top-1 accuracy; ``argmax`` ties resolve to the lowest class index."""
    logits = np.asarray(logits)
    targets = np.asarray(targets)
    if targets.size == 0:
        raise ValueError("accuracy over an empty test set")
    return float(np.mean(np.argmax(logits, axis=1) == targets))


def auroc(scores: Mapping[int, float], labels: Mapping[int, bool]) -> float:
    """P(random unknown scores above random known), ties counted 1/2.

    ``labels[id]`` is True for unknown (positive) samples. NaN when one side
    is empty.
    """
    ids = list(scores)
    s = np.array([scores[i] for i in ids], dtype=np.float64)
    pos = np.array([bool(labels[i]) for i in ids])
    return auroc_arrays(s, pos)


def auroc_arrays(scores: np.ndarray, positive: np.ndarray) -> float:
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return math.nan
    ranks = rankdata(scores)  # average ranks for ties
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".6g")
    return str(v)


def write_csv(reports: Iterable[CycleReport], path) -> None:
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_COLUMNS)
            for r in reports:
                w.writerow([_fmt(getattr(r, c)) for c in REPORT_COLUMNS])
    except OSError as exc:
        raise OSError(f"cannot write report CSV to {path}: {exc.strerror or exc}") from exc


def read_csv(path) -> list[CycleReport]:
    out = []
    types = {f.name: f.type for f in fields(CycleReport)}
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            kw = {}
            for name, raw in row.items():
                t = types[name]
                if t == "int":
                    kw[name] = int(raw)
                elif t == "bool":
                    kw[name] = raw == "1"
                elif t == "float":
                    kw[name] = float(raw)
                else:
                    kw[name] = raw
            out.append(CycleReport(**kw))
    return out


@dataclass
class AggregateRow:
    method: str
    cycle: int
    n_seeds: int
    mean: dict[str, float]
    sd: dict[str, float]
    auroc_dropped: int


def _mean_sd(values: Sequence[float]) -> tuple[float, float]:
    if not values:
        return math.nan, math.nan
    arr = np.asarray(values, dtype=np.float64)
    sd = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), sd


def aggregate(reports: Iterable[CycleReport]) -> list[AggregateRow]:
    """Mean and sample sd (n-1) per (method, cycle); NaN values are dropped."""
    groups: dict[tuple[str, int], list[CycleReport]] = {}
    for r in reports:
        groups.setdefault((r.method, r.cycle), []).append(r)
    rows = []
    for (method, cycle) in sorted(groups):
        g = groups[(method, cycle)]
        mean, sd = {}, {}
        dropped = 0
        for m in METRICS:
            vals = [float(getattr(r, m)) for r in g]
            kept = [v for v in vals if not math.isnan(v)]
            if m == "energy_auroc":
                dropped = len(vals) - len(kept)
            mean[m], sd[m] = _mean_sd(kept)
        rows.append(AggregateRow(method, cycle, len(g), mean, sd, dropped))
    return rows


AGGREGATE_COLUMNS = ["method", "cycle", "n_seeds"] + [f"{m}_{s}" for m in METRICS for s in ("mean", "sd")] + [
    "auroc_dropped"
]


def write_aggregate_csv(rows: Iterable[AggregateRow], path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AGGREGATE_COLUMNS)
        for r in rows:
            vals = [r.method, r.cycle, r.n_seeds]
            for m in METRICS:
                vals += [r.mean[m], r.sd[m]]
            w.writerow([_fmt(v) for v in vals] + [str(r.auroc_dropped)])


def write_dat(rows: Sequence[AggregateRow], metric: str, path) -> None:
    """Whitespace columns ``cycle <method>_mean <method>_sd ...`` for plotting."""
    methods = sorted({r.method for r in rows})
    cycles = sorted({r.cycle for r in rows})
    by_key = {(r.method, r.cycle): r for r in rows}
    lines = ["# cycle " + " ".join(f"{m}_mean {m}_sd" for m in methods)]
    for c in cycles:
        cells = [str(c)]
        for m in methods:
            r = by_key.get((m, c))
            cells += [_fmt(r.mean[metric]), _fmt(r.sd[metric])] if r else ["nan", "nan"]
        lines.append(" ".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def final_rows(rows: Iterable[AggregateRow]) -> dict[str, AggregateRow]:
    """Last-cycle aggregate row per method."""
    out: dict[str, AggregateRow] = {}
    for r in rows:
        if r.method not in out or r.cycle > out[r.method].cycle:
            out[r.method] = r
    return out


def report_dict(r: CycleReport) -> dict:
    return asdict(r)
