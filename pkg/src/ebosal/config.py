"""Experiment configuration: YAML loading, overrides, and the multi-run driver.

A config file is a nested mapping whose sections mirror the dataclasses
below. Every key is checked; a typo such as ``al.bugdet`` is a
:class:`ConfigError` that names the offending key path.
"""

from __future__ import annotations

import dataclasses
import logging
import typing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import yaml

from .alcycle import METHODS, ALConfig, derive_seed, run_single
from .datagen import ConfigError, GeneratorSpec, OpenSetTask, load_csv_task, make_task
from .metrics import AggregateRow, CycleReport, aggregate

log = logging.getLogger(__name__)


@dataclass
class TaskConfig:
    """Synthetic-task parameters, or a CSV file plus its known classes."""

    n_classes: int = 20
    dim: int = 8
    n_train_per_class: int = 150
    n_test_per_class: int = 50
    kind: str = "gaussian"
    box: float = 3.0
    sigma: float = 1.0
    sigma_spread: float = 0.0
    mismatch_ratio: float = 0.3
    seed: int = 0
    csv: str | None = None
    known_classes: list[int] | None = None
    test_fraction: float = 0.25

    def generator(self) -> GeneratorSpec:
        return GeneratorSpec(
            n_classes=self.n_classes,
            dim=self.dim,
            n_train_per_class=self.n_train_per_class,
            n_test_per_class=self.n_test_per_class,
            kind=self.kind,
            box=self.box,
            sigma=self.sigma,
            sigma_spread=self.sigma_spread,
        )

    def validate(self) -> None:
        if self.csv is not None:
            if not self.known_classes:
                raise ConfigError("task.known_classes is required when task.csv is set")
            return
        self.generator().validate()
        if not 0 < self.mismatch_ratio <= 1:
            raise ConfigError(f"task.mismatch_ratio must be in (0, 1], got {self.mismatch_ratio}")

    def build(self) -> OpenSetTask:
        if self.csv is not None:
            return load_csv_task(self.csv, self.known_classes, self.test_fraction, self.seed)
        return make_task(self.generator(), self.mismatch_ratio, self.seed)


@dataclass
class SweepConfig:
    delta_k: list[float] = field(default_factory=lambda: [-8.0, -4.0, -2.0])
    delta_u: list[float] = field(default_factory=lambda: [-1.5, -1.0, -0.5])

    def validate(self) -> None:
        if not self.delta_k or not self.delta_u:
            raise ConfigError("sweep.delta_k and sweep.delta_u must be non-empty")

    def points(self) -> list[tuple[float, float]]:
        """Grid points with delta_k < delta_u; the rest are logged and skipped."""
        out = []
        for dk in self.delta_k:
            for du in self.delta_u:
                if dk < du:
                    out.append((float(dk), float(du)))
                else:
                    log.warning("sweep: skipping delta_k=%g, delta_u=%g (needs delta_k < delta_u)", dk, du)
        return out


@dataclass
class ExperimentConfig:
    task: TaskConfig = field(default_factory=TaskConfig)
    al: ALConfig = field(default_factory=ALConfig)
    seed: int = 0  # master seed
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])  # seed indices
    methods: list[str] = field(default_factory=lambda: ["ebosal", "random", "entropy"])
    out: str = "runs/default"
    jobs: int = 1
    sweep: SweepConfig | None = None

    def validate(self) -> None:
        self.task.validate()
        self.al.validate()
        if not self.seeds:
            raise ConfigError("seeds must list at least one seed index")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"seeds contains duplicates: {self.seeds}")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"methods: unknown method {m!r} (choose from {', '.join(METHODS)})")
        if not self.methods:
            raise ConfigError("methods must list at least one method")
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")
        if self.sweep is not None:
            self.sweep.validate()

    def run_seed(self, seed_index: int) -> int:
        """Per-run seed from (master seed, seed index); shared by every method."""
        return derive_seed(self.seed, seed_index)

    def method_config(self, method: str) -> ALConfig:
        return replace(self.al, method=method)


# ---------------------------------------------------------------- loading


def _strip_optional(tp):
    if typing.get_origin(tp) is typing.Union or type(tp).__name__ == "UnionType":
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if len(args) == 1:
            return args[0], True
    return tp, False


def _coerce(value: Any, tp, path: str):
    tp, optional = _strip_optional(tp)
    if value is None:
        if optional:
            return None
        raise ConfigError(f"{path}: null is not allowed here")
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path)
    origin = typing.get_origin(tp)
    if origin in (list, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        (inner, *_) = typing.get_args(tp) or (Any,)
        items = [_coerce(v, inner, f"{path}[{i}]") for i, v in enumerate(value)]
        return tuple(items) if origin is tuple else items
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    return value


def _build(cls, data: Any, path: str = ""):
    if not isinstance(data, Mapping):
        raise ConfigError(f"{path or '<root>'}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - names)
    if unknown:
        where = ", ".join(f"{path}.{k}" if path else str(k) for k in unknown)
        raise ConfigError(f"unknown config key: {where}")
    kwargs = {k: _coerce(v, hints[k], f"{path}.{k}" if path else k) for k, v in data.items()}
    return cls(**kwargs)


def to_dict(obj) -> dict:
    """Plain nested dict (lists, not tuples) suitable for YAML dumping."""

    def plain(v):
        if isinstance(v, tuple):
            return [plain(x) for x in v]
        if isinstance(v, list):
            return [plain(x) for x in v]
        if isinstance(v, dict):
            return {k: plain(x) for k, x in v.items()}
        return v

    return plain(dataclasses.asdict(obj))


def parse_override(text: str) -> tuple[list[str], Any]:
    """``al.budget=10`` -> (["al", "budget"], 10); the value is parsed as YAML."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like key.path=value")
    key, raw = text.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"override {text!r} has an empty key")
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {key}: cannot parse value {raw!r}: {exc}") from exc
    return parts, value


def _apply(data: dict, parts: Sequence[str], value) -> None:
    node = data
    for p in parts[:-1]:
        nxt = node.get(p)
        if nxt is None:
            nxt = node[p] = {}
        if not isinstance(nxt, dict):
            raise ConfigError(f"override {'.'.join(parts)}: {p} is not a section")
        node = nxt
    node[parts[-1]] = value


def parse_config(
    path: str | Path | None = None,
    overrides: Sequence[str] = (),
    **flags,
) -> ExperimentConfig:
    """Load a YAML config (or defaults when ``path`` is None) and apply overrides.

    ``overrides`` are ``key.path=value`` strings; keyword ``flags`` with a
    non-None value (``seed``, ``out``, ``methods``, ``jobs``) win over both.
    """
    data: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            loaded = yaml.safe_load(p.read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"{p}: YAML parse error: {exc}") from exc
        if loaded is not None:
            if not isinstance(loaded, dict):
                raise ConfigError(f"{p}: top level must be a mapping")
            data = loaded
    for text in overrides:
        _apply(data, *parse_override(text))
    for key, value in flags.items():
        if value is not None:
            _apply(data, [key], value)
    cfg = _build(ExperimentConfig, data)
    cfg.validate()
    return cfg


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False)


# ---------------------------------------------------------------- running


@dataclass
class RunResult:
    method: str
    seed_index: int
    reports: list[CycleReport]


@dataclass
class ExperimentResult:
    runs: list[RunResult]
    aggregate: list[AggregateRow]

    def reports(self, method: str | None = None) -> list[CycleReport]:
        return [r for run in self.runs if method in (None, run.method) for r in run.reports]


def _one_run(task: OpenSetTask, al: ALConfig, seed_index: int, run_seed: int) -> RunResult:
    return RunResult(al.method, seed_index, run_single(task, al, seed_index, run_seed))


def run_experiment(
    cfg: ExperimentConfig,
    task: OpenSetTask | None = None,
    on_result: Callable[[RunResult], None] | None = None,
) -> ExperimentResult:
    """Every (method, seed) run on one task, then per-(method, cycle) aggregates.

    Results are returned in (method, seed) order whatever ``cfg.jobs`` is, so
    output never depends on scheduling.
    """
    cfg.validate()
    task = task if task is not None else cfg.task.build()
    jobs = [(m, s) for m in cfg.methods for s in cfg.seeds]
    args = [(task, cfg.method_config(m), s, cfg.run_seed(s)) for m, s in jobs]
    runs: list[RunResult] = []
    if cfg.jobs == 1 or len(args) == 1:
        for a in args:
            res = _one_run(*a)
            if on_result:
                on_result(res)
            runs.append(res)
    else:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            futures = [pool.submit(_one_run, *a) for a in args]
            for fut in futures:
                res = fut.result()
                if on_result:
                    on_result(res)
                runs.append(res)
    all_reports = [r for run in runs for r in run.reports]
    return ExperimentResult(runs, aggregate(all_reports))


def run_sweep(
    cfg: ExperimentConfig,
    task: OpenSetTask | None = None,
    method: str = "ebosal",
    on_point: Callable[[tuple[float, float], ExperimentResult], None] | None = None,
) -> dict[tuple[float, float], ExperimentResult]:
    """One ``method`` experiment per valid (delta_k, delta_u) grid point."""
    cfg.validate()
    sweep = cfg.sweep or SweepConfig()
    task = task if task is not None else cfg.task.build()
    out: dict[tuple[float, float], ExperimentResult] = {}
    for dk, du in sweep.points():
        margins = replace(cfg.al.margins, delta_k=dk, delta_u=du)
        point_cfg = replace(cfg, al=replace(cfg.al, margins=margins), methods=[method])
        out[(dk, du)] = res = run_experiment(point_cfg, task)
        if on_point:
            on_point((dk, du), res)
    return out
